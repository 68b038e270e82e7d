//! Levenshtein alignment and word/character error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of an optimal unit-cost alignment of `hyp` against `reference` and
/// the substitutions, deletions and insertions along it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.distance += o.distance;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
    }
}

/// Edit distance from `reference` to `hyp`. Deletions are reference tokens
/// missing from `hyp`, insertions are extra `hyp` tokens.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    // backtrace, preferring match/substitution, then deletion
    let mut counts = EditCounts {
        distance: d[n][m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            counts.substitutions += usize::from(reference[i - 1] != hyp[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Word and character error counts of one utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub word_errors: usize,
    pub words: usize,
    pub char_errors: usize,
    pub chars: usize,
}

impl ErrorTally {
    pub fn of(hyp: &str, reference: &str) -> Result<Self> {
        let ref_words: Vec<&str> = reference.split_whitespace().collect();
        let ref_chars: Vec<char> = reference.chars().collect();
        if ref_words.is_empty() {
            return Err(Error::Metric("empty reference".into()));
        }
        let hyp_words: Vec<&str> = hyp.split_whitespace().collect();
        let hyp_chars: Vec<char> = hyp.chars().collect();
        Ok(Self {
            word_errors: edit_distance(&ref_words, &hyp_words).distance,
            words: ref_words.len(),
            char_errors: edit_distance(&ref_chars, &hyp_chars).distance,
            chars: ref_chars.len(),
        })
    }

    pub fn add(&mut self, o: &Self) {
        self.word_errors += o.word_errors;
        self.words += o.words;
        self.char_errors += o.char_errors;
        self.chars += o.chars;
    }

    /// `(WER %, CER %)`.
    pub fn rates(&self) -> Result<(f64, f64)> {
        if self.words == 0 || self.chars == 0 {
            return Err(Error::Metric("no reference tokens".into()));
        }
        Ok((
            100.0 * self.word_errors as f64 / self.words as f64,
            100.0 * self.char_errors as f64 / self.chars as f64,
        ))
    }
}

/// `(WER %, CER %)` of one hypothesis. Characters include spaces.
pub fn wer_cer(hyp: &str, reference: &str) -> Result<(f64, f64)> {
    ErrorTally::of(hyp, reference)?.rates()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitten_sitting() {
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        let c = edit_distance(&a, &b);
        assert_eq!(c.distance, 3);
        assert_eq!(c.substitutions + c.deletions + c.insertions, 3);
        assert_eq!(c.insertions, 1);
    }

    #[test]
    fn deletions_and_rates() {
        let c = edit_distance(&['a', 'b', 'c'], &[]);
        assert_eq!((c.distance, c.deletions), (3, 3));
        assert_eq!(wer_cer("a", "a b").unwrap().0, 50.0);
        assert_eq!(wer_cer("x y z", "a").unwrap().0, 300.0);
        assert!(matches!(wer_cer("a", " "), Err(Error::Metric(_))));
    }
}
