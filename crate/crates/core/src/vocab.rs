use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::BLANK;

/// Character vocabulary: blank, the letters, space, then BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    letters: Vec<char>,
}

impl Vocab {
    pub fn new(letters: &str) -> Result<Self> {
        let letters: Vec<char> = letters.chars().collect();
        if letters.is_empty() {
            return Err(Error::config("vocabulary needs at least one letter"));
        }
        for (i, c) in letters.iter().enumerate() {
            if c.is_whitespace() || letters[..i].contains(c) {
                return Err(Error::config(format!("bad or repeated letter {c:?}")));
            }
        }
        Ok(Self { letters })
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    pub fn blank(&self) -> usize {
        BLANK
    }

    pub fn space(&self) -> usize {
        self.letters.len() + 1
    }

    pub fn bos(&self) -> usize {
        self.letters.len() + 2
    }

    pub fn eos(&self) -> usize {
        self.letters.len() + 3
    }

    pub fn size(&self) -> usize {
        self.letters.len() + 4
    }

    pub fn is_letter(&self, id: usize) -> bool {
        (1..=self.letters.len()).contains(&id)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                if c == ' ' {
                    Ok(self.space())
                } else {
                    self.letters
                        .iter()
                        .position(|&l| l == c)
                        .map(|p| p + 1)
                        .ok_or_else(|| Error::input(format!("character {c:?} not in vocabulary")))
                }
            })
            .collect()
    }

    /// Text for ids; blank, BOS and EOS are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| {
                if id == self.space() {
                    Some(' ')
                } else if self.is_letter(id) {
                    Some(self.letters[id - 1])
                } else {
                    None
                }
            })
            .collect()
    }
}
