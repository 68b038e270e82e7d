//! Brute-force references and small fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;
pub mod module_grads;

use adavsr::synth::CorpusSpec;
use adavsr::{ExperimentConfig, Tensor};

/// `-log` of the summed probability of every length-`T` path that collapses
/// to `target`, by enumerating all `V^T` paths.
pub fn brute_force_ctc(log_probs: &Tensor<f64>, target: &[usize], blank: usize) -> f64 {
    let (t, v) = (log_probs.dim(0), log_probs.dim(1));
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path, blank) == target {
            total += path.iter().enumerate().map(|(i, &s)| log_probs.at(&[i, s])).sum::<f64>().exp();
        }
        // odometer increment
        let mut i = 0;
        while i < t && path[i] + 1 == v {
            path[i] = 0;
            i += 1;
        }
        if i == t {
            break;
        }
        path[i] += 1;
    }
    -total.ln()
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Plain recursive Levenshtein distance.
pub fn brute_force_edit(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_force_edit(ra, rb) + usize::from(x != y);
            let del = brute_force_edit(ra, b) + 1;
            let ins = brute_force_edit(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every sequence over `0..symbols` of length at most `max_len`.
pub fn all_sequences(symbols: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..symbols {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Short utterances on a small corpus, for pipeline tests that train.
pub fn tiny_corpus(n_samples: usize) -> CorpusSpec {
    CorpusSpec {
        n_samples,
        max_words: 1,
        max_word_len: 2,
        frames: 8,
        ..CorpusSpec::default()
    }
}

/// A narrow model that trains in seconds.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        c1: 8,
        d1: 8,
        d_att: 4,
        encoder_ff: 16,
        decoder_ff: 16,
        epochs: 2,
        batch_size: 2,
        warmup: 10,
        ..ExperimentConfig::default()
    }
}
