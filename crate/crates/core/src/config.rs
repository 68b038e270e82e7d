//! Experiment configuration as flat `key = value` text.
//!
//! Values are JSON scalars. Keys whose value is text take the rest of the
//! line verbatim; they are written as quoted JSON only when that would be
//! ambiguous (empty, padded, or starting with a quote).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::seq::{DecoderConfig, EncoderConfig, DEFAULT_LAMBDA, LABEL_SMOOTHING};
use crate::synth::{CorpusSpec, OcclusionSpec, Snr, SpecAugmentSpec};
use crate::tbsm::DEFAULT_TAU;

pub const SEED_ENV: &str = "ADAVSR_SEED";

/// Which audio encoding feeds the two audio-facing modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Time-domain stream into both modules.
    A1,
    /// Frequency-domain stream into both modules.
    A2,
    /// Time-domain into CMNSM, frequency-domain into AVRM.
    A3,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::A1 => "a1",
            Encoding::A2 => "a2",
            Encoding::A3 => "a3",
        })
    }
}

/// A comma-separated list stored as one string value.
#[derive(Clone, Debug, PartialEq)]
pub struct CommaList<T>(pub Vec<T>);

impl<T: fmt::Display> fmt::Display for CommaList<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(T::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl<T: FromStr> FromStr for CommaList<T>
where
    T::Err: fmt::Display,
{
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(|e| Error::config(format!("bad list item {p:?}: {e}"))))
            .collect::<Result<Vec<T>>>()
            .map(CommaList)
    }
}

impl<T: fmt::Display> Serialize for CommaList<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, T: FromStr> Deserialize<'de> for CommaList<T>
where
    T::Err: fmt::Display,
{
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // a single number arrives as a JSON number rather than a string
        let v = Value::deserialize(d)?;
        let text = match v {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("expected a list, got {other}"))),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    // front end and modules
    /// Channels of every encoder output; must equal `d1`.
    pub c1: usize,
    pub d1: usize,
    pub k: usize,
    pub d_att: usize,
    pub tau: f64,
    pub avrm: bool,
    pub cmnsm: bool,
    pub tbsm: bool,
    pub encoding: Encoding,

    // back end, at width d1 / 2
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_kernel: usize,
    pub encoder_ff: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ff: usize,
    pub lambda: f64,
    pub label_smoothing: f64,

    // optimisation
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_scale: f64,
    pub warmup: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub curriculum: bool,

    // augmentation, training only
    pub train_snrs: CommaList<Snr>,
    pub occlusion_frame_fraction: f64,
    pub occlusion_patch_fraction: f64,
    pub time_mask: usize,
    pub cutout_bands: usize,
    pub cutout_frames: usize,

    // evaluation
    pub eval_snrs: CommaList<Snr>,

    // data
    pub train_data: String,
    pub test_data: String,
    pub corpus_samples: usize,
    pub corpus_seed: u64,
    pub corpus_harmonics: usize,
    pub corpus_distractor: bool,
    pub corpus_pixel_noise: f64,
    pub test_fraction: f64,

    // ablation
    pub ablation_seeds: CommaList<u64>,
    pub ablation_snr: Snr,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        Self {
            seed: 1,
            c1: 32,
            d1: 32,
            k: 9,
            d_att: 16,
            tau: DEFAULT_TAU,
            avrm: true,
            cmnsm: true,
            tbsm: true,
            encoding: Encoding::A3,
            encoder_layers: 1,
            encoder_heads: 2,
            encoder_kernel: 7,
            encoder_ff: 64,
            decoder_layers: 1,
            decoder_heads: 2,
            decoder_ff: 64,
            lambda: DEFAULT_LAMBDA,
            label_smoothing: LABEL_SMOOTHING,
            epochs: 14,
            batch_size: 4,
            lr_scale: 0.4,
            warmup: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 5.0,
            curriculum: true,
            train_snrs: CommaList(Snr::TRAINING.to_vec()),
            occlusion_frame_fraction: 0.0,
            occlusion_patch_fraction: 0.25,
            time_mask: 0,
            cutout_bands: 0,
            cutout_frames: 0,
            eval_snrs: CommaList(vec![Snr::Db(-5.0), Snr::Db(0.0), Snr::Db(5.0), Snr::Db(10.0), Snr::Clean]),
            train_data: String::new(),
            test_data: String::new(),
            corpus_samples: corpus.n_samples,
            corpus_seed: corpus.seed,
            corpus_harmonics: corpus.harmonics,
            corpus_distractor: corpus.distractor,
            corpus_pixel_noise: corpus.pixel_noise,
            test_fraction: 0.25,
            ablation_seeds: CommaList(vec![1, 2, 3]),
            ablation_snr: Snr::Db(-5.0),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 != self.d1 {
            return Err(Error::config(format!(
                "c1 = {} must equal d1 = {} (the residual mask is elementwise)",
                self.c1, self.d1
            )));
        }
        if self.d1 == 0 || self.d1 % 2 != 0 {
            return Err(Error::config(format!("d1 = {} must be even and positive", self.d1)));
        }
        crate::avrm::grid_side(self.k)?;
        if self.d_att == 0 {
            return Err(Error::config("d_att must be positive"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::config(format!("tau {} must be non-negative", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        self.encoder_config().validate()?;
        if self.decoder_heads == 0 || (self.d1 / 2) % self.decoder_heads != 0 {
            return Err(Error::config("decoder width d1 / 2 must be divisible by decoder_heads"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr_scale > 0.0) || !(self.clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::config("lr_scale, clip_norm and adam_eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        for f in [self.occlusion_frame_fraction, self.occlusion_patch_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config("occlusion fractions must lie in [0, 1]"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        if self.train_snrs.0.is_empty() {
            return Err(Error::config("train_snrs must name at least one condition (use clean for none)"));
        }
        if self.ablation_seeds.0.is_empty() {
            return Err(Error::config("ablation_seeds is empty"));
        }
        self.corpus_spec().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.encoder_layers,
            width: self.d1 / 2,
            heads: self.encoder_heads,
            kernel: self.encoder_kernel,
            ff: self.encoder_ff,
        }
    }

    pub fn decoder_config(&self, vocab: usize) -> DecoderConfig {
        DecoderConfig {
            layers: self.decoder_layers,
            width: self.d1 / 2,
            heads: self.decoder_heads,
            ff: self.decoder_ff,
            vocab,
        }
    }

    /// Corpus used when no data files are given (the ablation runner).
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_samples: self.corpus_samples,
            seed: self.corpus_seed,
            harmonics: self.corpus_harmonics,
            distractor: self.corpus_distractor,
            pixel_noise: self.corpus_pixel_noise,
            ..CorpusSpec::default()
        }
    }

    pub fn occlusion(&self) -> OcclusionSpec {
        OcclusionSpec {
            frame_fraction: self.occlusion_frame_fraction,
            patch_fraction: self.occlusion_patch_fraction,
        }
    }

    pub fn spec_augment(&self) -> SpecAugmentSpec {
        SpecAugmentSpec {
            time_mask: self.time_mask,
            cutout_bands: self.cutout_bands,
            cutout_frames: self.cutout_frames,
        }
    }

    /// Replaces the seed with `ADAVSR_SEED` when that is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Sorted `key = value` lines.
    pub fn to_text(&self) -> Result<String> {
        let Value::Object(map) = serde_json::to_value(self)? else {
            unreachable!("config serialises to an object")
        };
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            let value = match &map[key] {
                Value::String(s) if s.is_empty() || s.trim() != s || s.starts_with('"') => {
                    serde_json::to_string(s)?
                }
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        Ok(out)
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped
    /// and missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = Map::new();
        let string_keys = string_fields()?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            let parsed = serde_json::from_str::<Value>(raw).ok();
            let value = match parsed {
                Some(v @ Value::String(_)) => v,
                Some(v) if !string_keys.contains(&key.to_string()) => v,
                _ => Value::String(raw.to_string()),
            };
            if map.insert(key.to_string(), value).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_text(&text)
    }
}

/// Keys whose default value is a string; their bare values stay strings.
fn string_fields() -> Result<Vec<String>> {
    let Value::Object(map) = serde_json::to_value(ExperimentConfig::default())? else {
        unreachable!("config serialises to an object")
    };
    Ok(map.into_iter().filter(|(_, v)| v.is_string()).map(|(k, _)| k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.train_data = "data/train.bin".into();
        c.test_data = "true".into();
        c.corpus_seed = 0;
        c.tau = 0.1 + 0.2;
        c.eval_snrs = CommaList(vec![Snr::Db(-2.5), Snr::Clean]);
        let text = c.to_text().unwrap();
        assert!(text.contains("train_data = data/train.bin\n"));
        assert!(text.contains("test_data = true\n"));
        assert!(text.contains("ablation_snr = -5\n"));
        assert_eq!(ExperimentConfig::from_text(&text).unwrap(), c);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        assert!(ExperimentConfig::from_text("colour = red").is_err());
        assert!(ExperimentConfig::from_text("epochs 3").is_err());
        assert!(ExperimentConfig::from_text("epochs = many").is_err());
        let c = ExperimentConfig::from_text("# tiny\nepochs = 3\nablation_seeds = 4\n").unwrap();
        assert_eq!((c.epochs, c.ablation_seeds.0.clone()), (3, vec![4]));
    }
}
