//! Synthetic audio-visual corpus and the corruptions used for training and
//! evaluation.
//!
//! Each letter has a harmonic tone (fundamental fixed per letter) and a
//! mouth shape (opening height and width fixed per letter). Letters that
//! share a tone class differ only by a small fundamental offset, which noise
//! hides, but their mouth heights differ; letters with the same mouth height
//! sit in different tone classes. The mouth sits in one cell of a 3 x 3
//! grid, chosen per utterance; with `distractor` set a second cell shows
//! unrelated shapes, so only the audio tells which cell is speaking.

use std::fmt;
use std::str::FromStr;

use adavsr_tensor::Tensor;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frontend::{stft_logmel, MelSpec, SAMPLES_PER_FRAME, SAMPLE_RATE};
use crate::vocab::Vocab;

/// Cells per side of the grid the mouth and distractor are placed on.
pub const GRID: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub letters: String,
    pub min_words: usize,
    pub max_words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_token_frames: usize,
    pub base_hz: f64,
    /// Spacing of the tone classes.
    pub step_hz: f64,
    /// Offset between letters of the same tone class.
    pub fine_hz: f64,
    pub tone_classes: usize,
    pub harmonics: usize,
    pub distractor: bool,
    pub pixel_noise: f64,
    pub mel: MelSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_samples: 512,
            seed: 7,
            letters: "abcdefgh".into(),
            min_words: 1,
            max_words: 3,
            min_word_len: 1,
            max_word_len: 3,
            frames: 24,
            height: 24,
            width: 24,
            min_token_frames: 2,
            base_hz: 200.0,
            step_hz: 150.0,
            fine_hz: 25.0,
            tone_classes: 4,
            harmonics: 3,
            distractor: true,
            pixel_noise: 0.05,
            mel: MelSpec::default(),
        }
    }
}

impl CorpusSpec {
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(&self.letters)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::config("word count range must be non-empty and start at 1 or more"));
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return Err(Error::config("word length range must be non-empty and start at 1 or more"));
        }
        if self.min_token_frames == 0 || self.min_token_frames * self.min_word_len > self.frames {
            return Err(Error::config("utterance frames cannot hold the shortest transcript"));
        }
        if self.height % (GRID * 8) != 0 || self.width % (GRID * 8) != 0 {
            return Err(Error::config(format!(
                "frame size {}x{} must be a multiple of {}",
                self.height,
                self.width,
                GRID * 8
            )));
        }
        let cell = self.height.min(self.width) / GRID;
        let too_big = (0..vocab.letters().len()).any(|j| {
            let (h, w) = mouth_shape(j);
            h > cell || w > cell
        });
        if too_big {
            return Err(Error::config("frame cells are too small for the mouth shapes"));
        }
        if self.tone_classes == 0 {
            return Err(Error::config("tone_classes must be positive"));
        }
        let n = vocab.letters().len();
        let freqs: Vec<f64> = (0..n).map(|j| self.letter_hz(j)).collect();
        if freqs.iter().enumerate().any(|(i, f)| freqs[..i].contains(f)) {
            return Err(Error::config("two letters share a fundamental"));
        }
        if self.base_hz <= 0.0 || freqs.iter().any(|&f| f <= 0.0 || f >= SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::config("letter frequencies must lie in (0, Nyquist)"));
        }
        if self.frames * SAMPLES_PER_FRAME < self.mel.n_fft {
            return Err(Error::config("utterances are shorter than one STFT window"));
        }
        Ok(())
    }

    /// Fundamental of letter `j` (0-based).
    pub fn letter_hz(&self, j: usize) -> f64 {
        let (class, rank) = (j % self.tone_classes, j / self.tone_classes);
        self.base_hz + self.step_hz * class as f64 + self.fine_hz * rank as f64
    }
}

/// Opening height and width of letter `j` (0-based).
pub fn mouth_shape(j: usize) -> (usize, usize) {
    (1 + 2 * ((j / 2) % 4), 2 + 2 * (j % 2) + 4 * (j / 8))
}

/// One utterance. Values are exactly representable in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    /// `[T0, H0, W0, 1]` in `[0, 1]`.
    pub frames: Tensor<f64>,
    /// `[T0 * 640]`.
    pub waveform: Vec<f64>,
    /// `[F, S]`.
    pub logmel: Tensor<f64>,
    pub transcript: Vec<usize>,
}

impl RawSample {
    pub fn num_frames(&self) -> usize {
        self.frames.dim(0)
    }
}

fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

/// Deterministic per `(spec.seed, index)`: each index owns its own stream.
pub fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn transcript(spec: &CorpusSpec, vocab: &Vocab, rng: &mut impl Rng) -> Vec<usize> {
    let n_letters = vocab.letters().len();
    let budget = spec.frames / spec.min_token_frames;
    let words = rng.gen_range(spec.min_words..=spec.max_words);
    let mut ids = Vec::new();
    for w in 0..words {
        let len = rng.gen_range(spec.min_word_len..=spec.max_word_len);
        let word: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=n_letters)).collect();
        let extra = usize::from(w > 0);
        if ids.len() + extra + word.len() > budget {
            break;
        }
        if w > 0 {
            ids.push(vocab.space());
        }
        ids.extend(word);
    }
    if ids.is_empty() {
        ids.push(rng.gen_range(1..=n_letters));
    }
    ids
}

/// Frame spans `[start, end)` covering all frames, each at least `min` long.
fn spans(tokens: usize, frames: usize, min: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut len = vec![min; tokens];
    for _ in 0..frames - min * tokens {
        len[rng.gen_range(0..tokens)] += 1;
    }
    let mut start = 0;
    len.into_iter()
        .map(|l| {
            let span = (start, start + l);
            start += l;
            span
        })
        .collect()
}

/// Draws letter `letter` in grid cell `cell`, shifted by `jitter` pixels
/// (clamped to the cell).
fn draw_mouth(frame: &mut [f64], spec: &CorpusSpec, cell: usize, letter: usize, jitter: (isize, isize)) {
    let side = spec.height / GRID;
    let (cy, cx) = ((cell / GRID) * side, (cell % GRID) * side);
    let (h, w) = mouth_shape(letter);
    let place = |slack: usize, shift: isize| ((slack / 2) as isize + shift).clamp(0, slack as isize) as usize;
    let (top, left) = (cy + place(side - h, jitter.0), cx + place(side - w, jitter.1));
    for y in top..top + h {
        for x in left..left + w {
            frame[y * spec.width + x] = 1.0;
        }
    }
}

/// Generates utterance `index` of the corpus described by `spec`.
pub fn synth_sample(spec: &CorpusSpec, index: usize) -> Result<RawSample> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let mut rng = sample_rng(spec.seed, index as u64);
    let ids = transcript(spec, &vocab, &mut rng);
    let token_spans = spans(ids.len(), spec.frames, spec.min_token_frames, &mut rng);

    let n = spec.frames * SAMPLES_PER_FRAME;
    let mut wave = vec![0.0; n];
    let ramp = 80;
    for (&id, &(start, end)) in ids.iter().zip(&token_spans) {
        if !vocab.is_letter(id) {
            continue;
        }
        let f0 = spec.letter_hz(id - 1);
        let phases: Vec<f64> = (0..spec.harmonics).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let (a, b) = (start * SAMPLES_PER_FRAME, end * SAMPLES_PER_FRAME);
        for (i, out) in wave[a..b].iter_mut().enumerate() {
            let t = (a + i) as f64 / SAMPLE_RATE as f64;
            let edge = i.min(b - a - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let mut s = 0.0;
            for (h, phase) in phases.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < 0.45 * SAMPLE_RATE as f64 {
                    s += (std::f64::consts::TAU * f * t + phase).sin() / (h + 1) as f64;
                }
            }
            *out = 0.3 * env * s;
        }
    }
    let wave: Vec<f64> = wave.into_iter().map(to_f32_grid).collect();

    let mouth_cell = rng.gen_range(0..GRID * GRID);
    let distractor_cell = (mouth_cell + rng.gen_range(1..GRID * GRID)) % (GRID * GRID);
    let n_letters = vocab.letters().len();
    let mut distractor = vec![None; spec.frames];
    if spec.distractor {
        let mut t = 0;
        while t < spec.frames {
            let run = rng.gen_range(spec.min_token_frames..=2 * spec.min_token_frames + 1);
            let shape = rng.gen_bool(0.8).then(|| rng.gen_range(0..n_letters));
            for slot in distractor.iter_mut().skip(t).take(run) {
                *slot = shape;
            }
            t += run;
        }
    }
    let per_frame = spec.height * spec.width;
    let mut pixels = vec![0.0; spec.frames * per_frame];
    for (&id, &(start, end)) in ids.iter().zip(&token_spans) {
        for t in start..end {
            let jitter = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
            let frame = &mut pixels[t * per_frame..(t + 1) * per_frame];
            if vocab.is_letter(id) {
                draw_mouth(frame, spec, mouth_cell, id - 1, jitter);
            }
            if let Some(letter) = distractor[t] {
                draw_mouth(frame, spec, distractor_cell, letter, jitter);
            }
        }
    }
    for p in pixels.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *p = to_f32_grid((*p + spec.pixel_noise * noise).clamp(0.0, 1.0));
    }
    let frames = Tensor::new(&[spec.frames, spec.height, spec.width, 1], pixels)?;
    let logmel = stft_logmel(&wave, &spec.mel)?.map(to_f32_grid);
    Ok(RawSample {
        frames,
        waveform: wave,
        logmel,
        transcript: ids,
    })
}

/// All `spec.n_samples` utterances, generated in parallel.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<RawSample>> {
    (0..spec.n_samples).into_par_iter().map(|i| synth_sample(spec, i)).collect()
}

/// Signal-to-noise condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Db(f64),
    Clean,
}

impl Snr {
    /// The training augmentation set.
    pub const TRAINING: [Snr; 6] = [
        Snr::Db(-5.0),
        Snr::Db(0.0),
        Snr::Db(5.0),
        Snr::Db(10.0),
        Snr::Db(15.0),
        Snr::Clean,
    ];
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Db(db) => write!(f, "{db}"),
            Snr::Clean => write!(f, "clean"),
        }
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("clean") || s.eq_ignore_ascii_case("inf") {
            return Ok(Snr::Clean);
        }
        let db: f64 = s.parse().map_err(|_| Error::input(format!("bad SNR {s:?}")))?;
        if !db.is_finite() {
            return Err(Error::input(format!("bad SNR {s:?}")));
        }
        Ok(Snr::Db(db))
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated list such as `-5,0,5,10,clean`.
pub fn parse_snr_list(s: &str) -> Result<Vec<Snr>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_snr_list(list: &[Snr]) -> String {
    list.iter().map(Snr::to_string).collect::<Vec<_>>().join(",")
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Adds white Gaussian noise scaled so that the realised noise sits exactly
/// `snr` below the signal power.
pub fn add_noise_snr(wave: &[f64], snr: Snr, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let Snr::Db(db) = snr else {
        return Ok(wave.to_vec());
    };
    let p_signal = power(wave);
    if p_signal <= 0.0 {
        return Err(Error::input("cannot set an SNR against a silent waveform"));
    }
    let noise: Vec<f64> = (0..wave.len()).map(|_| rng.sample(StandardNormal)).collect();
    let scale = (p_signal / (power(&noise) * 10f64.powf(db / 10.0))).sqrt();
    Ok(wave.iter().zip(&noise).map(|(s, n)| s + scale * n).collect())
}

/// Waveform and log-mel of `sample` under `snr`. The clean condition returns
/// the stored values untouched; otherwise the log-mel is recomputed from the
/// noisy waveform.
pub fn corrupt_audio(sample: &RawSample, snr: Snr, mel: &MelSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, Tensor<f64>)> {
    match snr {
        Snr::Clean => Ok((sample.waveform.clone(), sample.logmel.clone())),
        Snr::Db(_) => {
            let wave: Vec<f64> = add_noise_snr(&sample.waveform, snr, rng)?.into_iter().map(to_f32_grid).collect();
            let logmel = stft_logmel(&wave, mel)?.map(to_f32_grid);
            Ok((wave, logmel))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    /// Fraction of frames that receive a patch.
    pub frame_fraction: f64,
    /// Patch side as a fraction of the frame side.
    pub patch_fraction: f64,
}

impl OcclusionSpec {
    /// Patch height and width for an `h x w` frame.
    pub fn patch(&self, h: usize, w: usize) -> (usize, usize) {
        let side = |n: usize| ((self.patch_fraction * n as f64).round() as usize).min(n);
        (side(h), side(w))
    }
}

/// Zeroes a randomly placed patch in a seeded subset of frames
/// (`[T, H, W, C]`). Returns the number of occluded pixels.
pub fn occlude_frames(frames: &mut Tensor<f64>, spec: &OcclusionSpec, rng: &mut impl Rng) -> Result<usize> {
    let shape = frames.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::input(format!("frames must be [T, H, W, C], got {shape:?}")));
    }
    let (t, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if !(0.0..=1.0).contains(&spec.patch_fraction) || !(0.0..=1.0).contains(&spec.frame_fraction) {
        return Err(Error::input("occlusion fractions must lie in [0, 1]"));
    }
    let (ph, pw) = spec.patch(h, w);
    let chosen = (spec.frame_fraction * t as f64).round() as usize;
    if chosen == 0 || ph == 0 || pw == 0 {
        return Ok(0);
    }
    let data = frames.data_mut();
    let mut count = 0;
    for frame in sample(rng, t, chosen).into_vec() {
        let top = rng.gen_range(0..=h - ph);
        let left = rng.gen_range(0..=w - pw);
        for y in top..top + ph {
            for x in left..left + pw {
                for ch in 0..c {
                    data[((frame * h + y) * w + x) * c + ch] = 0.0;
                }
                count += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentSpec {
    /// Width in frames of the time band filled with the spectrogram mean.
    pub time_mask: usize,
    /// Frequency and time extent of the zeroed cutout patch.
    pub cutout_bands: usize,
    pub cutout_frames: usize,
}

/// Time masking and cutout on a `[F, S]` spectrogram. Returns the number of
/// time-masked cells and of cut-out cells.
pub fn spec_augment(logmel: &mut Tensor<f64>, spec: &SpecAugmentSpec, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if logmel.rank() != 2 {
        return Err(Error::input(format!("log-mel must be [F, S], got {:?}", logmel.shape())));
    }
    let (f, s) = (logmel.dim(0), logmel.dim(1));
    if spec.time_mask > s || spec.cutout_bands > f || spec.cutout_frames > s {
        return Err(Error::input("augmentation mask is wider than the spectrogram"));
    }
    let mut masked = 0;
    if spec.time_mask > 0 {
        let mean = logmel.sum() / logmel.numel() as f64;
        let start = rng.gen_range(0..=s - spec.time_mask);
        let data = logmel.data_mut();
        for band in 0..f {
            for t in start..start + spec.time_mask {
                data[band * s + t] = mean;
                masked += 1;
            }
        }
    }
    let mut cut = 0;
    if spec.cutout_bands > 0 && spec.cutout_frames > 0 {
        let b0 = rng.gen_range(0..=f - spec.cutout_bands);
        let t0 = rng.gen_range(0..=s - spec.cutout_frames);
        let data = logmel.data_mut();
        for band in b0..b0 + spec.cutout_bands {
            for t in t0..t0 + spec.cutout_frames {
                data[band * s + t] = 0.0;
                cut += 1;
            }
        }
    }
    Ok((masked, cut))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_tile_the_utterance() {
        let mut rng = sample_rng(1, 0);
        let s = spans(5, 24, 2, &mut rng);
        assert_eq!(s.first().unwrap().0, 0);
        assert_eq!(s.last().unwrap().1, 24);
        assert!(s.windows(2).all(|w| w[0].1 == w[1].0));
        assert!(s.iter().all(|(a, b)| b - a >= 2));
    }

    #[test]
    fn snr_parsing() {
        assert_eq!(parse_snr_list("-5, 0,clean").unwrap(), vec![Snr::Db(-5.0), Snr::Db(0.0), Snr::Clean]);
        assert!("loud".parse::<Snr>().is_err());
        assert_eq!(format_snr_list(&Snr::TRAINING), "-5,0,5,10,15,clean");
    }
}
