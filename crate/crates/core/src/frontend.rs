//! Audio dual-stream encoders and the spatial visual encoder.
//!
//! The time-domain stream runs strided 1-D convolutions straight over the
//! waveform. The frequency-domain stream convolves a log-mel spectrogram,
//! replaces every 25-frame block with its mean and then picks one
//! spectrogram frame per video frame. The visual stream keeps the spatial
//! grid so that regions can be attended over later.

use std::sync::Arc;

use adavsr_tensor::nn::{Conv1d, Conv2d};
use adavsr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: usize = 16_000;
/// Audio samples per video frame at 25 fps.
pub const SAMPLES_PER_FRAME: usize = 640;
pub const AVERAGING_BLOCK: usize = 25;
/// Floor inside the log of the mel energies.
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MelSpec {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: usize,
}

impl Default for MelSpec {
    fn default() -> Self {
        Self {
            n_fft: 400,
            hop: 160,
            n_mels: 40,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl MelSpec {
    /// Spectrogram frames produced for a waveform of `len` samples.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.n_fft).then(|| (len - self.n_fft) / self.hop + 1)
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` band edges, evenly spaced on the mel scale from 0 to Nyquist.
fn mel_edges(spec: &MelSpec) -> Vec<f64> {
    let top = hz_to_mel(spec.sample_rate as f64 / 2.0);
    (0..spec.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (spec.n_mels + 1) as f64))
        .collect()
}

/// Centre frequency in Hz of each mel band.
pub fn mel_centers(spec: &MelSpec) -> Vec<f64> {
    mel_edges(spec)[1..=spec.n_mels].to_vec()
}

/// Triangular filters with unit peak, `[n_mels][n_fft / 2 + 1]`.
pub fn mel_filterbank(spec: &MelSpec) -> Vec<Vec<f64>> {
    let edges = mel_edges(spec);
    let bin_hz = spec.sample_rate as f64 / spec.n_fft as f64;
    (0..spec.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..spec.bins())
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Squared STFT magnitudes, `[frames][n_fft / 2 + 1]`, no centre padding.
pub fn power_spectrogram(wave: &[f64], spec: &MelSpec) -> Result<Vec<Vec<f64>>> {
    let frames = spec.frames(wave.len()).ok_or_else(|| {
        Error::input(format!("waveform of {} samples is shorter than n_fft = {}", wave.len(), spec.n_fft))
    })?;
    let window = hann(spec.n_fft);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(spec.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); spec.n_fft];
    let mut out = Vec::with_capacity(frames);
    for s in 0..frames {
        let chunk = &wave[s * spec.hop..s * spec.hop + spec.n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..spec.bins()].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// `log(mel · |STFT|² + 1e-6)` as `[n_mels, frames]`.
pub fn stft_logmel(wave: &[f64], spec: &MelSpec) -> Result<Tensor<f64>> {
    let power = power_spectrogram(wave, spec)?;
    let bank = mel_filterbank(spec);
    let frames = power.len();
    let mut data = vec![0.0; spec.n_mels * frames];
    for (m, filt) in bank.iter().enumerate() {
        for (s, p) in power.iter().enumerate() {
            let e: f64 = filt.iter().zip(p).map(|(a, b)| a * b).sum();
            data[m * frames + s] = (e + LOG_FLOOR).ln();
        }
    }
    Ok(Tensor::new(&[spec.n_mels, frames], data)?)
}

/// Scales a waveform to unit standard deviation; silence is left as is.
pub fn unit_variance(wave: &[f64]) -> Vec<f64> {
    let n = wave.len().max(1) as f64;
    let mean = wave.iter().sum::<f64>() / n;
    let var = wave.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return wave.to_vec();
    }
    let inv = var.sqrt().recip();
    wave.iter().map(|x| x * inv).collect()
}

/// Per-band mean and variance normalisation of a `[F, S]` log-mel, returned
/// time-major as `[S, F]`. Constant bands become zero.
pub fn cmvn(logmel: &Tensor<f64>) -> Result<Tensor<f64>> {
    if logmel.rank() != 2 {
        return Err(Error::input(format!("log-mel must be [F, S], got {:?}", logmel.shape())));
    }
    let (f, s) = (logmel.dim(0), logmel.dim(1));
    let mut out = vec![0.0; s * f];
    for band in 0..f {
        let row = logmel.row(band);
        let mean = row.iter().sum::<f64>() / s as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / s as f64;
        let inv = if var > 1e-12 { var.sqrt().recip() } else { 0.0 };
        for (t, &x) in row.iter().enumerate() {
            out[t * f + band] = (x - mean) * inv;
        }
    }
    Ok(Tensor::new(&[s, f], out)?)
}

/// Source frame for each of `out_len` targets when resampling `in_len`
/// frames by nearest neighbour.
pub fn nearest_indices(in_len: usize, out_len: usize) -> Vec<usize> {
    (0..out_len)
        .map(|t| (((2 * t + 1) * in_len) / (2 * out_len)).min(in_len - 1))
        .collect()
}

/// Time-domain stream: waveform `[T0 * 640, 1]` to `[T0, C1]`.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    stem: Conv1d,
    reduce: Conv1d,
    blocks: Vec<(Conv1d, Conv1d)>,
}

impl TimeEncoder {
    pub const STEM_CHANNELS: usize = 16;

    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, c1: usize) -> Self {
        let stem_c = Self::STEM_CHANNELS;
        // 15 ms windows every 40 samples give 16 steps per video frame
        let stem = Conv1d::new(store, rng, &format!("{name}.stem"), 1, stem_c, 240, 40, 100, true);
        let reduce = Conv1d::new(store, rng, &format!("{name}.reduce"), stem_c, c1, 16, 16, 0, true);
        let blocks = (0..2)
            .map(|i| {
                (
                    Conv1d::new(store, rng, &format!("{name}.res{i}.a"), c1, c1, 3, 1, 1, true),
                    Conv1d::new(store, rng, &format!("{name}.res{i}.b"), c1, c1, 3, 1, 1, true),
                )
            })
            .collect();
        Self { stem, reduce, blocks }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, wave: Var) -> Result<Var> {
        let shape = g.shape(wave);
        if shape.len() != 2 || shape[1] != 1 || shape[0] % SAMPLES_PER_FRAME != 0 {
            return Err(Error::input(format!(
                "waveform must be [n * {SAMPLES_PER_FRAME}, 1], got {shape:?}"
            )));
        }
        let h = g.relu(self.stem.forward(g, wave)?)?;
        let mut h = g.relu(self.reduce.forward(g, h)?)?;
        for (a, b) in &self.blocks {
            let inner = g.relu(a.forward(g, h)?)?;
            let inner = b.forward(g, inner)?;
            h = g.relu(g.add(h, inner)?)?;
        }
        Ok(h)
    }
}

/// Frequency-domain stream output, with the averaged sequence kept for
/// inspection.
#[derive(Clone, Copy, Debug)]
pub struct FreqEncoding {
    /// `[S, C1]`, constant over each averaging block.
    pub averaged: Var,
    /// `[T1, C1]`.
    pub output: Var,
}

/// Frequency-domain stream: normalised log-mel `[S, F]` to `[T1, C1]`.
#[derive(Clone, Debug)]
pub struct FreqEncoder {
    conv: Conv1d,
    block: usize,
}

impl FreqEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        n_mels: usize,
        c1: usize,
    ) -> Self {
        Self {
            conv: Conv1d::new(store, rng, &format!("{name}.conv"), n_mels, c1, 3, 1, 0, true),
            block: AVERAGING_BLOCK,
        }
    }

    pub fn with_block(mut self, block: usize) -> Self {
        self.block = block;
        self
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, spec: Var, t1: usize) -> Result<FreqEncoding> {
        let shape = g.shape(spec);
        if shape.len() != 2 || shape[0] == 0 || t1 == 0 {
            return Err(Error::input(format!("spectrogram must be [S, F], got {shape:?}")));
        }
        let s = shape[0];
        // repeat the edge frames so a constant input stays constant
        let padded: Vec<usize> = std::iter::once(0).chain(0..s).chain(std::iter::once(s - 1)).collect();
        let x = g.gather_rows(spec, &padded)?;
        let h = g.relu(self.conv.forward(g, x)?)?;
        let averaged = g.block_average_repeat(h, self.block)?;
        let output = g.gather_rows(averaged, &nearest_indices(s, t1))?;
        Ok(FreqEncoding { averaged, output })
    }
}

/// Per-frame conv stack `[T, H, W, C0]` to `[T, C1, H/8, W/8]`.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    convs: Vec<Conv2d>,
}

impl VisualEncoder {
    pub const CHANNELS: [usize; 2] = [8, 16];

    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        c0: usize,
        c1: usize,
    ) -> Self {
        let [a, b] = Self::CHANNELS;
        let chans = [c0, a, b, c1];
        let convs = (0..3)
            .map(|i| Conv2d::new(store, rng, &format!("{name}.conv{i}"), chans[i], chans[i + 1], 3, 2, 1))
            .collect();
        Self { convs }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, frames: Var) -> Result<Var> {
        let shape = g.shape(frames);
        if shape.len() != 4 || shape[1] % 8 != 0 || shape[2] % 8 != 0 {
            return Err(Error::input(format!(
                "frames must be [T, H, W, C] with H and W multiples of 8, got {shape:?}"
            )));
        }
        let mut h = g.permute(frames, &[0, 3, 1, 2])?;
        for conv in &self.convs {
            h = g.relu(conv.forward(g, h)?)?;
        }
        Ok(h)
    }
}
