//! The full recognizer: three encoders, the optional enhancement modules,
//! fusion, conformer encoder with CTC head, and the attention decoder.

use adavsr_tensor::nn::Linear;
use adavsr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::avrm::Avrm;
use crate::cmnsm::{spatial_mean, Cmnsm};
use crate::config::{Encoding, ExperimentConfig};
use crate::error::{Error, Result};
use crate::frontend::{cmvn, unit_variance, FreqEncoder, TimeEncoder, VisualEncoder};
use crate::seq::{attention_loss, combined_loss, ctc_loss, ConformerEncoder, Decoder, ProjectF0, BLANK};
use crate::synth::RawSample;
use crate::tbsm::Tbsm;
use crate::vocab::Vocab;

/// Normalised network inputs for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[T, H, W, C]`.
    pub frames: Tensor<f64>,
    /// Unit-variance waveform `[T * 640, 1]`.
    pub wave: Tensor<f64>,
    /// Mean/variance normalised log-mel `[S, F]`.
    pub logmel: Tensor<f64>,
}

impl ModelInput {
    /// `logmel` is `[F, S]` as stored in a sample.
    pub fn new(frames: &Tensor<f64>, waveform: &[f64], logmel: &Tensor<f64>) -> Result<Self> {
        let wave = unit_variance(waveform);
        Ok(Self {
            frames: frames.clone(),
            wave: Tensor::new(&[wave.len(), 1], wave)?,
            logmel: cmvn(logmel)?,
        })
    }

    pub fn from_sample(s: &RawSample) -> Result<Self> {
        Self::new(&s.frames, &s.waveform, &s.logmel)
    }
}

/// Which stream each audio-facing slot receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stream {
    Time,
    Freq,
}

fn streams(encoding: Encoding) -> (Stream, Stream) {
    match encoding {
        Encoding::A1 => (Stream::Time, Stream::Time),
        Encoding::A2 => (Stream::Freq, Stream::Freq),
        Encoding::A3 => (Stream::Time, Stream::Freq),
    }
}

#[derive(Clone, Debug)]
pub struct AdAvsr {
    pub vocab: Vocab,
    pub encoding: Encoding,
    pub lambda: f64,
    pub label_smoothing: f64,
    pub visual: VisualEncoder,
    pub time: Option<TimeEncoder>,
    pub freq: Option<FreqEncoder>,
    pub cmnsm: Option<Cmnsm>,
    pub avrm: Option<Avrm>,
    /// Replaces AVRM when it is off: projection of the spatial mean.
    pub visual_proj: Option<Linear>,
    pub tbsm: Option<Tbsm>,
    pub project: ProjectF0,
    pub encoder: ConformerEncoder,
    pub ctc_head: Linear,
    pub decoder: Decoder,
}

/// Intermediate results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub audio: Var,
    pub visual: Var,
    pub fusion: Var,
    pub memory: Var,
    /// `[T1, V]`.
    pub ctc_log_probs: Var,
    pub region_weights: Option<Var>,
    pub noise_mask: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ctc: Var,
    pub attention: Var,
}

impl AdAvsr {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        cfg: &ExperimentConfig,
        vocab: Vocab,
        n_mels: usize,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (c1, d1) = (cfg.c1, cfg.d1);
        let (mask_stream, region_stream) = streams(cfg.encoding);
        let uses = |s: Stream| mask_stream == s || (cfg.avrm && region_stream == s);
        let visual = VisualEncoder::new(store, rng, "visual", 1, c1);
        let time = uses(Stream::Time).then(|| TimeEncoder::new(store, rng, "time", c1));
        let freq = uses(Stream::Freq).then(|| FreqEncoder::new(store, rng, "freq", n_mels, c1));
        let cmnsm = cfg.cmnsm.then(|| Cmnsm::new(store, rng, "cmnsm", c1, d1));
        let avrm = cfg.avrm.then(|| Avrm::new(store, rng, "avrm", c1, d1, cfg.k, cfg.d_att));
        let visual_proj = (!cfg.avrm).then(|| Linear::new(store, rng, "visual_proj", c1, d1, true));
        let tbsm = cfg.tbsm.then(|| Tbsm::new(store, rng, "tbsm", d1, cfg.tau));
        let project = ProjectF0::new(store, rng, "project", d1)?;
        let encoder = ConformerEncoder::new(store, rng, "encoder", &cfg.encoder_config())?;
        let ctc_head = Linear::new(store, rng, "ctc_head", d1 / 2, vocab.size(), true);
        let decoder = Decoder::new(store, rng, "decoder", &cfg.decoder_config(vocab.size()))?;
        Ok(Self {
            vocab,
            encoding: cfg.encoding,
            lambda: cfg.lambda,
            label_smoothing: cfg.label_smoothing,
            visual,
            time,
            freq,
            cmnsm,
            avrm,
            visual_proj,
            tbsm,
            project,
            encoder,
            ctc_head,
            decoder,
        })
    }

    fn stream<S: Scalar>(&self, g: &Graph<'_, S>, which: Stream, input: &ModelInput, t1: usize) -> Result<Var> {
        match which {
            Stream::Time => {
                let enc = self.time.as_ref().expect("time encoder built for this wiring");
                enc.forward(g, g.constant(input.wave.cast())?)
            }
            Stream::Freq => {
                let enc = self.freq.as_ref().expect("frequency encoder built for this wiring");
                Ok(enc.forward(g, g.constant(input.logmel.cast())?, t1)?.output)
            }
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, input: &ModelInput) -> Result<Forward> {
        let t1 = input.frames.dim(0);
        let fv = self.visual.forward(g, g.constant(input.frames.cast())?)?;
        let (mask_stream, region_stream) = streams(self.encoding);
        let f_a = self.stream(g, mask_stream, input, t1)?;
        if g.shape(f_a)[0] != t1 {
            return Err(Error::input(format!(
                "audio gives {} frames but video has {t1}",
                g.shape(f_a)[0]
            )));
        }
        let (audio, noise_mask) = match &self.cmnsm {
            Some(m) => {
                let out = m.forward(g, f_a, fv)?;
                (out.enhanced, Some(out.mask.m))
            }
            None => (f_a, None),
        };
        let (visual, region_weights) = match (&self.avrm, &self.visual_proj) {
            (Some(m), _) => {
                let query = if region_stream == mask_stream {
                    f_a
                } else {
                    self.stream(g, region_stream, input, t1)?
                };
                let out = m.forward(g, query, fv)?;
                (out.enhanced, Some(out.weights))
            }
            (None, Some(p)) => (p.forward(g, spatial_mean(g, fv)?)?, None),
            (None, None) => unreachable!("visual projection exists whenever AVRM is off"),
        };
        let fusion = match &self.tbsm {
            Some(m) => m.forward(g, audio, visual)?.fusion,
            None => g.concat(&[audio, visual], 1)?,
        };
        let memory = self.encoder.forward(g, self.project.forward(g, fusion)?)?;
        let ctc_log_probs = g.log_softmax(self.ctc_head.forward(g, memory)?, 1)?;
        Ok(Forward {
            audio,
            visual,
            fusion,
            memory,
            ctc_log_probs,
            region_weights,
            noise_mask,
        })
    }

    /// Hybrid loss for `transcript` (no BOS/EOS).
    pub fn loss<S: Scalar>(&self, g: &Graph<'_, S>, input: &ModelInput, transcript: &[usize]) -> Result<(Forward, LossParts)> {
        let fwd = self.forward(g, input)?;
        let ctc = ctc_loss(g, fwd.ctc_log_probs, transcript, BLANK)?;
        let mut dec_in = vec![self.vocab.bos()];
        dec_in.extend_from_slice(transcript);
        let mut dec_target = transcript.to_vec();
        dec_target.push(self.vocab.eos());
        let logits = self.decoder.forward(g, fwd.memory, &dec_in)?;
        let attention = attention_loss(g, logits, &dec_target, self.label_smoothing)?;
        let total = combined_loss(g, ctc, attention, self.lambda)?;
        Ok((fwd, LossParts { total, ctc, attention }))
    }

    /// Greedy CTC transcript.
    pub fn transcribe<S: Scalar>(&self, g: &Graph<'_, S>, input: &ModelInput) -> Result<Vec<usize>> {
        let fwd = self.forward(g, input)?;
        Ok(crate::seq::greedy_decode(&g.value(fwd.ctc_log_probs), BLANK))
    }
}

/// Named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Bumped whenever parameter names or shapes change.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub version: u32,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
}

impl ParamFile {
    pub fn capture<S: Scalar>(store: &ParamStore<S>) -> Self {
        let named = |name: &str, t: &Tensor<S>| NamedTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64()).collect(),
        };
        Self {
            version: CHECKPOINT_VERSION,
            params: store.iter().map(|(_, n, t)| named(n, t)).collect(),
            buffers: store.buffers().map(|(_, n, t)| named(n, t)).collect(),
        }
    }

    /// Overwrites every parameter and buffer of `store`; names and shapes
    /// must match exactly.
    pub fn restore<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::input(format!(
                "checkpoint format {} does not match this build ({CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.params.len() != store.len() || self.buffers.len() != store.buffers().count() {
            return Err(Error::input("checkpoint does not match the configured architecture"));
        }
        for p in &self.params {
            let id = store
                .find(&p.name)
                .ok_or_else(|| Error::input(format!("unknown parameter {}", p.name)))?;
            let value = Tensor::new(&p.shape, p.data.iter().map(|&v| S::lit(v)).collect())?;
            if value.shape() != store.get(id).shape() {
                return Err(Error::input(format!("parameter {} has shape {:?}", p.name, p.shape)));
            }
            *store.get_mut(id) = value;
        }
        for b in &self.buffers {
            let id = store
                .find_buffer(&b.name)
                .ok_or_else(|| Error::input(format!("unknown buffer {}", b.name)))?;
            let value = Tensor::new(&b.shape, b.data.iter().map(|&v| S::lit(v)).collect())?;
            if value.shape() != store.buffer(id).shape() {
                return Err(Error::input(format!("buffer {} has shape {:?}", b.name, b.shape)));
            }
            *store.buffer_mut(id) = value;
        }
        Ok(())
    }
}
