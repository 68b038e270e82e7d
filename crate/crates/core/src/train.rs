//! Training loop, evaluation under noise, checkpoints and reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use adavsr_tensor::optim::{noam_lr, Adam};
use adavsr_tensor::{BufferId, Graph, Mode, ParamGrads, ParamStore};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::ErrorTally;
use crate::model::{AdAvsr, ModelInput, ParamFile};
use crate::synth::{corrupt_audio, occlude_frames, sample_rng, spec_augment, CorpusSpec, RawSample, Snr};

/// Streams reserved for non-sample randomness, counted down from the top so
/// they never meet the per-sample streams.
const INIT_STREAM: u64 = u64::MAX;
const SHUFFLE_STREAM: u64 = u64::MAX - 1;
const EVAL_STREAM_BIT: u64 = 1 << 62;

fn augment_stream(epoch: usize, index: usize) -> u64 {
    ((epoch as u64) << 32) | index as u64
}

/// Fresh model with weights drawn from the config seed.
pub fn init_model(cfg: &ExperimentConfig, corpus: &CorpusSpec) -> Result<(AdAvsr, ParamStore<f64>)> {
    let mut store = ParamStore::new();
    let mut rng = sample_rng(cfg.seed, INIT_STREAM);
    let model = AdAvsr::new(cfg, corpus.vocab()?, corpus.mel.n_mels, &mut store, &mut rng)?;
    Ok((model, store))
}

/// Training input for one sample: random SNR from the training set,
/// SpecAugment and occlusion, all drawn from `rng`.
pub fn training_input(cfg: &ExperimentConfig, corpus: &CorpusSpec, sample: &RawSample, rng: &mut impl Rng) -> Result<ModelInput> {
    let snrs = &cfg.train_snrs.0;
    let snr = snrs[rng.gen_range(0..snrs.len())];
    let (wave, mut logmel) = corrupt_audio(sample, snr, &corpus.mel, rng)?;
    spec_augment(&mut logmel, &cfg.spec_augment(), rng)?;
    let mut frames = sample.frames.clone();
    occlude_frames(&mut frames, &cfg.occlusion(), rng)?;
    ModelInput::new(&frames, &wave, &logmel)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    /// Mean over the epoch's samples.
    pub loss: f64,
    pub ctc: f64,
    pub attention: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub param_count: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Loss curve without timing, so identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,steps,loss,ctc,attention,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.steps, e.loss, e.ctc, e.attention, e.lr
            ));
        }
        out
    }
}

pub struct Trained {
    pub model: AdAvsr,
    pub store: ParamStore<f64>,
    pub config: ExperimentConfig,
    pub corpus: CorpusSpec,
    pub report: TrainReport,
}

struct SampleResult {
    grads: ParamGrads<f64>,
    buffers: Vec<(BufferId, Vec<f64>)>,
    loss: f64,
    ctc: f64,
    attention: f64,
}

fn sample_step(
    cfg: &ExperimentConfig,
    corpus: &CorpusSpec,
    model: &AdAvsr,
    store: &ParamStore<f64>,
    sample: &RawSample,
    rng: &mut ChaCha8Rng,
) -> Result<SampleResult> {
    let input = training_input(cfg, corpus, sample, rng)?;
    let g = Graph::new(store, Mode::Train);
    let (_, parts) = model.loss(&g, &input, &sample.transcript)?;
    let (loss, ctc, attention) = (g.item(parts.total)?, g.item(parts.ctc)?, g.item(parts.attention)?);
    let grads = g.param_grads(parts.total)?;
    Ok(SampleResult {
        grads,
        buffers: g.take_buffer_updates(),
        loss,
        ctc,
        attention,
    })
}

/// Mean of the per-sample running-statistic updates, per buffer.
fn average_buffers(results: &[SampleResult], store: &mut ParamStore<f64>) {
    let mut sums: Vec<(BufferId, Vec<f64>, usize)> = Vec::new();
    for r in results {
        for (id, values) in &r.buffers {
            match sums.iter_mut().find(|(b, _, _)| b == id) {
                Some((_, acc, n)) => {
                    acc.iter_mut().zip(values).for_each(|(a, v)| *a += v);
                    *n += 1;
                }
                None => sums.push((*id, values.clone(), 1)),
            }
        }
    }
    let updates = sums
        .into_iter()
        .map(|(id, acc, n)| (id, acc.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    store.apply_buffer_updates(updates);
}

/// Minibatch training on `samples` with Adam and the Noam schedule.
/// Samples in a batch run on separate tapes in parallel; their results are
/// reduced in sample order so the outcome does not depend on scheduling.
pub fn train(cfg: &ExperimentConfig, corpus: &CorpusSpec, samples: &[RawSample]) -> Result<Trained> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let started = Instant::now();
    let (model, mut store) = init_model(cfg, corpus)?;
    let mut adam = Adam::new(&store, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut shuffle_rng = sample_rng(cfg.seed, SHUFFLE_STREAM);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    let d_model = cfg.d1 / 2;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if epoch == 0 && cfg.curriculum {
            order.sort_by_key(|&i| samples[i].transcript.len());
        } else {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut sum_loss, mut sum_ctc, mut sum_att) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = sample_rng(cfg.seed, augment_stream(epoch, i));
                    sample_step(cfg, corpus, &model, &store, &samples[i], &mut rng)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    e @ Error::Divergence { .. } => e,
                    e if e.is_numeric() => Error::Divergence {
                        epoch,
                        step: step + 1,
                        detail: e.to_string(),
                    },
                    e => e,
                })?;
            step += 1;
            let mut grads = ParamGrads::empty(store.len());
            for r in &results {
                if !(r.loss.is_finite() && r.grads.is_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        detail: format!("non-finite loss {} or gradient", r.loss),
                    });
                }
                grads.accumulate(&r.grads);
                sum_loss += r.loss;
                sum_ctc += r.ctc;
                sum_att += r.attention;
            }
            grads.scale(1.0 / results.len() as f64);
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            lr = noam_lr(cfg.lr_scale, d_model, cfg.warmup, step);
            adam.step(&mut store, &grads, lr);
            average_buffers(&results, &mut store);
        }
        let n = samples.len() as f64;
        epochs.push(EpochStats {
            epoch,
            steps: step,
            loss: sum_loss / n,
            ctc: sum_ctc / n,
            attention: sum_att / n,
            lr,
        });
    }
    let report = TrainReport {
        epochs,
        param_count: store.num_elements(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        model,
        store,
        config: cfg.clone(),
        corpus: corpus.clone(),
        report,
    })
}

/// One row of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub wer: f64,
    pub cer: f64,
    /// Absent for the average row.
    pub tally: Option<ErrorTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ConditionRow>,
    pub utterances: usize,
    pub param_count: usize,
}

impl EvalReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,wer,cer\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.condition, r.wer, r.cer));
        }
        out
    }
}

/// Conditions in report order: the noisy ones as listed, then clean once.
pub fn report_conditions(snrs: &[Snr]) -> Vec<Snr> {
    let mut out: Vec<Snr> = Vec::new();
    for &s in snrs {
        if s != Snr::Clean && !out.contains(&s) {
            out.push(s);
        }
    }
    out.push(Snr::Clean);
    out
}

/// Greedy-CTC error rates of `samples` under every condition plus clean, and
/// their average. No augmentation is applied; noise is seeded per
/// `(seed, condition, sample)`.
pub fn evaluate(
    model: &AdAvsr,
    store: &ParamStore<f64>,
    corpus: &CorpusSpec,
    samples: &[RawSample],
    snrs: &[Snr],
    seed: u64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::input("test set is empty"));
    }
    let conditions = report_conditions(snrs);
    let mut rows = Vec::with_capacity(conditions.len() + 1);
    for (c, &snr) in conditions.iter().enumerate() {
        let tallies: Vec<ErrorTally> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = sample_rng(seed, EVAL_STREAM_BIT | ((c as u64) << 32) | i as u64);
                let (wave, logmel) = corrupt_audio(s, snr, &corpus.mel, &mut rng)?;
                let input = ModelInput::new(&s.frames, &wave, &logmel)?;
                let g = Graph::new(store, Mode::Eval);
                let hyp = model.transcribe(&g, &input)?;
                ErrorTally::of(&model.vocab.decode(&hyp), &model.vocab.decode(&s.transcript))
            })
            .collect::<Result<_>>()?;
        let mut total = ErrorTally::default();
        tallies.iter().for_each(|t| total.add(t));
        let (wer, cer) = total.rates()?;
        rows.push(ConditionRow {
            condition: snr.to_string(),
            wer,
            cer,
            tally: Some(total),
        });
    }
    let n = rows.len() as f64;
    let (wer, cer) = rows.iter().fold((0.0, 0.0), |(w, c), r| (w + r.wer, c + r.cer));
    rows.push(ConditionRow {
        condition: "avg".into(),
        wer: wer / n,
        cer: cer / n,
        tally: None,
    });
    Ok(EvalReport {
        rows,
        utterances: samples.len(),
        param_count: store.num_elements(),
    })
}

/// Splits a corpus into train and test parts, the test part taken from the end.
pub fn split(samples: Vec<RawSample>, test_fraction: f64) -> Result<(Vec<RawSample>, Vec<RawSample>)> {
    let n_test = (samples.len() as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= samples.len() {
        return Err(Error::input(format!(
            "cannot split {} samples with test fraction {test_fraction}",
            samples.len()
        )));
    }
    let mut train = samples;
    let test = train.split_off(train.len() - n_test);
    Ok((train, test))
}

pub const CONFIG_FILE: &str = "config.txt";
pub const CORPUS_FILE: &str = "corpus.json";
pub const PARAMS_FILE: &str = "params.json";
pub const TRAIN_CSV: &str = "train_metrics.csv";
pub const TRAIN_JSON: &str = "train_report.json";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Writes config, corpus spec, parameters and the training report to `dir`.
pub fn save_checkpoint(dir: &Path, trained: &Trained) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write(&dir.join(CONFIG_FILE), trained.config.to_text()?)?;
    write(&dir.join(CORPUS_FILE), serde_json::to_vec_pretty(&trained.corpus)?)?;
    write(&dir.join(PARAMS_FILE), serde_json::to_vec(&ParamFile::capture(&trained.store))?)?;
    write(&dir.join(TRAIN_CSV), trained.report.to_csv())?;
    write(&dir.join(TRAIN_JSON), serde_json::to_vec_pretty(&trained.report)?)?;
    Ok(())
}

pub struct Checkpoint {
    pub model: AdAvsr,
    pub store: ParamStore<f64>,
    pub config: ExperimentConfig,
    pub corpus: CorpusSpec,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config = ExperimentConfig::from_text(&read(&dir.join(CONFIG_FILE))?)?;
    let corpus: CorpusSpec = serde_json::from_str(&read(&dir.join(CORPUS_FILE))?)?;
    let params: ParamFile = serde_json::from_str(&read(&dir.join(PARAMS_FILE))?)?;
    let (model, mut store) = init_model(&config, &corpus)?;
    params.restore(&mut store)?;
    Ok(Checkpoint {
        model,
        store,
        config,
        corpus,
    })
}
