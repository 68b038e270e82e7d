//! Module and audio-encoding ablations over several seeds on one fixed
//! synthetic corpus.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Encoding, ExperimentConfig};
use crate::error::{Error, Result};
use crate::synth::synth_corpus;
use crate::train::{evaluate, split, train};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub name: &'static str,
    pub avrm: bool,
    pub cmnsm: bool,
    pub tbsm: bool,
    pub encoding: Encoding,
}

impl Variant {
    const fn modules(name: &'static str, avrm: bool, cmnsm: bool, tbsm: bool) -> Self {
        Self {
            name,
            avrm,
            cmnsm,
            tbsm,
            encoding: Encoding::A3,
        }
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            avrm: self.avrm,
            cmnsm: self.cmnsm,
            tbsm: self.tbsm,
            encoding: self.encoding,
            ..base.clone()
        }
    }
}

/// Module rows, ending with everything on (which is also the A3 row), then
/// the single-stream encodings with every module on.
pub const VARIANTS: [Variant; 8] = [
    Variant::modules("baseline", false, false, false),
    Variant::modules("avrm", true, false, false),
    Variant::modules("cmnsm", false, true, false),
    Variant::modules("tbsm", false, false, true),
    Variant::modules("avrm+cmnsm", true, true, false),
    Variant::modules("full", true, true, true),
    Variant {
        name: "a1",
        avrm: true,
        cmnsm: true,
        tbsm: true,
        encoding: Encoding::A1,
    },
    Variant {
        name: "a2",
        avrm: true,
        cmnsm: true,
        tbsm: true,
        encoding: Encoding::A2,
    },
];

/// Rows with exactly one module switched on.
pub const SINGLE_MODULE: [&str; 3] = ["avrm", "cmnsm", "tbsm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub wer: f64,
    pub cer: f64,
    pub final_loss: f64,
    pub param_count: usize,
    pub train_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub param_count: usize,
    pub wers: Vec<f64>,
    pub cers: Vec<f64>,
    pub mean_wer: f64,
    pub mean_cer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub condition: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    pub wall_clock_secs: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.name == name)
    }

    fn mean_wer(&self, name: &str) -> Result<f64> {
        self.row(name)
            .map(|r| r.mean_wer)
            .ok_or_else(|| Error::input(format!("ablation table has no {name} row")))
    }

    /// Baseline worse than every single-module row, each of which is worse
    /// than the full model.
    pub fn module_ordering_holds(&self) -> Result<bool> {
        let (base, full) = (self.mean_wer("baseline")?, self.mean_wer("full")?);
        let mut ok = true;
        for name in SINGLE_MODULE {
            let w = self.mean_wer(name)?;
            ok &= base > w && w > full;
        }
        Ok(ok)
    }

    /// A3 (the full row) at most the better of A1 and A2.
    pub fn encoding_ordering_holds(&self) -> Result<bool> {
        Ok(self.mean_wer("full")? <= self.mean_wer("a1")?.min(self.mean_wer("a2")?))
    }

    /// One line per variant, timing excluded.
    pub fn to_csv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| format!("wer_seed{s}")).collect();
        let mut out = format!(
            "variant,avrm,cmnsm,tbsm,encoding,params,{},mean_wer,mean_cer\n",
            seeds.join(",")
        );
        for r in &self.rows {
            let v = &r.variant;
            let wers: Vec<String> = r.wers.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                v.name,
                u8::from(v.avrm),
                u8::from(v.cmnsm),
                u8::from(v.tbsm),
                v.encoding,
                r.param_count,
                wers.join(","),
                r.mean_wer,
                r.mean_cer
            ));
        }
        out
    }
}

/// Trains and evaluates every variant for every seed in
/// `base.ablation_seeds` on the corpus described by `base`, scoring the
/// `base.ablation_snr` condition. `progress` sees each run as it finishes.
pub fn run_ablation(base: &ExperimentConfig, mut progress: impl FnMut(&AblationRun)) -> Result<AblationTable> {
    base.validate()?;
    let started = Instant::now();
    let corpus = base.corpus_spec();
    let (train_set, test_set) = split(synth_corpus(&corpus)?, base.test_fraction)?;
    let condition = base.ablation_snr;
    let seeds = base.ablation_seeds.0.clone();
    let mut rows = Vec::with_capacity(VARIANTS.len());
    let mut runs = Vec::new();
    for variant in VARIANTS {
        let (mut wers, mut cers) = (Vec::new(), Vec::new());
        let mut param_count = 0;
        for &seed in &seeds {
            let cfg = ExperimentConfig {
                seed,
                ..variant.apply(base)
            };
            let trained = train(&cfg, &corpus, &train_set)?;
            let report = evaluate(&trained.model, &trained.store, &corpus, &test_set, &[condition], seed)?;
            let row = report
                .row(&condition.to_string())
                .expect("evaluation reports every requested condition");
            let run = AblationRun {
                variant: variant.name.to_string(),
                seed,
                wer: row.wer,
                cer: row.cer,
                final_loss: trained.report.epochs.last().map_or(f64::NAN, |e| e.loss),
                param_count: report.param_count,
                train_secs: trained.report.wall_clock_secs,
            };
            progress(&run);
            wers.push(run.wer);
            cers.push(run.cer);
            param_count = run.param_count;
            runs.push(run);
        }
        rows.push(AblationRow {
            variant,
            param_count,
            mean_wer: mean(&wers),
            mean_cer: mean(&cers),
            wers,
            cers,
        });
    }
    Ok(AblationTable {
        condition: condition.to_string(),
        seeds,
        rows,
        runs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
