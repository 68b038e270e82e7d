//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stdout so it shows even when the harness captures test output.
//!
//! Everything runs sequentially in one test so the timed criteria measure
//! this workload alone.

mod common;

#[path = "../../tensor/tests/support/op_cases.rs"]
mod op_cases;

use std::io::Write;
use std::time::{Duration, Instant};

use adavsr::ablation::{run_ablation, AblationRun};
use adavsr::ExperimentConfig;
use common::{criteria, module_grads};

const GRAD_TOL: f64 = 1e-4;

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.write_all(b"\n");
    let _ = out.flush();
}

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn record(&mut self, name: &'static str, elapsed: Duration, outcome: criteria::Outcome) {
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => say(&format!("PASS  {name:<24} {secs:>8.1}s  {detail}")),
            Err(why) => {
                say(&format!("FAIL  {name:<24} {secs:>8.1}s  {why}"));
                self.failed.push(name);
            }
        }
    }

    fn timed(&mut self, name: &'static str, budget: Option<Duration>, check: impl FnOnce() -> criteria::Outcome) {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "correct but took {:.1}s, over the {:.0}s budget",
                elapsed.as_secs_f64(),
                limit.as_secs_f64()
            )),
            (o, _) => o,
        };
        self.record(name, elapsed, outcome);
    }
}

fn gradient_suite() -> criteria::Outcome {
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    let mut note = |name: &str, report: adavsr_tensor::GradCheck<f64>| -> Result<(), String> {
        count += 1;
        if !(report.max_rel_error < GRAD_TOL) {
            return Err(format!("{name}: relative error {:e} at {}", report.max_rel_error, report.worst));
        }
        if report.max_rel_error >= worst.0 {
            worst = (report.max_rel_error, name.to_string());
        }
        Ok(())
    };
    for case in op_cases::op_cases() {
        let report = op_cases::run_case(&case).map_err(|e| format!("{}: {e}", case.name))?;
        note(case.name, report)?;
    }
    for (name, check) in module_grads::all() {
        note(name, check().map_err(|e| format!("{name}: {e}"))?)?;
    }
    Ok(format!("{count} ops and modules, worst {:.1e} ({})", worst.0, worst.1))
}

#[test]
fn acceptance() {
    let mut suite = Suite { failed: Vec::new() };
    say("");
    suite.timed("gradient suite", Some(Duration::from_secs(60)), gradient_suite);
    suite.timed("ctc oracle", Some(Duration::from_secs(30)), criteria::ctc_oracle);
    suite.timed("tbsm suite", None, criteria::tbsm_suite);
    suite.timed("residual mask identity", None, || criteria::mask_identity(1000));
    suite.timed("avrm convexity", None, criteria::avrm_convexity);
    suite.timed("dual-stream encoding", None, criteria::dual_stream_encoding);
    suite.timed("determinism", None, criteria::determinism);
    suite.timed("edit distance oracle", None, criteria::edit_distance_oracle);

    let base = ExperimentConfig::default();
    let started = Instant::now();
    let table = run_ablation(&base, |r: &AblationRun| {
        say(&format!(
            "      {:<11} seed {}  WER {:6.2}%  {:5.0}s",
            r.variant, r.seed, r.wer, r.train_secs
        ))
    });
    let elapsed = started.elapsed();
    match table {
        Ok(table) => {
            for line in table.to_csv().lines() {
                say(&format!("      {line}"));
            }
            let wer = |n: &str| table.row(n).map_or(f64::NAN, |r| r.mean_wer);
            let modules = format!(
                "baseline {:.2} | avrm {:.2} cmnsm {:.2} tbsm {:.2} | full {:.2}",
                wer("baseline"),
                wer("avrm"),
                wer("cmnsm"),
                wer("tbsm"),
                wer("full")
            );
            let ordered = table.module_ordering_holds().unwrap_or(false);
            let in_budget = elapsed <= Duration::from_secs(30 * 60);
            let outcome = match (ordered, in_budget) {
                (true, true) => Ok(modules),
                (false, _) => Err(format!("ordering does not hold: {modules}")),
                (true, false) => Err(format!("ordering holds but the run exceeded 30 min: {modules}")),
            };
            suite.record("module ablation", elapsed, outcome);
            let encodings = format!("a3 {:.2} | a1 {:.2} a2 {:.2}", wer("full"), wer("a1"), wer("a2"));
            let outcome = if table.encoding_ordering_holds().unwrap_or(false) {
                Ok(encodings)
            } else {
                Err(format!("a3 is not the best: {encodings}"))
            };
            suite.record("encoding ablation", elapsed, outcome);
        }
        Err(e) => {
            suite.record("module ablation", elapsed, Err(e.to_string()));
            suite.record("encoding ablation", elapsed, Err(e.to_string()));
        }
    }
    assert!(suite.failed.is_empty(), "failed criteria: {:?}", suite.failed);
}
