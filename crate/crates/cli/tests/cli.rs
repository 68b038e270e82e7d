//! End-to-end runs of the binary: outputs, exit codes and the seed override.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEC: &str = r#"{"n_samples": 8, "max_words": 1, "max_word_len": 2, "frames": 8}"#;

const CONFIG: &str = "\
# narrow model, two quick epochs
c1 = 8
d1 = 8
d_att = 4
encoder_ff = 16
decoder_ff = 16
epochs = 2
batch_size = 2
warmup = 10
";

fn adavsr(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adavsr"));
    cmd.args(args).env_remove("ADAVSR_SEED");
    if let Some(s) = seed {
        cmd.env("ADAVSR_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("spec.json"), SPEC).unwrap();
        fs::write(ws.path("config.txt"), CONFIG).unwrap();
        let out = adavsr(&["gen", "--spec", s(&ws.path("spec.json")), "--out", s(&ws.path("data.bin"))], None);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, config: &str, out: &str, seed: Option<&str>) -> Output {
        adavsr(
            &["train", "--config", s(&self.path(config)), "--data", s(&self.path("data.bin")), "--out", s(&self.path(out))],
            seed,
        )
    }

    fn eval(&self, checkpoint: &str, report: &str) -> Output {
        adavsr(
            &[
                "eval",
                "--checkpoint",
                s(&self.path(checkpoint)),
                "--data",
                s(&self.path("data.bin")),
                "--snr",
                "-5,0,5,10,clean",
                "--report",
                s(&self.path(report)),
            ],
            None,
        )
    }
}

#[test]
fn gen_train_eval_is_reproducible() {
    let ws = Workspace::new();
    assert_eq!(&fs::read(ws.path("data.bin")).unwrap()[..8], b"ADAVSR01");
    for run in ["a", "b"] {
        let out = ws.train("config.txt", run, None);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = ws.eval(run, &format!("{run}.csv"));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: PathBuf| fs::read(p).unwrap();
    assert_eq!(read(ws.path("a/train_metrics.csv")), read(ws.path("b/train_metrics.csv")));
    assert_eq!(read(ws.path("a.csv")), read(ws.path("b.csv")));
    let report = String::from_utf8(read(ws.path("a.csv"))).unwrap();
    // header, four noisy levels, clean, average
    assert_eq!(report.lines().count(), 1 + 4 + 1 + 1);
    assert!(ws.path("a.json").exists());
}

#[test]
fn seed_variable_overrides_the_config() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("config.txt", "plain", None)), 0);
    assert_eq!(code(&ws.train("config.txt", "seeded", Some("5"))), 0);
    let cfg = fs::read_to_string(ws.path("seeded/config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l == "seed = 5"), "{cfg}");
    assert_ne!(
        fs::read(ws.path("plain/params.json")).unwrap(),
        fs::read(ws.path("seeded/params.json")).unwrap()
    );
    let out = ws.train("config.txt", "bad", Some("five"));
    assert_eq!(code(&out), 1);
}

#[test]
fn input_errors_exit_with_one() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.txt"), "c1 = 16\n").unwrap();
    fs::write(ws.path("junk.bin"), b"not a dataset").unwrap();
    let missing = ws.path("missing.txt");
    assert_eq!(code(&ws.train("bad.txt", "x", None)), 1);
    assert_eq!(code(&ws.train("missing.txt", "x", None)), 1);
    let out = adavsr(
        &["train", "--config", s(&ws.path("config.txt")), "--data", s(&ws.path("junk.bin")), "--out", s(&ws.path("x"))],
        None,
    );
    assert_eq!(code(&out), 1);
    assert_eq!(code(&ws.eval("no_checkpoint", "r.csv")), 1);
    assert_eq!(code(&adavsr(&["gen", "--spec", s(&missing), "--out", s(&ws.path("o.bin"))], None)), 1);
    assert_eq!(code(&adavsr(&["frobnicate"], None)), 1);

    assert_eq!(code(&ws.train("config.txt", "ok", None)), 0);
    let out = adavsr(
        &[
            "eval",
            "--checkpoint",
            s(&ws.path("ok")),
            "--data",
            s(&ws.path("data.bin")),
            "--snr",
            "-5,loud",
            "--report",
            s(&ws.path("r.csv")),
        ],
        None,
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn numeric_failure_exits_with_two() {
    let ws = Workspace::new();
    fs::write(
        ws.path("wild.txt"),
        format!("{CONFIG}lr_scale = 1e300\nclip_norm = 1e300\nwarmup = 1\nbatch_size = 1\n")
            .replace("warmup = 10\n", "")
            .replace("batch_size = 2\n", ""),
    )
    .unwrap();
    let out = ws.train("wild.txt", "x", None);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablate_writes_its_table() {
    let ws = Workspace::new();
    fs::write(
        ws.path("ablate.txt"),
        format!("{CONFIG}corpus_samples = 8\nablation_seeds = 1\n").replace("epochs = 2", "epochs = 1"),
    )
    .unwrap();
    let out = adavsr(&["ablate", "--config", s(&ws.path("ablate.txt")), "--out", s(&ws.path("ab"))], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(ws.path("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(ws.path("ab/ablation.json").exists());
}
