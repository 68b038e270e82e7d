//! `adavsr`: corpus generation, training, evaluation and ablations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adavsr::ablation::run_ablation;
use adavsr::config::ExperimentConfig;
use adavsr::dataset::Dataset;
use adavsr::synth::{parse_snr_list, synth_corpus, CorpusSpec};
use adavsr::train::{evaluate, load_checkpoint, save_checkpoint, train, EvalReport};
use adavsr::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adavsr", version, about = "Audio-visual speech recognition on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus from a JSON corpus spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus file and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint under a list of noise conditions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "-5,0,5,10,clean", allow_hyphen_values = true)]
        snr: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the module and encoding ablations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::io(format!("reading {}", spec.display()), e))?;
    let spec: CorpusSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    let samples = synth_corpus(&spec)?;
    let n = samples.len();
    Dataset { spec, samples }.save(out)?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let data = Dataset::load(data)?;
    let trained = train(&cfg, &data.spec, &data.samples)?;
    save_checkpoint(out, &trained)?;
    let last = trained.report.epochs.last();
    println!(
        "trained {} epochs, {} parameters, final loss {}",
        trained.report.epochs.len(),
        trained.report.param_count,
        last.map_or("n/a".to_string(), |e| format!("{:.4}", e.loss))
    );
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        return write(path, serde_json::to_vec_pretty(report)?);
    }
    write(path, report.to_csv())?;
    write(&path.with_extension("json"), serde_json::to_vec_pretty(report)?)
}

fn eval_cmd(checkpoint: &Path, data: &Path, snr: &str, report: &Path) -> Result<()> {
    let snrs = parse_snr_list(snr)?;
    let mut ckpt = load_checkpoint(checkpoint)?;
    ckpt.config.apply_env()?;
    let data = Dataset::load(data)?;
    if data.spec.vocab()? != ckpt.corpus.vocab()? || data.spec.mel != ckpt.corpus.mel {
        return Err(Error::Input("data vocabulary or features differ from the checkpoint's".into()));
    }
    let result = evaluate(&ckpt.model, &ckpt.store, &ckpt.corpus, &data.samples, &snrs, ckpt.config.seed)?;
    write_report(report, &result)?;
    for row in &result.rows {
        println!("{:>6}  WER {:7.2}%  CER {:7.2}%", row.condition, row.wer, row.cer);
    }
    Ok(())
}

fn ablate(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let table = run_ablation(&cfg, |run| {
        println!(
            "{:<11} seed {:<3} WER {:7.2}%  CER {:7.2}%  params {:>7}  {:.0}s",
            run.variant, run.seed, run.wer, run.cer, run.param_count, run.train_secs
        );
    })?;
    write(&out.join("ablation.csv"), table.to_csv())?;
    write(&out.join("ablation.json"), serde_json::to_vec_pretty(&table)?)?;
    println!("module ordering holds: {}", table.module_ordering_holds()?);
    println!("encoding ordering holds: {}", table.encoding_ordering_holds()?);
    println!("total {:.0}s", table.wall_clock_secs);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => gen(&spec, &out),
        Command::Train { config, data, out } => train_cmd(&config, &data, &out),
        Command::Eval {
            checkpoint,
            data,
            snr,
            report,
        } => eval_cmd(&checkpoint, &data, &snr, &report),
        Command::Ablate { config, out } => ablate(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
