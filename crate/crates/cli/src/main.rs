//! `kgddi` command-line driver.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use kgddi::config::{ModelKind, RunConfig, CONFIG_KEYS};
use kgddi::embedding::EmbeddingMethod;
use kgddi::pipeline::{
    emit_report, run_pipeline, stage_embed, stage_ensemble, stage_ingest, stage_pairs, stage_train,
    sweep_sigma, write_synthetic_inputs, Report, SIGMA_SWEEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModelChoice {
    Model(ModelKind),
    Mae,
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("mae") {
            return Ok(Self::Mae);
        }
        s.parse()
            .map(Self::Model)
            .map_err(|e: kgddi::Error| e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "kgddi",
    version,
    about = "Drug-drug interaction prediction from knowledge-graph embeddings"
)]
#[command(after_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Single-threaded, reproducible execution (recorded in the manifest).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Restrict to one embedding method.
    #[arg(
        long,
        global = true,
        value_parser = ["rdf2vec", "kglove", "transe", "complex", "simple"]
    )]
    method: Option<String>,

    /// Restrict to one classifier: logreg, nb, knn, svm, rf, gbt, convlstm or mae.
    #[arg(long, global = true)]
    model: Option<ModelChoice>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse inputs and stage the interaction-free graph.
    Ingest,
    /// Write a synthetic knowledge graph with planted interactions.
    Synth,
    /// Train embeddings on the staged graph.
    Embed,
    /// Sample negatives, build pair features and folds.
    Pairs,
    /// Cross-validate classifiers and score the holdout.
    Train,
    /// Build the model-averaging ensemble from trained classifiers.
    Eval,
    /// Rerun the pipeline for several negatives-per-positive values.
    SweepSigma {
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', default_values_t = SIGMA_SWEEP)]
        sigmas: Vec<usize>,
    },
    /// Consolidate a run directory into report.json, report.csv and curves.
    Report,
    /// All stages in order.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if let Some(m) = &cli.method {
        cfg.embedding.methods = vec![m.parse::<EmbeddingMethod>()?];
    }
    if let Some(ModelChoice::Model(k)) = cli.model {
        cfg.models.classifiers = vec![k];
    }
    Ok(cfg)
}

fn print_report(report: &Report) -> Result<()> {
    let mut out = std::io::stdout().lock();
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if let Command::Synth = cli.command {
        let dir = cli.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
        let files = write_synthetic_inputs(&cfg, &dir)?;
        println!("{}", serde_json::to_string_pretty(&files)?);
        return Ok(());
    }
    if let Command::Report = cli.command {
        return print_report(&emit_report(&cfg.paths.out)?);
    }
    cfg.validate()?;
    match &cli.command {
        Command::Ingest => {
            let stats = stage_ingest(&cfg).context("stage ingest")?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Embed => {
            for &m in &cfg.embedding.methods {
                let manifest = stage_embed(&cfg, m).with_context(|| format!("stage embed/{m}"))?;
                println!(
                    "{m}: {} epochs, final loss {:?}",
                    manifest.epochs,
                    manifest.loss_curve.last()
                );
            }
        }
        Command::Pairs => {
            for &m in &cfg.embedding.methods {
                let s = stage_pairs(&cfg, m).with_context(|| format!("stage pairs/{m}"))?;
                println!(
                    "{m}: {} positives, {} negatives, {} filtered, {} held out",
                    s.positives, s.negatives, s.filtered, s.holdout
                );
            }
        }
        Command::Train => {
            if cli.model == Some(ModelChoice::Mae) {
                bail!("the mae ensemble is built by `eval` from trained classifiers");
            }
            for &m in &cfg.embedding.methods {
                for &k in &cfg.models.classifiers {
                    let r =
                        stage_train(&cfg, m, k).with_context(|| format!("stage train/{m}/{k}"))?;
                    println!(
                        "{m} {k}: AUPR {:.4} F1 {:.4} MCC {:.4}",
                        r.cv.aupr, r.cv.f1, r.cv.mcc
                    );
                }
            }
        }
        Command::Eval => {
            for &m in &cfg.embedding.methods {
                let r = stage_ensemble(&cfg, m).with_context(|| format!("stage eval/{m}"))?;
                println!(
                    "{m} mae [{}]: AUPR {:.4} F1 {:.4} MCC {:.4}",
                    r.members.join(", "),
                    r.cv.aupr,
                    r.cv.f1,
                    r.cv.mcc
                );
            }
        }
        Command::SweepSigma { sigmas } => {
            let rows = sweep_sigma(&cfg, sigmas, cli.deterministic)?;
            println!("sigma,method,model,AUPR,F1-score,MCC");
            for r in rows {
                println!(
                    "{},{},{},{:.6},{:.6},{:.6}",
                    r.sigma, r.method, r.model, r.aupr, r.f1, r.mcc
                );
            }
        }
        Command::Run => print_report(&run_pipeline(&cfg, cli.deterministic)?)?,
        Command::Synth | Command::Report => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
