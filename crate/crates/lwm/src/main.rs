//! `lwm` — corpus generation, training, evaluation, ablations, and figures
//! for the latent world-model driving stack, one subcommand each.

use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand};

use lwm::manifest::RunManifest;
use lwm::{CliError, EvalMode, EvalOptions, CORPUS_ENV};
use trainer::TrainConfig;

#[derive(Parser)]
#[command(name = "lwm", version, about = "Desk-scale driving stack: data, training, evaluation, figures")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or resume building) a scenario corpus.
    GenData {
        /// Seed of the first scenario; scenario `i` uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scenarios.
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Comma list of `tier:weight` pairs, e.g. `easy:0.5,medium:0.5`.
        #[arg(long, default_value = "easy:0.4,medium:0.3,hard:0.2,extreme:0.1")]
        difficulty_mix: String,
        /// Corpus root directory.
        #[arg(long)]
        out: PathBuf,
        /// Model preset whose camera grid the rasters must match.
        #[arg(long, default_value = "smoke")]
        model: String,
    },
    /// Train from a TOML config, checkpointing every epoch.
    Train {
        /// Training config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints and the step log.
        #[arg(long)]
        out: PathBuf,
        /// Corpus root; falls back to the LWM_CORPUS environment variable.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Score a policy on the corpus, open- or closed-loop.
    Eval {
        /// Training output directory to pull encoder/decoder weights from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus root; falls back to the LWM_CORPUS environment variable.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// `openloop` or `closedloop`.
        #[arg(long, default_value = "openloop")]
        mode: String,
        /// `model`, `expert`, or `stationary`.
        #[arg(long, default_value = "model")]
        policy: String,
        /// Output directory for the report and rollout logs.
        #[arg(long)]
        out: PathBuf,
        /// Cap on evaluated scenarios.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Retrain and score every row of an ablation table.
    Ablate {
        /// `table3` (component toggles) or `table5` (context strides).
        #[arg(long)]
        matrix: String,
        /// Base training config (TOML) the rows are derived from.
        #[arg(long)]
        config: PathBuf,
        /// Corpus root; falls back to the LWM_CORPUS environment variable.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory for per-row runs and the CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG + CSV figures from a training log, report, or tensor.
    Plot {
        /// A `train_log.jsonl`, a report directory (or its `report.json`),
        /// or a stored `.lwt` attention matrix.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the figures.
        #[arg(long)]
        out: PathBuf,
    },
}

/// The corpus root comes from `--corpus` when given, else `LWM_CORPUS`.
fn corpus_root(flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(CORPUS_ENV) {
        Ok(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(CliError::Config(format!("no corpus root: pass --corpus or set {CORPUS_ENV}"))),
    }
}

fn cmd_train(config: &Path, out: &Path, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let corpus = corpus_root(corpus)?;
    let cfg = TrainConfig::load(config)?;
    let outcome = trainer::train(&corpus, &cfg, out, None)?;
    // Record the resolved config beside the checkpoints so `eval` and
    // `plot` can rebuild the same model without the original TOML.
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    let cfg_path = out.join("config.json");
    fs::write(&cfg_path, json).map_err(|e| lwm::io_err(&cfg_path, e))?;
    RunManifest::new("train", cfg.seed, out).with_config(config).with_corpus(&corpus)?.write(out)?;
    match outcome.last {
        Some(t) => println!("trained {} steps, final total loss {:.6} -> {}", outcome.steps_run, t.total, outcome.checkpoint.display()),
        None => println!("nothing left to train -> {}", outcome.checkpoint.display()),
    }
    println!("step log: {}", outcome.log.display());
    Ok(())
}

fn fmt_mean(label: &str, v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{label} {v:.4}"),
        None => String::new(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::GenData { seed, count, difficulty_mix, out, model } => {
            let mix = lwm::parse_mix(&difficulty_mix)?;
            let summary = lwm::gen_data(&out, seed, count, &mix, &model)?;
            println!("corpus {}: built {}, kept {} already complete", out.display(), summary.built, summary.skipped);
        }
        Cmd::Train { config, out, corpus } => cmd_train(&config, &out, corpus)?,
        Cmd::Eval { checkpoint, corpus, mode, policy, out, limit } => {
            let corpus = corpus_root(corpus)?;
            let opts = EvalOptions { mode: EvalMode::parse(&mode)?, policy, limit, ..EvalOptions::default() };
            let report = lwm::eval(checkpoint.as_deref(), &corpus, &out, &opts)?;
            println!(
                "{} {} on {} scenarios: {} {} {} {}",
                report.policy,
                report.mode,
                report.scenarios.len(),
                fmt_mean("ADE", report.mean_ade),
                fmt_mean("EPDMS", report.mean_epdms),
                fmt_mean("R_c", report.mean_r_c),
                fmt_mean("HD", report.mean_hd),
            );
            println!("report: {}", out.join("report.json").display());
        }
        Cmd::Ablate { matrix, config, corpus, out } => {
            let corpus = corpus_root(corpus)?;
            let base = TrainConfig::load(&config)?;
            let outcome = lwm::ablate(&matrix, &base, &corpus, &out)?;
            for row in &outcome.rows {
                println!(
                    "{:<32} {} {}",
                    row.label,
                    fmt_mean("EPDMS", row.epdms),
                    fmt_mean("ADE", row.ade),
                );
            }
            println!("table: {}", outcome.csv.display());
        }
        Cmd::Plot { input, out } => {
            for f in lwm::plot(&input, &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}
