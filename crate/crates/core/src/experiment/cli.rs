//! Command-line front end. [`run_cli`] returns the process exit code:
//! 0 on success, 1 on a runtime failure, 2 on a usage or config problem.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::checkpoint::Checkpoint;
use crate::experiment::config::ExperimentConfig;
use crate::experiment::report::{compare_heads, score_dump_csv, Report, SeedRun};
use crate::experiment::{evaluate_state, execute, histogram_report, train_seed, Workspace};
use crate::gradcheck;

#[derive(Debug, Parser)]
#[command(
    name = "entropic-ood",
    version,
    about = "Train and evaluate OOD-aware classification heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Replace the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate every seed, writing report.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Train every seed, writing one checkpoint and loss trace per seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint against the config's validation split and OOD sets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run several configs (or load finished reports) and tabulate them.
    Compare {
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        /// Previously written report.json files.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Entropy and minimum-distance histograms for a checkpoint.
    Hist {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// OOD set to contrast with; defaults to the first one.
        #[arg(long)]
        ood: Option<String>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            code
        }
    }
}

/// An error plus the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if matches!(error, Error::Config(_)) {
            2
        } else {
            1
        };
        Self { code, error }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Error::from(e).into()
    }
}

/// Tags a config-loading failure (missing, unreadable, malformed) as a usage error.
fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|error| Failure { code: 2, error })
}

fn load_config(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = usage(ExperimentConfig::load(&common.config))?;
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = usage(std::path::absolute(dir).map_err(|e| Error::io(dir, e)))?;
    }
    Ok(cfg)
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn dump_scores(dir: &Path, run: &SeedRun) -> Result<()> {
    let scores_dir = dir.join("scores");
    fs::create_dir_all(&scores_dir).map_err(|e| Error::io(&scores_dir, e))?;
    for (ood, kind, set) in &run.score_sets {
        let path = scores_dir.join(format!("seed{}-{ood}-{kind}.csv", run.seed));
        write(&path, score_dump_csv(set)?)?;
    }
    Ok(())
}

fn print_summary(report: &Report) {
    for run in &report.runs {
        match (run.val_accuracy, &run.error) {
            (Some(acc), _) => println!("seed {}: val accuracy {:.4}", run.seed, acc),
            (None, Some(e)) => println!("seed {}: {e}", run.seed),
            _ => {}
        }
        for d in &run.detection {
            println!(
                "  {:<12} {:<16} AUROC {:.4}  TNR@TPR95 {:.4}  DTACC {:.4}",
                d.ood, d.score, d.auroc, d.tnr_at_tpr95, d.dtacc
            );
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn dispatch(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let dir = prepare_out_dir(&cfg)?;
            let outcome = execute(&cfg)?;
            let report = outcome.report;
            write(&dir.join("report.json"), report.to_json()?)?;
            if cfg.dump_scores {
                for run in &report.runs {
                    dump_scores(&dir, run)?;
                }
            }
            print_summary(&report);
            println!("wrote {}", dir.join("report.json").display());
            Ok(0)
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let dir = prepare_out_dir(&cfg)?;
            let ws = Workspace::new(&cfg)?;
            let hash = cfg.training_hash();
            let mut summary = Vec::new();
            for &seed in &cfg.seeds {
                let (state, trace) = match train_seed(&cfg, &ws, seed) {
                    Ok(t) => t,
                    Err(e @ Error::TrainingDiverged { .. }) => {
                        eprintln!("warning: seed {seed}: {e}");
                        summary.push(serde_json::json!({ "seed": seed, "error": e.to_string() }));
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in &trace {
                    w.serialize(r)?;
                }
                let trace_csv = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
                write(&dir.join(format!("trace-seed{seed}.csv")), trace_csv)?;
                let ck_path = dir.join(format!("checkpoint-seed{seed}.bin"));
                Checkpoint::new(state.clone(), hash).save(&ck_path)?;
                let run = evaluate_state(&cfg, &ws, &state)?;
                let acc = run.val_accuracy.unwrap_or(f64::NAN);
                println!(
                    "seed {seed}: val accuracy {acc:.4} -> {}",
                    ck_path.display()
                );
                summary.push(serde_json::json!({
                    "seed": seed,
                    "val_accuracy": acc,
                    "epochs": state.epoch,
                    "checkpoint": ck_path,
                }));
            }
            write(
                &dir.join("train-summary.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            Ok(0)
        }
        Command::Eval { common, checkpoint } => {
            let mut cfg = load_config(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            ck.expect_head(cfg.head)?;
            ck.warn_on_hash_mismatch(cfg.training_hash());
            let dir = prepare_out_dir(&cfg)?;
            let ws = Workspace::new(&cfg)?;
            let run = evaluate_state(&cfg, &ws, &ck.state)?;
            cfg.seeds = vec![ck.state.seed];
            if cfg.dump_scores {
                dump_scores(&dir, &run)?;
            }
            let report = Report::new(&cfg, vec![run], 0.0);
            let path = dir.join(format!("report-seed{}.json", ck.state.seed));
            write(&path, report.to_json()?)?;
            print_summary(&report);
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Compare {
            configs,
            reports,
            out_dir,
        } => {
            if configs.len() + reports.len() < 2 {
                return Err(Error::Config(
                    "compare needs at least two --config or --report inputs".into(),
                )
                .into());
            }
            let mut all = Vec::new();
            for path in &reports {
                let text = usage(fs::read_to_string(path).map_err(|e| Error::io(path, e)))?;
                all.push(usage(
                    serde_json::from_str::<Report>(&text).map_err(Error::from),
                )?);
            }
            for path in &configs {
                let cfg = usage(ExperimentConfig::load(path))?;
                log::info!("running {} ({})", path.display(), cfg.head);
                all.push(execute(&cfg)?.report);
            }
            let cmp = compare_heads(&all)?;
            print!("{}", cmp.render_table());
            for c in &cmp.columns {
                if c.accuracy_drop {
                    eprintln!(
                        "warning: {} loses more than 1 point of accuracy against {}",
                        c.label, cmp.baseline
                    );
                }
            }
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write(
                    &dir.join("comparison.json"),
                    serde_json::to_string_pretty(&cmp)?,
                )?;
                write(&dir.join("comparison.txt"), cmp.render_table())?;
            }
            Ok(0)
        }
        Command::Hist {
            common,
            checkpoint,
            ood,
            bins,
        } => {
            let cfg = load_config(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            ck.expect_head(cfg.head)?;
            ck.warn_on_hash_mismatch(cfg.training_hash());
            let dir = prepare_out_dir(&cfg)?;
            let ws = Workspace::new(&cfg)?;
            let (name, ood_set) = match &ood {
                Some(n) => ws
                    .data
                    .ood
                    .iter()
                    .find(|(m, _)| m == n)
                    .ok_or_else(|| Error::Config(format!("no OOD set named {n:?}")))?,
                None => ws
                    .data
                    .ood
                    .first()
                    .ok_or_else(|| Error::Config("config has no OOD sets".into()))?,
            };
            let (entropy, distance) =
                histogram_report(&ck.state, &ws.split.val.inputs, &ood_set.inputs, bins)?;
            let seed = ck.state.seed;
            let path = dir.join(format!("hist-entropy-seed{seed}-{name}.csv"));
            write(&path, entropy.to_csv()?)?;
            println!("wrote {}", path.display());
            if let Some(d) = distance {
                let path = dir.join(format!("hist-min-distance-seed{seed}-{name}.csv"));
                write(&path, d.to_csv()?)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Gradcheck { instances, seed } => {
            let reports = gradcheck::run_suite(instances, seed)?;
            let mut worst: f64 = 0.0;
            for r in &reports {
                println!(
                    "{:<16} {:>6} entries  max relative error {:.3e}  max absolute error {:.3e}",
                    r.target, r.entries_checked, r.max_relative_error, r.max_absolute_error
                );
                worst = worst.max(r.max_relative_error);
            }
            println!(
                "max relative error {worst:.3e} (tolerance {:.0e})",
                gradcheck::TOLERANCE
            );
            Ok(if reports.iter().all(|r| r.passed()) {
                0
            } else {
                1
            })
        }
    }
}
