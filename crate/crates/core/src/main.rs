use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use artseg::harness::{self, InputConfig, RunOptions};
use artseg::metrics::{DistanceMode, MetricConfig, Unit};
use artseg::segmenter::{BackendSpec, ExternalConfig};
use artseg::Error;

#[derive(Parser)]
#[command(
    name = "artseg",
    version,
    about = "Prompt augmentation, registration baseline and metrics for adaptive radiotherapy segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Voxel,
    Mm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Edt,
    Brute,
}

#[derive(Args)]
struct MetricArgs {
    /// NSD tolerance.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value = "voxel")]
    unit: UnitArg,
    /// Surface distance computation.
    #[arg(long, value_enum, default_value = "edt")]
    mode: ModeArg,
}

impl MetricArgs {
    fn config(&self) -> MetricConfig {
        MetricConfig {
            tau: self.tau,
            unit: match self.unit {
                UnitArg::Voxel => Unit::Voxel,
                UnitArg::Mm => Unit::Mm,
            },
            mode: match self.mode {
                ModeArg::Edt => DistanceMode::Edt,
                ModeArg::Brute => DistanceMode::Brute,
            },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test-time box jitter bound, voxels per face.
    #[arg(long, default_value_t = 5)]
    jitter_max: u32,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Seconds to wait for an external adapter's answer.
    #[arg(long, default_value_t = 300)]
    request_timeout: u64,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        let mut o = RunOptions::new(&self.manifest);
        o.seed = self.seed;
        o.jitter_max = self.jitter_max;
        o.metrics = self.metrics.config();
        if let Some(w) = self.workers {
            o.workers = w;
        }
        o.external = ExternalConfig {
            request_timeout: Duration::from_secs(self.request_timeout),
            ..ExternalConfig::default()
        };
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a backend on every non-simulation case of a manifest.
    Eval {
        /// propagate | prior-oracle | external:CMD
        #[arg(long, default_value = "propagate")]
        backend: BackendSpec,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Mean Dice per box-expansion level.
    Sweep {
        /// Repeat to sweep several backends.
        #[arg(long, required = true)]
        backend: Vec<BackendSpec>,
        #[arg(long, default_value_t = 1)]
        level_min: u32,
        #[arg(long, default_value_t = 10)]
        level_max: u32,
        #[arg(long, default_value_t = 3)]
        reps: u32,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate with subsets of the input channels.
    Ablate {
        #[arg(long, default_value = "propagate")]
        backend: BackendSpec,
        /// Input configuration such as curMR+priSeg; repeatable. Default: all four.
        #[arg(long = "config")]
        configs: Vec<InputConfig>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a synthetic phantom dataset and its manifest.
    Phantom {
        /// Suite spec JSON; the built-in default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics for one ground-truth / prediction mask pair, as JSON.
    Metrics {
        gt: PathBuf,
        pred: PathBuf,
        #[command(flatten)]
        metrics: MetricArgs,
    },
}

fn run(cli: Cli) -> Result<usize, Error> {
    match cli.command {
        Command::Eval { backend, run } => {
            let r = harness::cmd_eval(&run.options(), &backend, &run.out)?;
            eprintln!(
                "{} cases: {} ok, {} failed; dice {}",
                r.summary.cases,
                r.summary.ok,
                r.summary.failed,
                fmt_stat(&r.aggregates.dice)
            );
            Ok(r.summary.failed)
        }
        Command::Sweep {
            backend,
            level_min,
            level_max,
            reps,
            run,
        } => {
            if level_min > level_max {
                return Err(Error::InvalidSpec {
                    field: "level_min".into(),
                    reason: format!("{level_min} exceeds level_max {level_max}"),
                });
            }
            let levels: Vec<u32> = (level_min..=level_max).collect();
            let t = harness::cmd_sweep(&run.options(), &backend, &levels, reps, &run.out)?;
            for r in &t.rows {
                eprintln!(
                    "{} level {:>2}: dice {}",
                    r.backend,
                    r.level,
                    fmt_opt(r.mean_dice, r.sd_dice)
                );
            }
            Ok(t.failures())
        }
        Command::Ablate {
            backend,
            configs,
            run,
        } => {
            let configs = if configs.is_empty() {
                InputConfig::TABLE.to_vec()
            } else {
                configs
            };
            let rows = harness::cmd_ablate(&run.options(), &backend, &configs, &run.out)?;
            for r in &rows {
                eprintln!(
                    "{:<20} ok {:>3} failed {:>3} dice {}",
                    r.config,
                    r.summary.ok,
                    r.summary.failed,
                    fmt_stat(&r.dice)
                );
            }
            Ok(rows.iter().map(|r| r.summary.failed).sum())
        }
        Command::Phantom { spec, out } => {
            let m = harness::cmd_phantom(spec.as_deref(), &out)?;
            eprintln!("wrote {} scans to {}", m.cases.len(), out.display());
            Ok(0)
        }
        Command::Metrics { gt, pred, metrics } => {
            let r = harness::cmd_metrics(&gt, &pred, &metrics.config())?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(0)
        }
    }
}

fn fmt_opt(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "NA".into(),
    }
}

fn fmt_stat(s: &harness::Stat) -> String {
    fmt_opt(s.mean, s.sd)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
