use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svnr::agent::EvalMode;
use svnr_harness::plot::{curves, scatter, write_curve, write_scatter};
use svnr_harness::records::{read_actions, read_metrics};
use svnr_harness::run::{ACTIONS_FILE, CONFIG_FILE, METRICS_FILE};
use svnr_harness::{build_table, evaluate_run, run, sweep, Algorithm, ExperimentConfig, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "svnr", about = "Train, evaluate and report Stein variational negotiation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and evaluate the result.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue each seed from its latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Seeds trained concurrently (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the config's seed list, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the episode budget.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Re-evaluate the latest checkpoints of a run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EvalMode>,
    },
    /// Aggregate run directories into an evaluation table.
    Table {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Column order, by scenario label.
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<String>>,
        /// Output stem; writes `<out>.csv` and `<out>.txt`.
        #[arg(long, default_value = "table")]
        out: PathBuf,
    },
    /// Emit figure data and SVGs.
    Plot {
        #[command(subcommand)]
        figure: Figure,
    },
    /// Run a config over coverage factors and algorithm variants.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Max of Three coverage factors; the config's scenario when omitted.
        #[arg(long, value_delimiter = ',')]
        s2: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "nested,full,marginal")]
        algorithms: Vec<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Subcommand)]
enum Figure {
    /// Learning curve across the seeds of one run directory.
    Curves {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long, default_value = "curve")]
        out: PathBuf,
    },
    /// Joint-action scatter from one seed's action log.
    Scatter {
        /// An `actions.csv` file or a seed directory containing one.
        #[arg(long)]
        actions: PathBuf,
        #[arg(long, default_value_t = 3)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        from: usize,
        #[arg(long, default_value_t = 3000)]
        to: usize,
        #[arg(long, default_value = "scatter")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    match s {
        "shared_noise" => Ok(EvalMode::SharedNoise),
        "deterministic" => Ok(EvalMode::Deterministic),
        _ => Err(format!("unknown mode {s:?}; expected shared_noise or deterministic")),
    }
}

fn options(jobs: Option<usize>, progress: bool, resume: bool) -> RunOptions {
    let mut o = RunOptions { resume, progress, ..RunOptions::default() };
    if let Some(j) = jobs {
        o.jobs = j.max(1);
    }
    o
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, resume, jobs, seeds, episodes, output, quiet } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            for r in run(&cfg, &options(jobs, !quiet, resume))? {
                println!("seed {}: evaluation return {:.3} ± {:.3}", r.seed, r.eval.mean, r.eval.std);
            }
        }
        Command::Eval { run, episodes, mode } => {
            for s in evaluate_run(&run, episodes, mode)? {
                println!("seed {}: evaluation return {:.3} ± {:.3}", s.seed, s.eval_mean, s.eval_std);
            }
        }
        Command::Table { runs, scenarios, out } => {
            let table = build_table(&runs, scenarios.as_deref())?;
            table.write(&out)?;
            print!("{}", table.to_text());
        }
        Command::Plot { figure: Figure::Curves { run, window, out } } => {
            let cfg = ExperimentConfig::load(&run.join(CONFIG_FILE))?;
            let metrics = cfg
                .seeds
                .iter()
                .map(|s| read_metrics(&run.join(format!("seed_{s}")).join(METRICS_FILE)))
                .collect::<Result<Vec<_>, _>>()?;
            for p in write_curve(&curves(&metrics, window)?, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Plot { figure: Figure::Scatter { actions, stride, from, to, out } } => {
            let path = if actions.is_dir() { actions.join(ACTIONS_FILE) } else { actions };
            let points = scatter(&read_actions(&path)?, stride, from, to)?;
            for p in write_scatter(&points, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep { config, s2, algorithms, jobs } => {
            let cfg = ExperimentConfig::load(&config)?;
            let algorithms = algorithms.iter().map(|a| Algorithm::parse(a)).collect::<Result<Vec<_>, _>>()?;
            let table = sweep(&cfg, &s2, &algorithms, &options(jobs, true, false))?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
