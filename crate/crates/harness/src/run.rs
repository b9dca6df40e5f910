use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svnr::agent::{evaluate, train, AgentCheckpoint, AgentError, EpisodeMetrics, EvalMode, EvalSummary, Learner};
use svnr::envs::{make_env, Env, Scenario};

use crate::config::{Algorithm, ExperimentConfig};
use crate::records::{metrics_fields, metrics_sink, read_metrics, write_actions, write_eval, CsvSink};
use crate::table::{build_table, EvalTable};
use crate::HarnessError;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ACTIONS_FILE: &str = "actions.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LATEST_CHECKPOINT: &str = "checkpoint_latest.json";
pub const LAST_GOOD_CHECKPOINT: &str = "checkpoint_last_good.json";

/// Offset between a training seed and its evaluation seed.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Continue from `checkpoint_latest.json` where present.
    pub resume: bool,
    /// Seeds trained concurrently.
    pub jobs: usize,
    /// Print one progress line per checkpoint to stderr.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { resume: false, jobs: std::thread::available_parallelism().map_or(1, |n| n.get()), progress: false }
    }
}

/// Per-seed result persisted as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub scenario: String,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub eval_mode: EvalMode,
    pub eval_episodes: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<EpisodeMetrics>,
    pub eval: EvalSummary,
    pub summary: RunSummary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<AgentCheckpoint, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Creates the output directory and stores the config there, failing
/// before any training if the location is not writable.
fn prepare_output(config: &ExperimentConfig) -> Result<(), HarnessError> {
    let unwritable = |e: std::io::Error| {
        HarnessError::Config(format!("output_dir {} is not writable: {e}", config.output_dir.display()))
    };
    fs::create_dir_all(&config.output_dir).map_err(unwritable)?;
    fs::write(config.output_dir.join(CONFIG_FILE), config.to_json()).map_err(unwritable)
}

/// Trains every seed of `config` and persists metrics, action logs,
/// checkpoints and evaluation results under `output_dir/seed_<k>/`.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate()?;
    prepare_output(config)?;
    let jobs = options.jobs.max(1);
    let mut records = Vec::with_capacity(config.seeds.len());
    for chunk in config.seeds.chunks(jobs) {
        let results: Vec<Result<RunRecord, HarnessError>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                chunk.iter().map(|&seed| scope.spawn(move || run_seed(config, seed, options))).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        });
        for r in results {
            records.push(r?);
        }
    }
    Ok(records)
}

fn run_seed(config: &ExperimentConfig, seed: u64, options: &RunOptions) -> Result<RunRecord, HarnessError> {
    let dir = config.seed_dir(seed);
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| HarnessError::io(&ck_dir, e))?;
    let hp = &config.hyperparameters;
    let mut env = make_env(&config.scenario, seed)?;
    let agent_cfg = hp.agent_config(config.algorithm)?;
    let mut learner = Learner::new(&env, config.schedule(env.agents()), agent_cfg, seed)?;

    let metrics_path = dir.join(METRICS_FILE);
    let actions_path = dir.join(ACTIONS_FILE);
    let latest = ck_dir.join(LATEST_CHECKPOINT);
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let resumed = options.resume && latest.exists() && metrics_path.exists();
    let mut sink = if resumed {
        learner.restore(&read_checkpoint(&latest)?)?;
        metrics = read_metrics(&metrics_path)?;
        metrics.retain(|m| m.episode < learner.episode);
        rewrite_metrics(&metrics_path, &metrics)?
    } else {
        write_actions(&actions_path, env.joint_dim(), &[], false)?;
        let first = ck_dir.join("checkpoint_0.json");
        write_json(&first, &learner.checkpoint())?;
        write_json(&latest, &learner.checkpoint())?;
        checkpoints.push(first);
        metrics_sink(&metrics_path)?
    };

    while learner.episode < config.episodes {
        let remaining = config.episodes - learner.episode;
        let chunk = if hp.checkpoint_every == 0 { remaining } else { remaining.min(hp.checkpoint_every) };
        let mut sink_error = None;
        let outcome = train(&mut learner, &mut env, chunk, |m| {
            if sink_error.is_none() {
                sink_error = sink.row(metrics_fields(m)).err();
            }
        });
        if let Some(e) = sink_error {
            return Err(e);
        }
        let outcome = match outcome {
            Ok(o) => o,
            Err(AgentError::Diverged { episode, checkpoint }) => {
                sink.flush()?;
                let path = ck_dir.join(LAST_GOOD_CHECKPOINT);
                write_json(&path, &checkpoint)?;
                return Err(HarnessError::Numerical { seed, episode, checkpoint: path });
            }
            Err(e) => return Err(e.into()),
        };
        sink.flush()?;
        write_actions(&actions_path, env.joint_dim(), &outcome.actions, true)?;
        metrics.extend(outcome.metrics);
        let path = ck_dir.join(format!("checkpoint_{}.json", learner.episode));
        let ck = learner.checkpoint();
        write_json(&path, &ck)?;
        write_json(&latest, &ck)?;
        checkpoints.push(path);
        if options.progress {
            let tail = &metrics[metrics.len().saturating_sub(100)..];
            let mean = tail.iter().map(|m| m.ret).sum::<f64>() / tail.len().max(1) as f64;
            eprintln!("[{} seed {seed}] episode {} mean return (last 100) {mean:.3}", config.scenario.label(), learner.episode);
        }
    }

    let eval = evaluate_bundle(&mut learner, &config.scenario, seed, hp.eval_episodes, hp.eval_mode)?;
    write_eval(&dir.join(EVAL_FILE), &eval.returns)?;
    let summary = RunSummary {
        seed,
        scenario: config.scenario.label(),
        algorithm: config.algorithm,
        episodes: learner.episode,
        eval_mode: hp.eval_mode,
        eval_episodes: hp.eval_episodes,
        eval_mean: eval.mean,
        eval_std: eval.std,
        checkpoints,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunRecord { seed, dir, metrics, eval, summary })
}

fn rewrite_metrics(path: &Path, rows: &[EpisodeMetrics]) -> Result<CsvSink, HarnessError> {
    let mut sink = metrics_sink(path)?;
    for m in rows {
        sink.row(metrics_fields(m))?;
    }
    Ok(sink)
}

fn evaluate_bundle(
    learner: &mut Learner,
    scenario: &Scenario,
    seed: u64,
    episodes: usize,
    mode: EvalMode,
) -> Result<EvalSummary, HarnessError> {
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let mut env: Env = make_env(scenario, eval_seed)?;
    Ok(evaluate(&mut learner.bundle, &mut env, episodes, mode, eval_seed)?)
}

/// Re-evaluates the latest checkpoint of every seed in a finished run
/// directory, rewriting `eval.csv` and `summary.json`.
pub fn evaluate_run(
    run_dir: &Path,
    episodes: Option<usize>,
    mode: Option<EvalMode>,
) -> Result<Vec<RunSummary>, HarnessError> {
    let mut config = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    config.output_dir = run_dir.to_path_buf();
    let episodes = episodes.unwrap_or(config.hyperparameters.eval_episodes);
    let mode = mode.unwrap_or(config.hyperparameters.eval_mode);
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let dir = config.seed_dir(seed);
        let ck_path = dir.join("checkpoints").join(LATEST_CHECKPOINT);
        let ck = read_checkpoint(&ck_path)?;
        let env = make_env(&config.scenario, seed)?;
        let mut learner =
            Learner::new(&env, config.schedule(env.agents()), config.hyperparameters.agent_config(config.algorithm)?, seed)?;
        learner.restore(&ck)?;
        let eval = evaluate_bundle(&mut learner, &config.scenario, seed, episodes, mode)?;
        write_eval(&dir.join(EVAL_FILE), &eval.returns)?;
        let previous: Option<RunSummary> =
            fs::read_to_string(dir.join(SUMMARY_FILE)).ok().and_then(|t| serde_json::from_str(&t).ok());
        let summary = RunSummary {
            seed,
            scenario: config.scenario.label(),
            algorithm: config.algorithm,
            episodes: ck.episode,
            eval_mode: mode,
            eval_episodes: episodes,
            eval_mean: eval.mean,
            eval_std: eval.std,
            checkpoints: previous.map(|p| p.checkpoints).unwrap_or_else(|| vec![ck_path]),
        };
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        out.push(summary);
    }
    Ok(out)
}

/// Expands `base` over Max of Three coverage factors (when given) and
/// algorithm variants, runs each cell into
/// `output_dir/<algorithm>/<scenario label>/`, and writes
/// `table.csv`/`table.txt` at the sweep root.
pub fn sweep(
    base: &ExperimentConfig,
    s2_values: &[f64],
    algorithms: &[Algorithm],
    options: &RunOptions,
) -> Result<EvalTable, HarnessError> {
    if algorithms.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one algorithm".into()));
    }
    let scenarios: Vec<Scenario> = if s2_values.is_empty() {
        vec![base.scenario.clone()]
    } else {
        s2_values.iter().map(|&s2| Scenario::MaxOfThree { s2 }).collect()
    };
    let mut dirs = Vec::new();
    for &algorithm in algorithms {
        for scenario in &scenarios {
            let mut cfg = base.clone();
            cfg.algorithm = algorithm;
            cfg.scenario = scenario.clone();
            cfg.output_dir = base.output_dir.join(algorithm.label()).join(scenario.label());
            cfg.validate()?;
            dirs.push(cfg);
        }
    }
    for cfg in &dirs {
        run(cfg, options)?;
    }
    let run_dirs: Vec<PathBuf> = dirs.iter().map(|c| c.output_dir.clone()).collect();
    let labels: Vec<String> = scenarios.iter().map(Scenario::label).collect();
    let table = build_table(&run_dirs, Some(&labels))?;
    table.write(&base.output_dir.join("table"))?;
    Ok(table)
}
