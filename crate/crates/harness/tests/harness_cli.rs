use std::path::{Path, PathBuf};
use std::process::Command;

use svnr::agent::{ActionRecord, EpisodeMetrics};
use svnr::envs::Scenario;
use svnr_harness::plot::{curves, scatter, write_curve, write_scatter, REWARD_BINS};
use svnr_harness::records::{read_eval, read_metrics, write_eval, CsvTable, METRICS_SCHEMA};
use svnr_harness::run::{CONFIG_FILE, EVAL_FILE, METRICS_FILE};
use svnr_harness::{build_table, run, Algorithm, ExperimentConfig, RunOptions};

fn tiny_config(dir: &Path, algorithm: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Scenario::MaxOfThree { s2: 3.0 }, algorithm, dir);
    cfg.seeds = vec![0, 1];
    cfg.episodes = 12;
    let hp = &mut cfg.hyperparameters;
    hp.hidden = 8;
    hp.batch = 16;
    hp.particles = 16;
    hp.policy_states = 1;
    hp.eval_episodes = 100;
    hp.checkpoint_every = 5;
    cfg
}

fn quiet() -> RunOptions {
    RunOptions { jobs: 2, ..RunOptions::default() }
}

fn svnr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svnr"))
}

#[test]
fn config_round_trips_and_defaults_fill_in() {
    let cfg = tiny_config(Path::new("/tmp/out"), Algorithm::Full);
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let minimal = r#"{"scenario": {"name": "particle_gather"}, "output_dir": "x"}"#;
    let parsed = ExperimentConfig::from_json(minimal).unwrap();
    assert_eq!(parsed.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(parsed.episodes, 5000);
    assert_eq!(parsed.algorithm, Algorithm::Nested);
    assert_eq!(parsed.hyperparameters.batch, 512);
    assert_eq!(parsed.hyperparameters.buffer, 1_000_000);
    assert_eq!(parsed.hyperparameters.particles, 32);
}

#[test]
fn bad_configs_are_rejected() {
    for text in [
        r#"{"scenario": {"name": "nowhere"}, "output_dir": "x"}"#,
        r#"{"scenario": {"name": "max_of_three", "s2": -1.0}, "output_dir": "x"}"#,
        r#"{"scenario": {"name": "two_modalities"}, "output_dir": "x", "seeds": []}"#,
        r#"{"scenario": {"name": "two_modalities"}, "output_dir": "x", "hyperparameters": {"particles": 4}}"#,
        r#"{"scenario": {"name": "two_modalities"}, "output_dir": "x", "hyperparameters": {"lr": 1}}"#,
    ] {
        assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
    }
}

#[test]
fn zero_episode_run_writes_empty_metrics_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), Algorithm::Nested);
    cfg.episodes = 0;
    let records = run(&cfg, &quiet()).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        assert!(r.metrics.is_empty());
        assert!(read_metrics(&r.dir.join(METRICS_FILE)).unwrap().is_empty());
        assert_eq!(r.summary.checkpoints.len(), 1);
        assert!(r.summary.checkpoints[0].ends_with("checkpoint_0.json"));
        assert_eq!(read_eval(&r.dir.join(EVAL_FILE)).unwrap().len(), 100);
    }
}

#[test]
fn runs_persist_schema_tagged_artifacts_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), Algorithm::Nested);
    let records = run(&cfg, &quiet()).unwrap();
    let seed_dir = &records[0].dir;
    let metrics = CsvTable::read(&seed_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.schema, METRICS_SCHEMA);
    assert_eq!(metrics.header, ["episode", "return", "alpha", "critic_loss", "max_direction_norm", "clamp_count"]);
    assert_eq!(metrics.rows.len(), 12);
    let actions = CsvTable::read(&seed_dir.join("actions.csv")).unwrap();
    assert_eq!(actions.header, ["step", "u1", "u2", "u3", "reward"]);
    assert_eq!(actions.rows.len(), 12);
    let names: Vec<String> = records[0].summary.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert_eq!(names, ["checkpoint_0.json", "checkpoint_5.json", "checkpoint_10.json", "checkpoint_12.json"]);
    let episodes: Vec<usize> = records[0].metrics.iter().map(|m| m.episode).collect();
    assert!(episodes.windows(2).all(|w| w[0] < w[1]));

    let mut longer = cfg.clone();
    longer.episodes = 15;
    let resumed = run(&longer, &RunOptions { resume: true, ..quiet() }).unwrap();
    let rows = read_metrics(&resumed[0].dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.iter().map(|m| m.episode).collect::<Vec<_>>(), (0..15).collect::<Vec<_>>());
    assert_eq!(rows[..12], records[0].metrics[..]);
}

#[test]
fn persisted_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("a"), Algorithm::Nested);
    run(&cfg, &quiet()).unwrap();
    let mut again = ExperimentConfig::load(&cfg.output_dir.join(CONFIG_FILE)).unwrap();
    again.output_dir = dir.path().join("b");
    run(&again, &quiet()).unwrap();
    for seed in &cfg.seeds {
        let rel = PathBuf::from(format!("seed_{seed}")).join(METRICS_FILE);
        let a = std::fs::read(cfg.output_dir.join(&rel)).unwrap();
        let b = std::fs::read(again.output_dir.join(&rel)).unwrap();
        assert_eq!(a, b);
    }
}

fn fake_run(root: &Path, algorithm: Algorithm, scenario: Scenario, returns: &[Vec<f64>]) -> PathBuf {
    let mut cfg = ExperimentConfig::new(scenario, algorithm, root.join(format!("{}_{}", algorithm.label(), returns.len())));
    cfg.seeds = (0..returns.len() as u64).collect();
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    std::fs::write(cfg.output_dir.join(CONFIG_FILE), cfg.to_json()).unwrap();
    for (seed, r) in returns.iter().enumerate() {
        let d = cfg.output_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&d).unwrap();
        write_eval(&d.join(EVAL_FILE), r).unwrap();
    }
    cfg.output_dir
}

#[test]
fn table_cells_recompute_from_raw_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let constant = fake_run(dir.path(), Algorithm::Nested, Scenario::MaxOfThree { s2: 1.5 }, &[vec![10.0; 100]]);
    let table = build_table(&[constant], None).unwrap();
    assert_eq!(table.render_cell(Algorithm::Nested, "max_of_three(1.5)"), "10.00 ± 0.00");

    let raw = vec![vec![1.0, 3.0], vec![5.0, 7.0, 9.0]];
    let spread = fake_run(dir.path(), Algorithm::Marginal, Scenario::MaxOfThree { s2: 1.5 }, &raw);
    let table = build_table(&[spread], None).unwrap();
    let cell = table.cell(Algorithm::Marginal, "max_of_three(1.5)").unwrap();
    assert_eq!(cell.seed_means, vec![2.0, 7.0]);
    assert_eq!(cell.mean, 4.5);
    assert_eq!(cell.std, 2.5);
    let all = [1.0, 3.0, 5.0, 7.0, 9.0];
    let m = all.iter().sum::<f64>() / 5.0;
    assert_eq!(cell.episode_std, (all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0).sqrt());
}

#[test]
fn table_orders_columns_and_marks_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let a = fake_run(dir.path(), Algorithm::Nested, Scenario::MaxOfThree { s2: 3.0 }, &[vec![9.0; 3]]);
    let b = fake_run(dir.path(), Algorithm::Marginal, Scenario::TwoModalities, &[vec![1.0; 3], vec![2.0; 3]]);
    let order = vec!["two_modalities".to_string(), "max_of_three(3)".to_string()];
    let table = build_table(&[a, b], Some(&order)).unwrap();
    assert_eq!(table.scenarios, order);
    assert_eq!(table.render_cell(Algorithm::Nested, "two_modalities"), "—");
    assert_eq!(table.render_cell(Algorithm::Marginal, "max_of_three(3)"), "—");
    assert_eq!(table.warnings.len(), 2);
    let text = table.to_text();
    let header = text.lines().next().unwrap();
    assert!(header.find("two_modalities").unwrap() < header.find("max_of_three(3)").unwrap());
    table.write(&dir.path().join("t")).unwrap();
    let csv = CsvTable::read(&dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.rows.len(), 4);
    assert!(csv.rows.iter().any(|r| r[6] == "—"));
}

fn actions(n: usize) -> Vec<ActionRecord> {
    (1..=n).map(|s| ActionRecord { step: s, action: vec![s as f64 * 0.001, -1.0, 2.0], reward: (s % 7) as f64 }).collect()
}

#[test]
fn scatter_strides_and_bins() {
    let pts = scatter(&actions(5000), 3, 1, 3000).unwrap();
    assert_eq!(pts.len(), 1000);
    assert_eq!(pts[0].step, 1);
    assert_eq!(pts[1].step, 4);
    let single = scatter(&[ActionRecord { step: 1, action: vec![1.0, 2.0, 3.0], reward: 10.0 }], 1, 1, 10).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].bin, REWARD_BINS - 1);
    assert!(scatter(&[], 1, 1, 10).is_err());
    let dir = tempfile::tempdir().unwrap();
    let files = write_scatter(&pts, &dir.path().join("s")).unwrap();
    assert_eq!(files.len(), 3);
    let svg = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1000);
}

fn metrics_run(returns: &[f64]) -> Vec<EpisodeMetrics> {
    returns
        .iter()
        .enumerate()
        .map(|(k, &r)| EpisodeMetrics { episode: k, ret: r, alpha: 1.0, critic_loss: 0.0, max_direction_norm: 0.0, clamp_count: 0 })
        .collect()
}

#[test]
fn curves_average_seeds_and_flag_mismatched_grids() {
    let single = curves(&[metrics_run(&[1.0, 2.0, 3.0, 4.0])], 2).unwrap();
    assert_eq!(single.mean, vec![1.0, 1.5, 2.5, 3.5]);
    assert!(single.std.iter().all(|s| *s == 0.0));
    let flat = curves(&[metrics_run(&[5.0; 10]), metrics_run(&[5.0; 10])], 3).unwrap();
    assert!(flat.mean.iter().all(|m| *m == 5.0));
    let ragged = curves(&[metrics_run(&[1.0; 10]), metrics_run(&[3.0; 6])], 1).unwrap();
    assert_eq!(ragged.episodes.len(), 6);
    assert_eq!(ragged.warnings.len(), 1);
    assert!(ragged.std.iter().all(|s| *s == 1.0));
    let dir = tempfile::tempdir().unwrap();
    write_curve(&ragged, &dir.path().join("c")).unwrap();
    let t = CsvTable::read(&dir.path().join("c.csv")).unwrap();
    assert!(t.note.unwrap().contains("smoothing window 1"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenario": {"name": "nowhere"}, "output_dir": "x"}"#).unwrap();
    let status = svnr().args(["train", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let missing = svnr().args(["train", "--config", "/nonexistent/config.json"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let unwritable = tiny_config(&blocker.join("sub"), Algorithm::Nested);
    let path = dir.path().join("unwritable.json");
    std::fs::write(&path, unwritable.to_json()).unwrap();
    assert_eq!(svnr().args(["train", "--quiet", "--config"]).arg(&path).status().unwrap().code(), Some(2));

    let mut exploding = tiny_config(&dir.path().join("boom"), Algorithm::Nested);
    exploding.hyperparameters.policy_lr = 1e300;
    exploding.hyperparameters.critic_lr = 1e300;
    exploding.episodes = 50;
    let path = dir.path().join("boom.json");
    std::fs::write(&path, exploding.to_json()).unwrap();
    let out = svnr().args(["train", "--quiet", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(exploding.output_dir.join("seed_0/checkpoints/checkpoint_last_good.json").exists());

    let good = tiny_config(&dir.path().join("good"), Algorithm::Nested);
    let path = dir.path().join("good.json");
    std::fs::write(&path, good.to_json()).unwrap();
    assert_eq!(svnr().args(["train", "--quiet", "--config"]).arg(&path).status().unwrap().code(), Some(0));
    let run_dir = good.output_dir.clone();
    assert_eq!(svnr().args(["eval", "--run"]).arg(&run_dir).args(["--episodes", "100"]).status().unwrap().code(), Some(0));
    let out = dir.path().join("table");
    assert_eq!(svnr().args(["table", "--runs"]).arg(&run_dir).arg("--out").arg(&out).status().unwrap().code(), Some(0));
    assert!(out.with_extension("txt").exists());
    let curve = dir.path().join("curve");
    assert_eq!(svnr().args(["plot", "curves", "--run"]).arg(&run_dir).arg("--out").arg(&curve).status().unwrap().code(), Some(0));
    assert!(curve.with_extension("svg").exists());
    let sc = dir.path().join("scatter");
    let status = svnr().args(["plot", "scatter", "--actions"]).arg(run_dir.join("seed_0")).args(["--stride", "1"]).arg("--out").arg(&sc).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("scatter_u1u2.svg").exists());
}

#[test]
fn sweep_fills_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = tiny_config(dir.path(), Algorithm::Nested);
    base.seeds = vec![0];
    base.episodes = 3;
    let table = svnr_harness::sweep(&base, &[3.0, 1.5], &[Algorithm::Nested, Algorithm::Marginal], &quiet()).unwrap();
    assert_eq!(table.scenarios, ["max_of_three(3)", "max_of_three(1.5)"]);
    assert_eq!(table.cells.len(), 4);
    assert!(table.warnings.is_empty());
    assert!(dir.path().join("table.csv").exists());
    assert!(dir.path().join("marginal").join("max_of_three(1.5)").join("seed_0").join(EVAL_FILE).exists());
}
