use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{Algorithm, ExperimentConfig};
use crate::records::{read_eval, CsvSink, TABLE_SCHEMA};
use crate::run::{CONFIG_FILE, EVAL_FILE};
use crate::HarnessError;

pub const MISSING: &str = "—";

/// Aggregate of the evaluation returns behind one table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Mean evaluation return of each seed.
    pub seed_means: Vec<f64>,
    /// Mean over seeds.
    pub mean: f64,
    /// Population std over seed means.
    pub std: f64,
    /// Population std over every evaluation episode of every seed.
    pub episode_std: f64,
}

impl Cell {
    pub fn from_returns(per_seed: &[Vec<f64>]) -> Self {
        let seed_means: Vec<f64> = per_seed.iter().map(|r| mean(r)).collect();
        let all: Vec<f64> = per_seed.iter().flatten().copied().collect();
        Cell { mean: mean(&seed_means), std: std(&seed_means), episode_std: std(&all), seed_means }
    }

    pub fn render(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Evaluation returns per (algorithm, scenario).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub scenarios: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub cells: BTreeMap<(Algorithm, String), Cell>,
    pub warnings: Vec<String>,
}

impl EvalTable {
    pub fn cell(&self, algorithm: Algorithm, scenario: &str) -> Option<&Cell> {
        self.cells.get(&(algorithm, scenario.to_string()))
    }

    pub fn render_cell(&self, algorithm: Algorithm, scenario: &str) -> String {
        self.cell(algorithm, scenario).map_or_else(|| MISSING.to_string(), Cell::render)
    }

    /// Aligned plain-text rendering with an episode-level footnote block.
    pub fn to_text(&self) -> String {
        let mut grid = vec![std::iter::once("method".to_string()).chain(self.scenarios.iter().cloned()).collect::<Vec<_>>()];
        for &a in &self.algorithms {
            let mut row = vec![a.label().to_string()];
            row.extend(self.scenarios.iter().map(|s| self.render_cell(a, s)));
            grid.push(row);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (k, row) in grid.iter().enumerate() {
            let line: Vec<String> =
                row.iter().zip(&widths).map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count()))).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
        }
        let _ = writeln!(out, "\nmean ± std over seeds; std over all evaluation episodes:");
        for ((a, s), cell) in &self.cells {
            let _ = writeln!(out, "  {} / {}: {:.2} ({} seeds)", a.label(), s, cell.episode_std, cell.seed_means.len());
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.txt`.
    pub fn write(&self, stem: &Path) -> Result<(), HarnessError> {
        let csv_path = stem.with_extension("csv");
        let header = ["algorithm", "scenario", "seeds", "mean", "std", "episode_std", "cell"].map(String::from);
        let mut sink = CsvSink::create(&csv_path, TABLE_SCHEMA, None, &header)?;
        for &a in &self.algorithms {
            for s in &self.scenarios {
                match self.cell(a, s) {
                    Some(c) => sink.row([
                        a.label().to_string(),
                        s.clone(),
                        c.seed_means.len().to_string(),
                        c.mean.to_string(),
                        c.std.to_string(),
                        c.episode_std.to_string(),
                        c.render(),
                    ])?,
                    None => sink.row([a.label(), s.as_str(), "0", "", "", "", MISSING])?,
                }
            }
        }
        sink.flush()?;
        let txt = stem.with_extension("txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| HarnessError::io(&txt, e))
    }
}

/// Builds the evaluation table from finished run directories. Columns
/// follow `scenario_order` when given, otherwise first appearance.
/// Cells with no evaluation data render as "—" and add a warning, which
/// is also printed to stderr.
pub fn build_table(run_dirs: &[PathBuf], scenario_order: Option<&[String]>) -> Result<EvalTable, HarnessError> {
    let mut returns: BTreeMap<(Algorithm, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut seen_scenarios: Vec<String> = Vec::new();
    let mut seen_algorithms: Vec<Algorithm> = Vec::new();
    let mut warnings = Vec::new();
    for dir in run_dirs {
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let label = config.scenario.label();
        if !seen_scenarios.contains(&label) {
            seen_scenarios.push(label.clone());
        }
        if !seen_algorithms.contains(&config.algorithm) {
            seen_algorithms.push(config.algorithm);
        }
        let slot = returns.entry((config.algorithm, label)).or_default();
        for &seed in &config.seeds {
            let path = dir.join(format!("seed_{seed}")).join(EVAL_FILE);
            if path.exists() {
                slot.push(read_eval(&path)?);
            } else {
                warnings.push(format!("{} has no evaluation file", path.display()));
            }
        }
    }
    let scenarios = scenario_order.map_or(seen_scenarios, <[String]>::to_vec);
    seen_algorithms.sort();
    let mut cells = BTreeMap::new();
    for (key, per_seed) in returns {
        let per_seed: Vec<Vec<f64>> = per_seed.into_iter().filter(|r| !r.is_empty()).collect();
        if !per_seed.is_empty() {
            cells.insert(key, Cell::from_returns(&per_seed));
        }
    }
    for &a in &seen_algorithms {
        for s in &scenarios {
            if !cells.contains_key(&(a, s.clone())) {
                warnings.push(format!("no completed run for {} on {s}", a.label()));
            }
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(EvalTable { scenarios, algorithms: seen_algorithms, cells, warnings })
}
