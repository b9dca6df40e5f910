//! Versioned CSV artifacts. Every file starts with a `# schema: <name>/<version>`
//! line followed by the column header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use svnr::agent::{ActionRecord, EpisodeMetrics};

use crate::HarnessError;

pub const METRICS_SCHEMA: &str = "svnr-metrics/1";
pub const ACTIONS_SCHEMA: &str = "svnr-actions/1";
pub const EVAL_SCHEMA: &str = "svnr-eval/1";
pub const TABLE_SCHEMA: &str = "svnr-table/1";
pub const CURVE_SCHEMA: &str = "svnr-curve/1";
pub const SCATTER_SCHEMA: &str = "svnr-scatter/1";

pub const METRICS_COLUMNS: [&str; 6] = ["episode", "return", "alpha", "critic_loss", "max_direction_norm", "clamp_count"];

/// Streams rows into a schema-tagged CSV file.
pub struct CsvSink {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, schema: &str, note: Option<&str>, header: &[String]) -> Result<Self, HarnessError> {
        let mut file = BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?);
        match note {
            Some(n) => writeln!(file, "# schema: {schema}; {n}"),
            None => writeln!(file, "# schema: {schema}"),
        }
        .map_err(|e| HarnessError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(CsvSink { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), HarnessError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.inner.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }
}

/// A parsed schema-tagged CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub note: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| HarnessError::io(path, e))?;
        let tag = first
            .trim_end()
            .strip_prefix("# schema: ")
            .ok_or_else(|| HarnessError::Format(format!("{} lacks a schema line", path.display())))?;
        let (schema, note) = match tag.split_once("; ") {
            Some((s, n)) => (s.to_string(), Some(n.to_string())),
            None => (tag.to_string(), None),
        };
        let mut csv = csv::ReaderBuilder::new().from_reader(reader);
        let header = csv.headers()?.iter().map(str::to_string).collect();
        let rows = csv
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(CsvTable { schema, note, header, rows })
    }

    pub fn expect_schema(self, schema: &str, path: &Path) -> Result<Self, HarnessError> {
        if self.schema != schema {
            return Err(HarnessError::Format(format!("{} has schema {}, expected {schema}", path.display(), self.schema)));
        }
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Format(format!("missing column {name}")))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>, HarnessError> {
        let k = self.column(name)?;
        self.rows.iter().map(|r| parse_f64(&r[k])).collect()
    }
}

pub fn parse_f64(s: &str) -> Result<f64, HarnessError> {
    s.trim().parse().map_err(|_| HarnessError::Format(format!("not a number: {s:?}")))
}

pub fn metrics_sink(path: &Path) -> Result<CsvSink, HarnessError> {
    CsvSink::create(path, METRICS_SCHEMA, None, &METRICS_COLUMNS.map(String::from))
}

pub fn metrics_fields(m: &EpisodeMetrics) -> [String; 6] {
    [
        m.episode.to_string(),
        m.ret.to_string(),
        m.alpha.to_string(),
        m.critic_loss.to_string(),
        m.max_direction_norm.to_string(),
        m.clamp_count.to_string(),
    ]
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeMetrics>, HarnessError> {
    let t = CsvTable::read(path)?.expect_schema(METRICS_SCHEMA, path)?;
    let idx: Vec<usize> = METRICS_COLUMNS.iter().map(|c| t.column(c)).collect::<Result<_, _>>()?;
    t.rows
        .iter()
        .map(|r| {
            let int = |k: usize| r[idx[k]].parse::<usize>().map_err(|_| HarnessError::Format(format!("bad integer {:?}", r[idx[k]])));
            Ok(EpisodeMetrics {
                episode: int(0)?,
                ret: parse_f64(&r[idx[1]])?,
                alpha: parse_f64(&r[idx[2]])?,
                critic_loss: parse_f64(&r[idx[3]])?,
                max_direction_norm: parse_f64(&r[idx[4]])?,
                clamp_count: int(5)?,
            })
        })
        .collect()
}

pub fn action_header(dim: usize) -> Vec<String> {
    std::iter::once("step".to_string())
        .chain((1..=dim).map(|k| format!("u{k}")))
        .chain(std::iter::once("reward".to_string()))
        .collect()
}

pub fn action_fields(a: &ActionRecord) -> Vec<String> {
    std::iter::once(a.step.to_string())
        .chain(a.action.iter().map(f64::to_string))
        .chain(std::iter::once(a.reward.to_string()))
        .collect()
}

pub fn write_actions(path: &Path, dim: usize, actions: &[ActionRecord], append: bool) -> Result<(), HarnessError> {
    if append && path.exists() {
        let file = std::fs::OpenOptions::new().append(true).open(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for a in actions {
            w.write_record(action_fields(a))?;
        }
        return w.flush().map_err(|e| HarnessError::io(path, e));
    }
    let mut sink = CsvSink::create(path, ACTIONS_SCHEMA, None, &action_header(dim))?;
    for a in actions {
        sink.row(action_fields(a))?;
    }
    sink.flush()
}

pub fn read_actions(path: &Path) -> Result<Vec<ActionRecord>, HarnessError> {
    let t = CsvTable::read(path)?.expect_schema(ACTIONS_SCHEMA, path)?;
    let dim = t.header.len().saturating_sub(2);
    t.rows
        .iter()
        .map(|r| {
            Ok(ActionRecord {
                step: r[0].parse().map_err(|_| HarnessError::Format(format!("bad step {:?}", r[0])))?,
                action: r[1..=dim].iter().map(|v| parse_f64(v)).collect::<Result<_, _>>()?,
                reward: parse_f64(&r[dim + 1])?,
            })
        })
        .collect()
}

pub fn write_eval(path: &Path, returns: &[f64]) -> Result<(), HarnessError> {
    let mut sink = CsvSink::create(path, EVAL_SCHEMA, None, &["episode".into(), "return".into()])?;
    for (k, r) in returns.iter().enumerate() {
        sink.row([k.to_string(), r.to_string()])?;
    }
    sink.flush()
}

pub fn read_eval(path: &Path) -> Result<Vec<f64>, HarnessError> {
    CsvTable::read(path)?.expect_schema(EVAL_SCHEMA, path)?.f64_column("return")
}
