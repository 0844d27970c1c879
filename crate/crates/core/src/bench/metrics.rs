//! The single CSV schema shared by every command.

use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::error::Result;

/// Row kinds: `train` for environment steps, `eval` for one pair at one
/// step, `eval_mean` / `eval_std` for per-step aggregates over pairs.
pub const KINDS: [&str; 4] = ["train", "eval", "eval_mean", "eval_std"];

pub const HEADER: [&str; 14] = [
    "run_id",
    "kind",
    "global_step",
    "pair",
    "t",
    "dice",
    "reward",
    "ncc",
    "q_loss",
    "planner_loss",
    "reg_loss",
    "alpha_loss",
    "alpha",
    "wall_clock",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub kind: String,
    pub global_step: u64,
    /// Pair index, empty for aggregates.
    pub pair: Option<usize>,
    pub t: usize,
    pub dice: f64,
    pub reward: f64,
    pub ncc: f64,
    pub q_loss: f64,
    pub planner_loss: f64,
    pub reg_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Seconds since the command started; 0 in deterministic mode.
    pub wall_clock: f64,
}

impl MetricsRow {
    fn record(&self) -> [String; 14] {
        [
            self.run_id.clone(),
            self.kind.clone(),
            self.global_step.to_string(),
            self.pair.map_or_else(String::new, |p| p.to_string()),
            self.t.to_string(),
            self.dice.to_string(),
            self.reward.to_string(),
            self.ncc.to_string(),
            self.q_loss.to_string(),
            self.planner_loss.to_string(),
            self.reg_loss.to_string(),
            self.alpha_loss.to_string(),
            self.alpha.to_string(),
            self.wall_clock.to_string(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let field = |i: usize| r.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| {
                crate::Error::Config(format!("metrics column `{}`: bad value `{}`", HEADER[i], field(i)))
            })
        };
        Ok(Self {
            run_id: field(0).to_owned(),
            kind: field(1).to_owned(),
            global_step: num(2)? as u64,
            pair: if field(3).is_empty() { None } else { Some(num(3)? as usize) },
            t: num(4)? as usize,
            dice: num(5)?,
            reward: num(6)?,
            ncc: num(7)?,
            q_loss: num(8)?,
            planner_loss: num(9)?,
            reg_loss: num(10)?,
            alpha_loss: num(11)?,
            alpha: num(12)?,
            wall_clock: num(13)?,
        })
    }
}

/// Appends rows to a CSV file, flushing after every write.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates (or truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(File::create(path)?);
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    /// Opens `path` for appending; writes the header if the file is new or empty.
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            inner.write_record(HEADER)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.record())?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(MetricsRow::from_record(&rec?)?);
    }
    Ok(rows)
}

/// Drops rows recorded after `step`, as a resumed run will write them again.
pub fn truncate_after(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<MetricsRow> = read_metrics(path)?
        .into_iter()
        .filter(|r| r.global_step <= step)
        .collect();
    let mut w = MetricsWriter::create(path)?;
    for r in &keep {
        w.write(r)?;
    }
    Ok(())
}
