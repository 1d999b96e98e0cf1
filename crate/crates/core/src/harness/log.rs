use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::LossSink;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 100;
pub const CSV_HEADER: &str = "step,raw_loss,smoothed_loss,elapsed_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
    pub elapsed_ms: u64,
}

/// Logged losses of one training run. `smoothed_loss` is the mean of the last
/// `window` raw losses (fewer at the start of the run).
#[derive(Debug)]
pub struct TrainingLog {
    config_name: String,
    seed: u64,
    window: usize,
    records: Vec<LogRecord>,
    started: Instant,
    stream: Option<(PathBuf, BufWriter<File>)>,
}

impl TrainingLog {
    pub fn new(config_name: &str, seed: u64, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::param("smoothing window must be at least 1"));
        }
        Ok(Self {
            config_name: config_name.to_string(),
            seed,
            window,
            records: Vec::new(),
            started: Instant::now(),
            stream: None,
        })
    }

    /// Writes the CSV header to `path` now and appends each row as it is
    /// recorded.
    pub fn stream_to(&mut self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_csv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        self.stream = Some((path.to_path_buf(), w));
        Ok(())
    }

    pub fn config_name(&self) -> &str {
        &self.config_name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn push(&mut self, step: usize, raw_loss: f64, elapsed_ms: u64) -> Result<()> {
        if let Some(last) = self.records.last() {
            if step <= last.step {
                return Err(Error::param(format!(
                    "log steps must increase: {step} after {}",
                    last.step
                )));
            }
        }
        let start = (self.records.len() + 1).saturating_sub(self.window);
        let tail = self.records[start..].iter().map(|r| r.raw_loss).chain([raw_loss]);
        let smoothed_loss = tail.sum::<f64>() / (self.records.len() + 1 - start) as f64;
        self.records.push(LogRecord { step, raw_loss, smoothed_loss, elapsed_ms });
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl LossSink for TrainingLog {
    fn record(&mut self, step: usize, raw_loss: f64) -> Result<()> {
        let elapsed = self.started.elapsed().as_millis() as u64;
        self.push(step, raw_loss, elapsed)?;
        if let Some((path, w)) = &mut self.stream {
            let r = self.records.last().unwrap();
            w.write_all(record_row(r).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

fn record_row(r: &LogRecord) -> String {
    format!(
        "{},{},{},{}\n",
        r.step,
        format_sig9(r.raw_loss),
        format_sig9(r.smoothed_loss),
        r.elapsed_ms
    )
}

/// Plain decimal with 9 significant digits, e.g. `0.123456789` or `1234.56789`.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn records_to_csv(records: &[LogRecord]) -> String {
    let mut out = String::with_capacity(40 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&record_row(r));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<LogRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Value(format!("CSV header must be {CSV_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Value(format!("malformed CSV row {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LogRecord {
                step: f[0].parse().map_err(|_| bad())?,
                raw_loss: f[1].parse().map_err(|_| bad())?,
                smoothed_loss: f[2].parse().map_err(|_| bad())?,
                elapsed_ms: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<LogRecord>> {
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// The CSV with the wall-clock column dropped, for run-to-run comparison.
pub fn loss_columns(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
