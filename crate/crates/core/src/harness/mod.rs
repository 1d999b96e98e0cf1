//! Experiment runner: training runs with CSV loss logs, the four-variant
//! layer-ordering sweep, and the finite-difference gradient check.

mod gradcheck;
mod log;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use gradcheck::{gradcheck, GradcheckEntry, GradcheckOptions, GradcheckReport, GradcheckScale, FD_STEP, GRADCHECK_TOLERANCE};
pub use log::{
    format_sig9, loss_columns, parse_csv, read_csv, records_to_csv, LogRecord, TrainingLog,
    CSV_HEADER, DEFAULT_SMOOTHING_WINDOW,
};

use crate::error::{Error, Result};
use crate::mnist::Dataset;
use crate::network::{train, variant_config, Network, NetworkConfig, Variant};
use crate::optim::Hyperparams;

/// Fraction of the run excluded from variance statistics.
pub const BURN_IN_FRACTION: f64 = 0.2;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Process exit status for an error surfaced by a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Checksum { .. } => EXIT_VERIFICATION,
        _ => EXIT_USAGE,
    }
}

pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkConfig::from_json(&text)
}

/// A finished training run.
#[derive(Debug)]
pub struct Experiment {
    pub log: TrainingLog,
    pub network: Network,
}

/// Trains `config` on `data` and writes the loss log to `out_csv`.
///
/// The config is validated and the output file created before any training
/// happens, so bad input fails fast.
pub fn run_experiment(config: &NetworkConfig, data: &Dataset, out_csv: &Path, window: usize) -> Result<Experiment> {
    config.validate()?;
    let mut network = Network::new(config)?;
    let mut log = TrainingLog::new(&config.name, config.hyper.seed, window)?;
    log.stream_to(out_csv)?;
    train(&mut network, data, &config.hyper, &mut log)?;
    Ok(Experiment { log, network })
}

/// Summary statistics of one loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub final_smoothed: f64,
    pub min_smoothed: f64,
    pub min_step: usize,
    /// Population variance of the smoothed loss over records after the burn-in.
    pub post_burn_in_variance: f64,
}

/// Last step that still counts as burn-in for a run of `steps` steps.
pub fn burn_in_step(steps: usize) -> usize {
    (steps as f64 * BURN_IN_FRACTION).floor() as usize
}

impl CurveStats {
    /// Statistics over `records`; `None` if there is nothing after the burn-in.
    pub fn from_records(records: &[LogRecord], burn_in_step: usize) -> Option<Self> {
        let last = records.last()?;
        let mut min = records[0];
        for r in records {
            if r.smoothed_loss < min.smoothed_loss {
                min = *r;
            }
        }
        let tail: Vec<f64> = records
            .iter()
            .filter(|r| r.step > burn_in_step)
            .map(|r| r.smoothed_loss)
            .collect();
        if tail.is_empty() {
            return None;
        }
        let n = tail.len() as f64;
        let mean = tail.iter().sum::<f64>() / n;
        let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            final_smoothed: last.smoothed_loss,
            min_smoothed: min.smoothed_loss,
            min_step: min.step,
            post_burn_in_variance: var,
        })
    }
}

/// Smoothed loss logged at exactly `step`.
pub fn smoothed_at(records: &[LogRecord], step: usize) -> Option<f64> {
    records.iter().find(|r| r.step == step).map(|r| r.smoothed_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant: Variant,
    pub csv: String,
    #[serde(flatten)]
    pub stats: CurveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub steps: usize,
    pub seed: u64,
    pub window: usize,
    pub burn_in_step: usize,
    pub variants: Vec<VariantStats>,
    /// Variants ordered from smoothest (lowest post-burn-in variance) to
    /// noisiest.
    pub ranking: Vec<Variant>,
}

impl SweepReport {
    pub fn get(&self, v: Variant) -> Option<&VariantStats> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "sweep: {} steps, seed {}, smoothing window {}, burn-in through step {}\n\n",
            self.steps, self.seed, self.window, self.burn_in_step
        );
        writeln!(s, "variant  final_smoothed  min_smoothed  min_step  post_burn_in_variance").unwrap();
        for v in &self.variants {
            writeln!(
                s,
                "{:<7}  {:>14}  {:>12}  {:>8}  {:>21}",
                v.variant.to_string(),
                format_sig9(v.stats.final_smoothed),
                format_sig9(v.stats.min_smoothed),
                v.stats.min_step,
                format_sig9(v.stats.post_burn_in_variance)
            )
            .unwrap();
        }
        let order: Vec<String> = self.ranking.iter().map(|v| v.to_string()).collect();
        writeln!(s, "\nsmoothest to noisiest: {}", order.join(" < ")).unwrap();
        s
    }
}

pub fn variant_csv_name(v: Variant) -> String {
    format!("variant_{v}.csv")
}

/// Trains each requested variant with the same hyperparameters and seed and
/// writes one CSV per variant plus `report.json` and `report.txt`.
///
/// Statistics are computed from the CSV contents as written, so they can be
/// reproduced exactly from the files.
pub fn run_sweep(variants: &[Variant], hyper: &Hyperparams, data: &Dataset, out_dir: &Path, window: usize) -> Result<SweepReport> {
    if variants.is_empty() {
        return Err(Error::param("a sweep needs at least one variant"));
    }
    let mut unique = variants.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != variants.len() {
        return Err(Error::param("variants must not repeat"));
    }
    hyper.validate().map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let burn_in = burn_in_step(hyper.steps);
    let mut stats = Vec::new();
    for &v in variants {
        let config = variant_config(v).with_hyper(hyper.clone());
        let csv = variant_csv_name(v);
        let path: PathBuf = out_dir.join(&csv);
        let run = run_experiment(&config, data, &path, window)?;
        let emitted = parse_csv(&run.log.to_csv())?;
        let s = CurveStats::from_records(&emitted, burn_in).ok_or_else(|| {
            Error::param(format!("variant {v}: no logged steps after the burn-in"))
        })?;
        stats.push(VariantStats { variant: v, csv, stats: s });
    }
    let mut ranking: Vec<&VariantStats> = stats.iter().collect();
    ranking.sort_by(|a, b| a.stats.post_burn_in_variance.total_cmp(&b.stats.post_burn_in_variance));
    let report = SweepReport {
        steps: hyper.steps,
        seed: hyper.seed,
        window,
        burn_in_step: burn_in,
        ranking: ranking.iter().map(|s| s.variant).collect(),
        variants: stats,
    };
    let json = out_dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(&json, e))?;
    let txt = out_dir.join("report.txt");
    fs::write(&txt, report.to_text()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}
