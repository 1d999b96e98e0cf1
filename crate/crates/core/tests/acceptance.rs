//! Acceptance suite: one PASS/WARN/FAIL/SKIP line per criterion.
//!
//! Criteria 3, 4, 7 and 8 need the four uncompressed MNIST files, looked up in
//! `$CNNFORGE_MNIST_DIR` or `data/mnist` at the workspace root
//! (`scripts/fetch_mnist.sh` downloads them). Without the files those criteria
//! are reported as SKIP; set `CNNFORGE_REQUIRE_DATA=1` to turn SKIP into FAIL.
//! The training criteria take a few hours on one core. Set
//! `CNNFORGE_ACCEPTANCE_FAST=1` to skip them, and `CNNFORGE_FULL_RUN=1` to
//! additionally train variant D for the full 70000 steps (informational only).
//!
//! Run artifacts land in `target/tmp/acceptance/`.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cnnforge::harness::{
    gradcheck, loss_columns, read_csv, run_experiment, run_sweep, smoothed_at, variant_csv_name,
    GradcheckOptions, GradcheckScale, DEFAULT_SMOOTHING_WINDOW,
};
use cnnforge::layers::{softmax, ConvLayer, DropoutLayer, Mode};
use cnnforge::mnist::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, Dataset, RawImage,
    Split,
};
use cnnforge::network::{
    canonical_config, checkpoint_bytes, evaluate, variant_config, Network, NetworkConfig, Variant,
};
use cnnforge::optim::Hyperparams;
use cnnforge::{Rng, Tensor};
use common::{brute_force, random_case};

const GRADCHECK_SEEDS: u64 = 5;
const CONV_INSTANCES: usize = 50;
const LOSS_TARGET: f64 = 0.1;
const LOSS_WARN: f64 = 0.15;
const ACCURACY_TARGET: f64 = 0.90;
const EARLY_STEP: usize = 200;
const SOFTMAX_TRIALS: usize = 10_000;
const SOFTMAX_SUM_TOL: f64 = 1e-12;
const SOFTMAX_MAX_MAGNITUDE: f64 = 1e3;
const DROPOUT_ELEMENTS: usize = 100_000;
const DROPOUT_MEAN_RANGE: (f64, f64) = (0.98, 1.02);
const TRAIN_EXAMPLES: usize = 60_000;
const TEST_EXAMPLES: usize = 10_000;
const FULL_RUN_STEPS: usize = 70_000;

enum Outcome {
    Pass(String),
    Warn(String),
    Fail(String),
    Skip(String),
}

struct Suite {
    failures: usize,
    require_data: bool,
}

impl Suite {
    fn report(&mut self, id: &str, name: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Warn(d) => ("WARN", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) if self.require_data => ("FAIL", format!("required data missing: {d}")),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            self.failures += 1;
        }
        println!("{tag} criterion {id} ({name}) [{secs:.1}s]: {detail}");
        std::io::stdout().flush().unwrap();
    }
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("CNNFORGE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradient_fidelity() -> Outcome {
    let mut worst = 0.0f64;
    let mut kinks = 0;
    let mut tensors = 0;
    for seed in 0..GRADCHECK_SEEDS {
        let opts = GradcheckOptions { scale: GradcheckScale::Reduced, seed, corrupt_backward: false };
        let report = match gradcheck(opts) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        if !report.passed() {
            return Outcome::Fail(format!("seed {seed}\n{report}"));
        }
        worst = worst.max(report.worst());
        kinks += report.entries.iter().map(|e| e.kinks).sum::<usize>();
        tensors += report.entries.len();
    }
    Outcome::Pass(format!(
        "{tensors} tensors over {GRADCHECK_SEEDS} seeds, worst relative error {worst:.2e} < 1e-4 ({kinks} kinked coordinates)"
    ))
}

fn conv_oracle() -> Outcome {
    let mut rng = Rng::new(0xC0DE);
    for n in 0..CONV_INSTANCES {
        let case = random_case(&mut rng);
        let x = Tensor::gaussian_fill(&[case.h, case.w, case.c], 0.0, 1.0, &mut rng).unwrap();
        let k = Tensor::gaussian_fill(&[case.o, case.k, case.k, case.c], 0.0, 1.0, &mut rng).unwrap();
        let b = Tensor::gaussian_fill(&[case.o], 0.0, 1.0, &mut rng).unwrap();
        let got = ConvLayer::new(k.clone(), b.clone(), case.stride, case.padding)
            .and_then(|l| l.forward(&x));
        let want = brute_force(&x, &k, &b, case.stride, case.padding);
        match got {
            Ok(t) if t.shape() == want.shape() && t.data() == want.data() => {}
            Ok(_) => return Outcome::Fail(format!("instance {n} differs from the direct sum")),
            Err(e) => return Outcome::Fail(format!("instance {n}: {e}")),
        }
    }
    Outcome::Pass(format!("{CONV_INSTANCES} random instances bit-identical to the direct sum"))
}

fn softmax_invariants() -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst_sum = 0.0f64;
    for trial in 0..SOFTMAX_TRIALS {
        let len = 2 + rng.index(19);
        let scale = SOFTMAX_MAX_MAGNITUDE.powf(rng.uniform());
        let z: Vec<f64> = (0..len).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect();
        let a = softmax(&Tensor::new(&[len], z).unwrap()).unwrap();
        let err = (a.sum() - 1.0).abs();
        worst_sum = worst_sum.max(err);
        if err > SOFTMAX_SUM_TOL {
            return Outcome::Fail(format!("trial {trial}: sum off by {err:e}"));
        }
        if !a.data().iter().all(|&p| p > 0.0 && p < 1.0) {
            return Outcome::Fail(format!("trial {trial}: output outside (0,1)"));
        }
    }
    Outcome::Pass(format!(
        "{SOFTMAX_TRIALS} trials with |z| up to 1e3, worst |sum - 1| = {worst_sum:.1e}"
    ))
}

fn dropout_expectation() -> Outcome {
    let ones = Tensor::filled(&[DROPOUT_ELEMENTS], 1.0).unwrap();
    let mut layer = DropoutLayer::new(0.5).unwrap();
    let mut rng = Rng::new(6);
    let mean = layer.forward(&ones, Some(&mut rng)).unwrap().sum() / DROPOUT_ELEMENTS as f64;
    layer.set_mode(Mode::Infer);
    let x = Tensor::gaussian_fill(&[1000], 0.0, 1.0, &mut rng).unwrap();
    let identity = layer.forward(&x, None).unwrap() == x;
    let (lo, hi) = DROPOUT_MEAN_RANGE;
    let detail = format!("train mean {mean:.4} (range [{lo}, {hi}]), infer identity: {identity}");
    if (lo..=hi).contains(&mean) && identity {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn check_dataset(d: &Dataset, expected: usize) -> Result<(), String> {
    if d.len() != expected {
        return Err(format!("{} split has {} examples, expected {expected}", d.split(), d.len()));
    }
    for (i, (x, y)) in d.images().iter().zip(d.labels()).enumerate() {
        if x.shape() != [28, 28, 1] || !x.data().iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(format!("{} image {i} is not 28x28x1 in [0,1]", d.split()));
        }
        let ones = y.data().iter().filter(|&&v| v == 1.0).count();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        if y.len() != 10 || ones != 1 || zeros != 9 {
            return Err(format!("{} label {i} is not one-hot", d.split()));
        }
    }
    Ok(())
}

fn synthetic_round_trip() -> Result<(), String> {
    let mut rng = Rng::new(7);
    let images: Vec<RawImage> = (0..25)
        .map(|_| RawImage { rows: 28, cols: 28, pixels: (0..784).map(|_| rng.index(256) as u8).collect() })
        .collect();
    let labels: Vec<u8> = (0..25).map(|_| rng.index(10) as u8).collect();
    let ib = encode_idx_images(&images).map_err(|e| e.to_string())?;
    let lb = encode_idx_labels(&labels);
    let images2 = parse_idx_images(&ib).map_err(|e| e.to_string())?;
    let labels2 = parse_idx_labels(&lb).map_err(|e| e.to_string())?;
    let ib2 = encode_idx_images(&images2).map_err(|e| e.to_string())?;
    if images2 != images || labels2 != labels || ib2 != ib || encode_idx_labels(&labels2) != lb {
        return Err("synthetic IDX round trip is not byte-exact".into());
    }
    Ok(())
}

fn ingestion(train: &cnnforge::Result<Dataset>, test: &cnnforge::Result<Dataset>) -> Outcome {
    if let Err(e) = synthetic_round_trip() {
        return Outcome::Fail(e);
    }
    let (train, test) = match (train, test) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(cnnforge::Error::Io { path, .. }), _) | (_, Err(cnnforge::Error::Io { path, .. })) => {
            return Outcome::Skip(format!(
                "synthetic round trip byte-exact; cannot read {}",
                path.display()
            ))
        }
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e.to_string()),
    };
    for (d, n) in [(train, TRAIN_EXAMPLES), (test, TEST_EXAMPLES)] {
        if let Err(e) = check_dataset(d, n) {
            return Outcome::Fail(e);
        }
    }
    Outcome::Pass(
        "60000 train / 10000 test, SHA-256 verified, pixels in [0,1], labels one-hot; synthetic round trip byte-exact"
            .into(),
    )
}

struct CanonicalRun {
    checkpoint: Vec<u8>,
    losses: String,
}

fn canonical_run(train: &Dataset, name: &str) -> cnnforge::Result<(CanonicalRun, Network, f64)> {
    let config: NetworkConfig = canonical_config().with_hyper(Hyperparams::desk_scale());
    let run = run_experiment(&config, train, &artifacts().join(name), DEFAULT_SMOOTHING_WINDOW)?;
    let last = run.log.records().last().map_or(f64::NAN, |r| r.smoothed_loss);
    let out = CanonicalRun { checkpoint: checkpoint_bytes(&run.network, &config), losses: loss_columns(&run.log.to_csv()) };
    std::fs::write(artifacts().join(name.replace(".csv", ".ckpt")), &out.checkpoint).unwrap();
    Ok((out, run.network, last))
}

fn desk_training(train: &Dataset, test: &Dataset) -> (Outcome, Option<CanonicalRun>) {
    let (run, net, loss) = match canonical_run(train, "canonical_1.csv") {
        Ok(r) => r,
        Err(e) => return (Outcome::Fail(e.to_string()), None),
    };
    let acc = match evaluate(&net, test) {
        Ok(e) => e.accuracy,
        Err(e) => return (Outcome::Fail(e.to_string()), Some(run)),
    };
    let detail = format!(
        "smoothed loss at step 3000 = {loss:.4} (target < {LOSS_TARGET}, warn <= {LOSS_WARN}); test accuracy = {acc:.4} (target >= {ACCURACY_TARGET})"
    );
    let outcome = if acc < ACCURACY_TARGET || loss.is_nan() || loss > LOSS_WARN {
        Outcome::Fail(detail)
    } else if loss < LOSS_TARGET {
        Outcome::Pass(detail)
    } else {
        Outcome::Warn(detail)
    };
    (outcome, Some(run))
}

fn determinism(train: &Dataset, first: Option<CanonicalRun>) -> Outcome {
    let Some(first) = first else {
        return Outcome::Fail("first canonical run did not complete".into());
    };
    let second = match canonical_run(train, "canonical_2.csv") {
        Ok((r, _, _)) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let same_ckpt = first.checkpoint == second.checkpoint;
    let same_losses = first.losses == second.losses;
    let detail = format!(
        "checkpoints ({} bytes) bit-identical: {same_ckpt}; CSV loss columns identical: {same_losses}",
        first.checkpoint.len()
    );
    if same_ckpt && same_losses {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn sweep(train: &Dataset) -> Outcome {
    let dir = artifacts().join("sweep");
    let report = match run_sweep(&Variant::ALL, &Hyperparams::desk_scale(), train, &dir, DEFAULT_SMOOTHING_WINDOW) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut lines = Vec::new();
    let mut descent = true;
    for v in Variant::ALL {
        let s = &report.get(v).unwrap().stats;
        let records = read_csv(&dir.join(variant_csv_name(v))).unwrap();
        let early = smoothed_at(&records, EARLY_STEP).unwrap_or(f64::NAN);
        descent &= s.final_smoothed < early;
        lines.push(format!(
            "{v}: step {EARLY_STEP} {early:.4} -> final {:.4}, post-burn-in variance {:.3e}",
            s.final_smoothed, s.post_burn_in_variance
        ));
    }
    let var = |v: Variant| report.get(v).unwrap().stats.post_burn_in_variance;
    let c_highest = Variant::ALL.iter().all(|&v| v == Variant::C || var(Variant::C) > var(v));
    let d_lowest = Variant::ALL.iter().all(|&v| v == Variant::D || var(Variant::D) < var(v));
    let order: Vec<String> = report.ranking.iter().map(|v| v.to_string()).collect();
    let detail = format!(
        "(a) descent {}; (b) C noisiest {}; (c) D smoothest {}; smoothest to noisiest {}\n    {}",
        verdict(descent),
        verdict(c_highest),
        verdict(d_lowest),
        order.join(" < "),
        lines.join("\n    ")
    );
    if descent && c_highest && d_lowest {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "does not hold"
    }
}

fn full_run(train: &Dataset) {
    let started = Instant::now();
    let hyper = Hyperparams { steps: FULL_RUN_STEPS, ..Hyperparams::default() };
    let config = variant_config(Variant::D).with_hyper(hyper);
    match run_experiment(&config, train, &artifacts().join("variant_D_full.csv"), DEFAULT_SMOOTHING_WINDOW) {
        Ok(run) => {
            let loss = run.log.records().last().map_or(f64::NAN, |r| r.smoothed_loss);
            println!(
                "INFO full run: variant D after {FULL_RUN_STEPS} steps, smoothed loss {loss:.4} [{:.0}s]",
                started.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("INFO full run failed: {e}"),
    }
}

fn main() {
    // Accept and ignore libtest arguments such as --nocapture.
    let listing = std::env::args().any(|a| a == "--list");
    if listing {
        return;
    }
    let mut suite = Suite { failures: 0, require_data: env_flag("CNNFORGE_REQUIRE_DATA") };
    let fast = env_flag("CNNFORGE_ACCEPTANCE_FAST");

    let t = Instant::now();
    suite.report("1", "gradient fidelity", t, gradient_fidelity());
    let t = Instant::now();
    suite.report("2", "convolution oracle", t, conv_oracle());
    let t = Instant::now();
    suite.report("5", "softmax invariants", t, softmax_invariants());
    let t = Instant::now();
    suite.report("6", "dropout expectation", t, dropout_expectation());

    let t = Instant::now();
    let dir = mnist_dir();
    let train = Dataset::load_verified(&dir, Split::Train);
    let test = Dataset::load_verified(&dir, Split::Test);
    suite.report("7", "MNIST ingestion", t, ingestion(&train, &test));

    match (&train, &test) {
        (Ok(train), Ok(test)) if !fast => {
            let t = Instant::now();
            let (outcome, first) = desk_training(train, test);
            suite.report("3", "desk-scale training", t, outcome);
            let t = Instant::now();
            suite.report("8", "determinism", t, determinism(train, first));
            let t = Instant::now();
            suite.report("4", "sweep reproduction", t, sweep(train));
            if env_flag("CNNFORGE_FULL_RUN") {
                full_run(train);
            }
        }
        _ => {
            let why = if fast {
                "CNNFORGE_ACCEPTANCE_FAST is set".to_string()
            } else {
                format!("MNIST files not loaded from {}", dir.display())
            };
            for (id, name) in [("3", "desk-scale training"), ("8", "determinism"), ("4", "sweep reproduction")] {
                if fast {
                    println!("SKIP criterion {id} ({name}): {why}");
                } else {
                    suite.report(id, name, Instant::now(), Outcome::Skip(why.clone()));
                }
            }
        }
    }

    println!("acceptance: {} criteria failed", suite.failures);
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
