//! Central finite-difference check of every backward pass.
//!
//! Each layer kind is checked on the scalar `L = sum(r * f(x))` for a fixed
//! random `r`, whose gradient with respect to `f(x)` is `r` itself. Networks
//! are checked on the quadratic cost of a small random batch. Dropout masks are
//! frozen by replaying the same random stream for every evaluation.
//!
//! A perturbation can push a ReLU input or a pooling window across its kink,
//! and then the central difference averages two different slopes. Such a
//! coordinate shows up as disagreeing one-sided differences; it may then match
//! either one-sided difference instead of the central one, and is counted in
//! the report.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, softmax, softmax_jacobian_vp, ConvLayer, DenseLayer, DropoutLayer,
    MaxPoolLayer, Padding,
};
use crate::network::{LayerSpec, Network};
use crate::optim::quadratic_cost_stacked;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;
/// One-sided differences further apart than this (relative) mark a kink.
pub const KINK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckScale {
    /// Every layer kind plus a small dense-only network.
    Tiny,
    /// Everything in `Tiny` plus a scaled-down copy of the convolutional
    /// classifier.
    Reduced,
}

impl FromStr for GradcheckScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "reduced" => Ok(Self::Reduced),
            other => Err(Error::param(format!("unknown scale {other:?}; expected tiny or reduced"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub scale: GradcheckScale,
    pub seed: u64,
    /// Scales every analytic network gradient by 1.01 before comparison. Only
    /// useful to confirm that the check can fail.
    pub corrupt_backward: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { scale: GradcheckScale::Reduced, seed: 0, corrupt_backward: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub case: String,
    pub tensor: String,
    pub worst_rel: f64,
    /// Coordinates where the step crossed a kink.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.worst_rel < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.worst_rel).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let mark = if e.worst_rel < self.tolerance { "ok  " } else { "FAIL" };
            write!(f, "{mark} {:<14} {:<16} worst rel err {:.3e}", e.case, e.tensor, e.worst_rel)?;
            if e.kinks > 0 {
                write!(f, " ({} kinked)", e.kinks)?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "{}: worst {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.worst(),
            self.tolerance
        )
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares one analytic partial derivative with finite differences of `f`
/// evaluated at `x - h`, `x` and `x + h`. Returns the relative error and
/// whether the point sits on a kink.
pub fn compare_partial(analytic: f64, down: f64, mid: f64, up: f64) -> (f64, bool) {
    let central = relative_error(analytic, (up - down) / (2.0 * FD_STEP));
    let forward = (up - mid) / FD_STEP;
    let backward = (mid - down) / FD_STEP;
    if relative_error(forward, backward) > KINK_THRESHOLD {
        let one_sided = relative_error(analytic, forward).min(relative_error(analytic, backward));
        (central.min(one_sided), true)
    } else {
        (central, false)
    }
}

/// Worst relative error between `analytic` and finite differences of `f`
/// around `x`, over every coordinate, and the number of kinked coordinates.
fn worst_over(x: &Tensor, analytic: &Tensor, f: &mut dyn FnMut(&Tensor) -> Result<f64>) -> Result<(f64, usize)> {
    let mut worst = 0.0f64;
    let mut kinks = 0;
    let mid = f(x)?;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        let (rel, kinked) = compare_partial(analytic.data()[i], down, mid, up);
        worst = worst.max(rel);
        kinks += usize::from(kinked);
    }
    Ok((worst, kinks))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn gaussian(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    Tensor::gaussian_fill(shape, 0.0, 1.0, rng)
}

/// Gaussian values pushed at least `margin` away from zero, so ReLU kinks stay
/// out of reach of the finite-difference step.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut Rng) -> Result<Tensor> {
    let mut t = gaussian(shape, rng)?;
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
    Ok(t)
}

struct Checker {
    entries: Vec<GradcheckEntry>,
}

impl Checker {
    fn add(&mut self, case: &str, tensor: &str, (worst_rel, kinks): (f64, usize)) {
        self.entries.push(GradcheckEntry { case: case.into(), tensor: tensor.into(), worst_rel, kinks });
    }
}

fn check_conv(c: &mut Checker, rng: &mut Rng, case: &str, stride: usize, padding: Padding) -> Result<()> {
    let x = gaussian(&[2, 5, 5, 2], rng)?;
    let k = gaussian(&[3, 3, 3, 2], rng)?;
    let b = gaussian(&[3], rng)?;
    let layer = ConvLayer::new(k.clone(), b.clone(), stride, padding)?;
    let r = gaussian(&layer.output_shape(x.shape())?, rng)?;
    let g = layer.backward(&x, &r)?;
    let delta_in = g.delta_in.expect("full backward returns an input delta");
    let w = worst_over(&x, &delta_in, &mut |x| Ok(dot(&r, &layer.forward(x)?)))?;
    c.add(case, "input", w);
    let w = worst_over(&k, &g.grad_kernels, &mut |k| {
        Ok(dot(&r, &ConvLayer::new(k.clone(), b.clone(), stride, padding)?.forward(&x)?))
    })?;
    c.add(case, "kernels", w);
    let w = worst_over(&b, &g.grad_biases, &mut |b| {
        Ok(dot(&r, &ConvLayer::new(k.clone(), b.clone(), stride, padding)?.forward(&x)?))
    })?;
    c.add(case, "biases", w);
    Ok(())
}

fn check_pool(c: &mut Checker, rng: &mut Rng) -> Result<()> {
    // Distinct, well-separated values keep every window's maximum unique.
    let mut order: Vec<usize> = (0..32).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.index(i + 1));
    }
    let x = Tensor::new(&[1, 4, 4, 2], order.iter().map(|&i| i as f64 * 0.1).collect())?;
    let mut pool = MaxPoolLayer::new(2, 2)?;
    let out = pool.forward(&x)?;
    let r = gaussian(out.shape(), rng)?;
    let analytic = pool.backward(&r)?;
    let w = worst_over(&x, &analytic, &mut |x| Ok(dot(&r, &pool.apply(x)?.0)))?;
    c.add("maxpool", "input", w);
    Ok(())
}

fn check_dense(c: &mut Checker, rng: &mut Rng) -> Result<()> {
    let x = gaussian(&[3, 5], rng)?;
    let wt = gaussian(&[4, 5], rng)?;
    let b = gaussian(&[4], rng)?;
    let layer = DenseLayer::new(wt.clone(), b.clone())?;
    let r = gaussian(&[3, 4], rng)?;
    let g = layer.backward(&x, &r)?;
    let w = worst_over(&x, &g.delta_in, &mut |x| Ok(dot(&r, &layer.forward(x)?)))?;
    c.add("dense", "input", w);
    let w = worst_over(&wt, &g.grad_w, &mut |wt| {
        Ok(dot(&r, &DenseLayer::new(wt.clone(), b.clone())?.forward(&x)?))
    })?;
    c.add("dense", "weights", w);
    let w = worst_over(&b, &g.grad_b, &mut |b| {
        Ok(dot(&r, &DenseLayer::new(wt.clone(), b.clone())?.forward(&x)?))
    })?;
    c.add("dense", "biases", w);
    Ok(())
}

fn check_activations(c: &mut Checker, rng: &mut Rng) -> Result<()> {
    let x = away_from_zero(&[3, 6], 1e-3, rng)?;
    let r = gaussian(x.shape(), rng)?;
    let w = worst_over(&x, &relu_backward(&x, &r)?, &mut |x| Ok(dot(&r, &relu(x))))?;
    c.add("relu", "input", w);

    let z = gaussian(&[3, 6], rng)?;
    let a = softmax(&z)?;
    let w = worst_over(&z, &softmax_jacobian_vp(&a, &r)?, &mut |z| Ok(dot(&r, &softmax(z)?)))?;
    c.add("softmax", "input", w);

    let mut drop = DropoutLayer::new(0.5)?;
    let stream = Rng::new(rng.next_u64());
    drop.forward(&x, Some(&mut stream.clone()))?;
    let analytic = drop.backward(&r)?;
    let mut frozen = drop.clone();
    let w = worst_over(&x, &analytic, &mut |x| {
        Ok(dot(&r, &frozen.forward(x, Some(&mut stream.clone()))?))
    })?;
    c.add("dropout", "input", w);
    Ok(())
}

fn tiny_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        LayerSpec::dense(6),
        LayerSpec::Relu,
        LayerSpec::dense(10),
        LayerSpec::Softmax,
    ]
}

/// The classifier's layer pattern at toy size: 8x8 input, 2 and 4 kernels,
/// a 16-unit hidden layer with dropout.
pub fn reduced_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(2, 3),
        LayerSpec::Relu,
        LayerSpec::pool2(),
        LayerSpec::conv(4, 3),
        LayerSpec::Relu,
        LayerSpec::pool2(),
        LayerSpec::Flatten,
        LayerSpec::dense(16),
        LayerSpec::Relu,
        LayerSpec::dropout(),
        LayerSpec::dense(10),
        LayerSpec::Softmax,
    ]
}

fn check_network(
    c: &mut Checker,
    rng: &mut Rng,
    case: &str,
    input: [usize; 3],
    specs: &[LayerSpec],
    corrupt: bool,
) -> Result<()> {
    let mut net = Network::from_specs(case, input, specs, 0.5, rng.next_u64())?;
    let n = 3;
    let mut shape = vec![n];
    shape.extend_from_slice(&input);
    let x = Tensor::new(&shape, (0..shape.iter().product()).map(|_| rng.uniform()).collect())?;
    let mut y = Tensor::zeros(&[n, 10])?;
    for row in 0..n {
        let label = rng.index(10);
        y.data_mut()[row * 10 + label] = 1.0;
    }
    let stream = net.dropout_rng().clone();
    net.forward(&x)?;
    let grads = net.backward(&y)?;
    let names = net.parameter_names();
    for (t, g) in grads.tensors().iter().enumerate() {
        let g = if corrupt { g.scale(1.01) } else { g.clone() };
        let p = net.parameters()[t].clone();
        let w = worst_over(&p, &g, &mut |p| {
            net.parameters_mut()[t].data_mut().copy_from_slice(p.data());
            net.set_dropout_rng(stream.clone());
            let a = net.forward(&x)?;
            quadratic_cost_stacked(&a, &y)
        })?;
        net.parameters_mut()[t].data_mut().copy_from_slice(p.data());
        c.add(case, &names[t], w);
    }
    Ok(())
}

/// Runs the suite and reports the worst relative error per tensor.
pub fn gradcheck(opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = Rng::new(opts.seed);
    let mut c = Checker { entries: Vec::new() };
    check_conv(&mut c, &mut rng, "conv same", 1, Padding::Same)?;
    check_conv(&mut c, &mut rng, "conv valid s2", 2, Padding::Valid)?;
    check_pool(&mut c, &mut rng)?;
    check_dense(&mut c, &mut rng)?;
    check_activations(&mut c, &mut rng)?;
    check_network(&mut c, &mut rng, "tiny net", [3, 3, 1], &tiny_specs(), opts.corrupt_backward)?;
    if opts.scale == GradcheckScale::Reduced {
        check_network(&mut c, &mut rng, "reduced net", [8, 8, 1], &reduced_specs(), opts.corrupt_backward)?;
    }
    Ok(GradcheckReport { entries: c.entries, tolerance: GRADCHECK_TOLERANCE })
}
