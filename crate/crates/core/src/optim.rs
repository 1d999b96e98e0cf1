//! Quadratic cost, output-layer error and minibatch stochastic gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::check_keep_prob;
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Learning rate.
    pub eta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub keep_prob: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            batch_size: 50,
            steps: 70_000,
            keep_prob: 0.5,
            seed: 42,
            log_every: 20,
        }
    }
}

impl Hyperparams {
    /// The reduced-length training run used for desk-scale experiments.
    pub fn desk_scale() -> Self {
        Self {
            steps: 3000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::param("log_every must be at least 1"));
        }
        check_keep_prob(self.keep_prob)
    }
}

/// One gradient tensor per network parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }
}

fn check_pair(a: &Tensor, y: &Tensor) -> Result<()> {
    if a.shape() != y.shape() {
        return Err(Error::shape(format!(
            "output {:?} and target {:?} differ",
            a.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// `C = 1/(2n) * sum_x |y(x) - a(x)|^2` over a batch of `n` examples.
pub fn quadratic_cost(outputs: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::param("quadratic cost of an empty batch"));
    }
    if outputs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} outputs but {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (a, y) in outputs.iter().zip(targets) {
        check_pair(a, y)?;
        total += squared_distance(a.data(), y.data());
    }
    Ok(total / (2.0 * outputs.len() as f64))
}

/// Quadratic cost for stacked `[n, k]` outputs and targets (or a single `[k]`).
pub fn quadratic_cost_stacked(outputs: &Tensor, targets: &Tensor) -> Result<f64> {
    check_pair(outputs, targets)?;
    let n = batch_rows(outputs);
    Ok(squared_distance(outputs.data(), targets.data()) / (2.0 * n as f64))
}

fn squared_distance(a: &[f64], y: &[f64]) -> f64 {
    a.iter().zip(y).map(|(a, y)| (y - a) * (y - a)).sum()
}

pub(crate) fn batch_rows(t: &Tensor) -> usize {
    if t.rank() == 1 {
        1
    } else {
        t.shape()[0]
    }
}

/// `(1/n)(a - y)`: the cost gradient with respect to the softmax output, before
/// it is chained through the softmax Jacobian.
pub fn output_delta(a: &Tensor, y: &Tensor, n: usize) -> Result<Tensor> {
    check_pair(a, y)?;
    if n == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    Ok(a.sub(y)?.scale(1.0 / n as f64))
}

/// `p <- p - eta * g` for every parameter tensor. Shapes are checked before
/// anything is written.
pub fn sgd_apply(net: &mut Network, grads: &GradientSet, eta: f64) -> Result<()> {
    let mut params = net.parameters_mut();
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    for (p, g) in params.iter_mut().zip(grads.tensors()) {
        p.scale_add_assign(-eta, g)?;
    }
    Ok(())
}

/// Stacks `[h, w, c]` (or `[k]`) examples into one batch tensor.
pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::param("cannot stack an empty batch"))?;
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::shape(format!(
                "batch items {:?} and {:?} differ",
                first.shape(),
                t.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(&shape, data)
}

/// Batch-averaged gradient of the quadratic cost, plus the batch cost itself.
pub fn minibatch_gradient(net: &mut Network, batch: &[(Tensor, Tensor)]) -> Result<(GradientSet, f64)> {
    if batch.is_empty() {
        return Err(Error::param("minibatch is empty"));
    }
    let xs: Vec<&Tensor> = batch.iter().map(|(x, _)| x).collect();
    let ys: Vec<&Tensor> = batch.iter().map(|(_, y)| y).collect();
    let x = stack(&xs)?;
    let y = stack(&ys)?;
    let a = net.forward(&x)?;
    let loss = quadratic_cost_stacked(&a, &y)?;
    let grads = net.backward(&y)?;
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x).unwrap()
    }

    #[test]
    fn cost_cases() {
        let y = vec![v(&[1.0, 0.0])];
        assert_eq!(quadratic_cost(&y, &y).unwrap(), 0.0);
        assert_eq!(quadratic_cost(&[v(&[0.0, 0.0])], &y).unwrap(), 0.5);
        let a = vec![v(&[0.2, 0.8]), v(&[0.6, 0.4])];
        let t = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let once = quadratic_cost(&a, &t).unwrap();
        let a2: Vec<Tensor> = a.iter().chain(&a).cloned().collect();
        let t2: Vec<Tensor> = t.iter().chain(&t).cloned().collect();
        assert!((quadratic_cost(&a2, &t2).unwrap() - once).abs() < 1e-15);
        assert!(matches!(quadratic_cost(&[], &[]), Err(Error::Param(_))));
        assert!(matches!(quadratic_cost(&[v(&[1.0])], &y), Err(Error::Shape(_))));
    }

    #[test]
    fn stacked_cost_matches_list_cost() {
        let a = vec![v(&[0.2, 0.8]), v(&[0.6, 0.4]), v(&[0.5, 0.5])];
        let t = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.0, 1.0])];
        let sa = stack(&a.iter().collect::<Vec<_>>()).unwrap();
        let st = stack(&t.iter().collect::<Vec<_>>()).unwrap();
        let list = quadratic_cost(&a, &t).unwrap();
        assert!((quadratic_cost_stacked(&sa, &st).unwrap() - list).abs() < 1e-15);
    }

    #[test]
    fn output_delta_cases() {
        let y = v(&[1.0, 0.0]);
        assert_eq!(output_delta(&y, &y, 1).unwrap().max_abs(), 0.0);
        let a = v(&[0.5, 0.5]);
        assert_eq!(output_delta(&a, &y, 1).unwrap().data(), &[-0.5, 0.5]);
        let one = output_delta(&a, &y, 2).unwrap();
        let four = output_delta(&a, &y, 8).unwrap();
        assert_eq!(one.scale(0.25), four);
        assert!(output_delta(&a, &v(&[1.0]), 1).is_err());
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        for bad in [
            Hyperparams { eta: 0.0, ..Default::default() },
            Hyperparams { batch_size: 0, ..Default::default() },
            Hyperparams { keep_prob: 0.0, ..Default::default() },
            Hyperparams { log_every: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Param(_))));
        }
    }

    #[test]
    fn hyperparams_reject_unknown_keys() {
        let err = serde_json::from_str::<Hyperparams>(r#"{"eta": 0.1, "momentum": 0.9}"#);
        assert!(err.is_err());
        let ok: Hyperparams = serde_json::from_str(r#"{"eta": 0.1}"#).unwrap();
        assert_eq!(ok.batch_size, 50);
    }
}
