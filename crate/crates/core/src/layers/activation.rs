use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest and largest values a softmax output may take. Saturated logits
/// would otherwise round to exactly 0 or 1.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `delta` where `input > 0`; the derivative at exactly zero is 0.
pub fn relu_backward(input: &Tensor, delta: &Tensor) -> Result<Tensor> {
    if input.shape() != delta.shape() {
        return Err(Error::shape(format!(
            "relu delta {:?} does not match input {:?}",
            delta.shape(),
            input.shape()
        )));
    }
    let mut out = delta.clone();
    for (d, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(out)
}

fn class_rows(shape: &[usize]) -> Result<usize> {
    match *shape {
        [k] => Ok(k),
        [_, k] => Ok(k),
        _ => Err(Error::shape(format!(
            "softmax expects [k] or [n, k], got {shape:?}"
        ))),
    }
}

/// Row-wise softmax with max subtraction. Outputs lie strictly inside (0, 1).
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    let k = class_rows(z.shape())?;
    let mut out = z.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = (*v / total).clamp(PROB_FLOOR, PROB_CEIL);
        }
    }
    Ok(out)
}

/// `J^T v` for the softmax Jacobian `J[i][j] = a[i] (1{i=j} - a[j])`, row-wise.
///
/// `J` is symmetric, so this is `a_i (v_i - sum_j a_j v_j)`.
pub fn softmax_jacobian_vp(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    if a.shape() != v.shape() {
        return Err(Error::shape(format!(
            "softmax jvp: {:?} vs {:?}",
            a.shape(),
            v.shape()
        )));
    }
    let k = class_rows(a.shape())?;
    let mut out = v.clone();
    for (row, probs) in out.data_mut().chunks_exact_mut(k).zip(a.data().chunks_exact(k)) {
        let dot: f64 = row.iter().zip(probs).map(|(x, p)| x * p).sum();
        for (x, &p) in row.iter_mut().zip(probs) {
            *x = p * (*x - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(&[-3.0, 0.0, 2.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.5]);
        let pos = Tensor::vector(&[0.0, 1.0, 4.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let d = relu_backward(
            &Tensor::vector(&[-1.0, 2.0]).unwrap(),
            &Tensor::vector(&[5.0, 5.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(d.data(), &[0.0, 5.0]);
        let at_zero = relu_backward(&Tensor::vector(&[0.0]).unwrap(), &Tensor::vector(&[1.0]).unwrap()).unwrap();
        assert_eq!(at_zero.data(), &[0.0]);
    }

    #[test]
    fn softmax_uniform() {
        let a = softmax(&Tensor::zeros(&[10]).unwrap()).unwrap();
        for &p in a.data() {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2() {
        let a = softmax(&Tensor::vector(&[2f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((a.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits() {
        // exp(-1000) is ~5e-435, far below f64 range: the exact answer rounds to [1, 0].
        let a = softmax(&Tensor::vector(&[1000.0, 0.0]).unwrap()).unwrap();
        assert!(a.all_finite());
        assert!((a.data()[0] - 1.0).abs() < 1e-15);
        assert!(a.data()[1] > 0.0 && a.data()[1] < 1e-300);
    }

    #[test]
    fn jvp_matches_explicit_jacobian() {
        let a = softmax(&Tensor::vector(&[0.3, -1.2, 2.0, 0.0]).unwrap()).unwrap();
        let v = Tensor::vector(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        let jvp = softmax_jacobian_vp(&a, &v).unwrap();
        let p = a.data();
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..4 {
                let jac = p[j] * (if i == j { 1.0 } else { 0.0 } - p[i]);
                s += jac * v.data()[j];
            }
            assert!((s - jvp.data()[i]).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in prop::collection::vec(-1000.0f64..1000.0, 1..16)) {
            let a = softmax(&Tensor::vector(&z).unwrap()).unwrap();
            prop_assert!((a.sum() - 1.0).abs() <= 1e-12);
            for &p in a.data() {
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
