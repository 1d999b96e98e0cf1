use crate::error::{Error, Result};
use crate::tensor::{gemm, transpose_raw, Tensor};

/// Fully connected layer producing the pre-activation `z = W a + b`.
///
/// `weights` is `[out][in]`. Inputs are `[in]` or a batch `[n][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    biases: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub delta_in: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        if weights.rank() != 2 || biases.shape() != [weights.shape()[0]] {
            return Err(Error::shape(format!(
                "dense weights {:?} and biases {:?} are inconsistent",
                weights.shape(),
                biases.shape()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.biases]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    fn batch_of(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [len] if len == self.inputs() => Ok(1),
            [n, len] if len == self.inputs() => Ok(n),
            _ => Err(Error::shape(format!(
                "dense layer takes {} inputs, got shape {shape:?}",
                self.inputs()
            ))),
        }
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let n = self.batch_of(input_shape)?;
        Ok(if input_shape.len() == 2 {
            vec![n, self.outputs()]
        } else {
            vec![self.outputs()]
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = self.batch_of(input.shape())?;
        let (out, inp) = (self.outputs(), self.inputs());
        let w_t = transpose_raw(out, inp, self.weights.data());
        let mut z = vec![0.0; n * out];
        gemm(n, inp, out, input.data(), &w_t, &mut z, false);
        for row in z.chunks_exact_mut(out) {
            for (v, &b) in row.iter_mut().zip(self.biases.data()) {
                *v += b;
            }
        }
        Tensor::new(&self.output_shape(input.shape())?, z)
    }

    /// `grad_w = delta_z^T a`, `grad_b = sum_n delta_z`, `delta_in = delta_z W`
    /// (the transpose-weighted back-propagated error).
    pub fn backward(&self, input: &Tensor, delta_z: &Tensor) -> Result<DenseGrads> {
        let n = self.batch_of(input.shape())?;
        let expected = self.output_shape(input.shape())?;
        if delta_z.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "dense delta {:?} does not match output {expected:?}",
                delta_z.shape()
            )));
        }
        let (out, inp) = (self.outputs(), self.inputs());
        let delta_t = transpose_raw(n, out, delta_z.data());
        let mut grad_w = vec![0.0; out * inp];
        gemm(out, n, inp, &delta_t, input.data(), &mut grad_w, false);
        let mut grad_b = vec![0.0; out];
        for row in delta_z.data().chunks_exact(out) {
            for (g, &d) in grad_b.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut delta_in = vec![0.0; n * inp];
        gemm(n, out, inp, delta_z.data(), self.weights.data(), &mut delta_in, false);
        Ok(DenseGrads {
            delta_in: Tensor::new(input.shape(), delta_in)?,
            grad_w: Tensor::new(self.weights.shape(), grad_w)?,
            grad_b: Tensor::new(&[out], grad_b)?,
        })
    }
}
