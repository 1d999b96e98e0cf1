use crate::error::{Error, Result};
use crate::layers::conv::image_dims;
use crate::tensor::Tensor;

/// Max pooling over square windows, per channel.
///
/// The forward pass records the flat input index of every window's winner so
/// the backward pass can route gradients. Ties go to the lowest flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolLayer {
    window: usize,
    stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPoolLayer {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::param(format!(
                "pool window and stride must be positive, got {window} and {stride}"
            )));
        }
        Ok(Self {
            window,
            stride,
            cache: None,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Flat input indices of the winners from the last forward pass.
    pub fn argmax_cache(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|c| c.argmax.as_slice())
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let (_, h, w, c) = image_dims(input_shape, "maxpool")?;
        if h < self.window || w < self.window {
            return Err(Error::shape(format!(
                "pool window {} exceeds input {h}x{w}",
                self.window
            )));
        }
        let oh = (h - self.window) / self.stride + 1;
        let ow = (w - self.window) / self.stride + 1;
        Ok(if input_shape.len() == 4 {
            vec![input_shape[0], oh, ow, c]
        } else {
            vec![oh, ow, c]
        })
    }

    /// Pools without touching the cache; returns the output and winner indices.
    pub fn apply(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, h, w, c) = image_dims(input.shape(), "maxpool")?;
        let (oh, ow) = (out_shape[out_shape.len() - 3], out_shape[out_shape.len() - 2]);
        let x = input.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for e in 0..n {
            let base = e * h * w * c;
            for i in 0..oh {
                for j in 0..ow {
                    for ch in 0..c {
                        let mut best = base + ((i * self.stride) * w + j * self.stride) * c + ch;
                        for u in 0..self.window {
                            for v in 0..self.window {
                                let idx = base
                                    + ((i * self.stride + u) * w + j * self.stride + v) * c
                                    + ch;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        Ok((Tensor::new(&out_shape, out)?, argmax))
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, argmax) = self.apply(input)?;
        self.cache = Some(PoolCache {
            input_shape: input.shape().to_vec(),
            output_shape: out.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    pub fn backward(&self, delta_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("maxpool backward before any forward pass"))?;
        if delta_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "maxpool delta {:?} does not match cached output {:?}",
                delta_out.shape(),
                cache.output_shape
            )));
        }
        let mut delta_in = Tensor::zeros(&cache.input_shape)?;
        let dx = delta_in.data_mut();
        for (&idx, &d) in cache.argmax.iter().zip(delta_out.data()) {
            dx[idx] += d;
        }
        Ok(delta_in)
    }
}
