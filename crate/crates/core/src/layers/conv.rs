use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, transpose_raw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-pad so the output extent is `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

/// A bank of `out_channels` kernels with one shared bias each.
///
/// Kernels are stored `[out_channels][kh][kw][in_channels]`. The layer computes
/// a cross-correlation (no kernel flip):
///
/// `out[i][j][o] = bias[o] + sum_{u,v,c} x_pad[i*s+u][j*s+v][c] * k[o][u][v][c]`
///
/// The sum runs over `(u, v, c)` in row-major order starting from `0.0`, and
/// the bias is added last.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    kernels: Tensor,
    biases: Tensor,
    stride: usize,
    padding: Padding,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// Absent when the caller asked for parameter gradients only.
    pub delta_in: Option<Tensor>,
    pub grad_kernels: Tensor,
    pub grad_biases: Tensor,
}

/// Resolved spatial geometry for one input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub(crate) fn new(
        (h, w, c): (usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (oh, pad_top) = axis(h, kh, stride, padding)
            .ok_or_else(|| Error::shape(format!("kernel height {kh} exceeds input height {h}")))?;
        let (ow, pad_left) = axis(w, kw, stride, padding)
            .ok_or_else(|| Error::shape(format!("kernel width {kw} exceeds input width {w}")))?;
        Ok(Self {
            h,
            w,
            c,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row/column for output position `i` and kernel offset `u`, if it
    /// falls inside the unpadded input.
    #[inline]
    fn source(&self, i: usize, u: usize, pad: usize, extent: usize) -> Option<usize> {
        (i * self.stride + u).checked_sub(pad).filter(|&r| r < extent)
    }
}

/// Output spatial extent of a square-kernel convolution over `[h, w, c]`.
pub(crate) fn conv_geometry(
    (h, w, c): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let g = ConvGeometry::new((h, w, c), (kernel, kernel), stride, padding)?;
    Ok((g.oh, g.ow))
}

/// Output extent and leading pad for one spatial axis.
fn axis(n: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (n >= k).then(|| ((n - k) / stride + 1, 0)),
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Some((out, total / 2))
        }
    }
}

/// Unrolls one `[h][w][c]` image into `[positions][kh*kw*c]` patches.
fn im2col(g: &ConvGeometry, x: &[f64], patches: &mut [f64]) {
    let k = g.patch_len();
    let row = g.kw * g.c;
    patches.fill(0.0);
    for i in 0..g.oh {
        for j in 0..g.ow {
            let dst = &mut patches[(i * g.ow + j) * k..(i * g.ow + j + 1) * k];
            for u in 0..g.kh {
                let Some(r) = g.source(i, u, g.pad_top, g.h) else {
                    continue;
                };
                for v in 0..g.kw {
                    let Some(s) = g.source(j, v, g.pad_left, g.w) else {
                        continue;
                    };
                    let src = (r * g.w + s) * g.c;
                    let off = u * row + v * g.c;
                    dst[off..off + g.c].copy_from_slice(&x[src..src + g.c]);
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto the `[h][w][c]` image they came from.
fn col2im(g: &ConvGeometry, dpatches: &[f64], dx: &mut [f64]) {
    let k = g.patch_len();
    let row = g.kw * g.c;
    for i in 0..g.oh {
        for j in 0..g.ow {
            let src = &dpatches[(i * g.ow + j) * k..(i * g.ow + j + 1) * k];
            for u in 0..g.kh {
                let Some(r) = g.source(i, u, g.pad_top, g.h) else {
                    continue;
                };
                for v in 0..g.kw {
                    let Some(s) = g.source(j, v, g.pad_left, g.w) else {
                        continue;
                    };
                    let dst = (r * g.w + s) * g.c;
                    let off = u * row + v * g.c;
                    for ch in 0..g.c {
                        dx[dst + ch] += src[off + ch];
                    }
                }
            }
        }
    }
}

/// Splits a rank-3 image or rank-4 image batch into `(batch, h, w, c)`.
pub(crate) fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::shape(format!(
            "{what} expects [h, w, c] or [n, h, w, c], got {shape:?}"
        ))),
    }
}

fn with_spatial(shape: &[usize], oh: usize, ow: usize, c: usize) -> Vec<usize> {
    if shape.len() == 4 {
        vec![shape[0], oh, ow, c]
    } else {
        vec![oh, ow, c]
    }
}

impl ConvLayer {
    pub fn new(kernels: Tensor, biases: Tensor, stride: usize, padding: Padding) -> Result<Self> {
        if kernels.rank() != 4 {
            return Err(Error::shape(format!(
                "kernels must be [out, kh, kw, in], got {:?}",
                kernels.shape()
            )));
        }
        if biases.shape() != [kernels.shape()[0]] {
            return Err(Error::shape(format!(
                "biases {:?} do not match {} output channels",
                biases.shape(),
                kernels.shape()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        Ok(Self {
            kernels,
            biases,
            stride,
            padding,
        })
    }

    pub fn kernels(&self) -> &Tensor {
        &self.kernels
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.kernels, &mut self.biases]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[3]
    }

    pub(crate) fn geometry(&self, input_shape: &[usize]) -> Result<(usize, ConvGeometry)> {
        let (n, h, w, c) = image_dims(input_shape, "conv")?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv input has {c} channels, kernels expect {}",
                self.in_channels()
            )));
        }
        let ks = self.kernels.shape();
        let g = ConvGeometry::new((h, w, c), (ks[1], ks[2]), self.stride, self.padding)?;
        Ok((n, g))
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let (_, g) = self.geometry(input_shape)?;
        Ok(with_spatial(input_shape, g.oh, g.ow, self.out_channels()))
    }

    /// Accepts `[h, w, c_in]` or a batch `[n, h, w, c_in]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geometry(input.shape())?;
        let o = self.out_channels();
        let k = g.patch_len();
        let p = g.positions();
        let in_len = g.h * g.w * g.c;
        let kernels_t = transpose_raw(o, k, self.kernels.data());
        let mut patches = vec![0.0; p * k];
        let mut out = vec![0.0; n * p * o];
        for (e, dst) in out.chunks_exact_mut(p * o).enumerate() {
            im2col(&g, &input.data()[e * in_len..(e + 1) * in_len], &mut patches);
            gemm(p, k, o, &patches, &kernels_t, dst, false);
            for row in dst.chunks_exact_mut(o) {
                for (z, &b) in row.iter_mut().zip(self.biases.data()) {
                    *z += b;
                }
            }
        }
        Tensor::new(&with_spatial(input.shape(), g.oh, g.ow, o), out)
    }

    /// Gradients for a forward pass on `input` that received `delta_out`.
    pub fn backward(&self, input: &Tensor, delta_out: &Tensor) -> Result<ConvGrads> {
        self.backward_impl(input, delta_out, true)
    }

    /// As [`ConvLayer::backward`], skipping the input gradient (first layer).
    pub fn backward_params(&self, input: &Tensor, delta_out: &Tensor) -> Result<ConvGrads> {
        self.backward_impl(input, delta_out, false)
    }

    fn backward_impl(&self, input: &Tensor, delta_out: &Tensor, want_input: bool) -> Result<ConvGrads> {
        let expected = self.output_shape(input.shape())?;
        if delta_out.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "conv delta {:?} does not match output shape {expected:?}",
                delta_out.shape()
            )));
        }
        let (n, g) = self.geometry(input.shape())?;
        let o = self.out_channels();
        let k = g.patch_len();
        let p = g.positions();
        let in_len = g.h * g.w * g.c;

        let mut grad_k = vec![0.0; o * k];
        let mut grad_b = vec![0.0; o];
        let mut delta_in = want_input.then(|| vec![0.0; input.len()]);
        let mut patches = vec![0.0; p * k];
        let mut dpatches = vec![0.0; if want_input { p * k } else { 0 }];

        for e in 0..n {
            let delta = &delta_out.data()[e * p * o..(e + 1) * p * o];
            for row in delta.chunks_exact(o) {
                for (gb, &d) in grad_b.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            im2col(&g, &input.data()[e * in_len..(e + 1) * in_len], &mut patches);
            let delta_t = transpose_raw(p, o, delta);
            gemm(o, p, k, &delta_t, &patches, &mut grad_k, true);
            if let Some(dx) = delta_in.as_mut() {
                gemm(p, o, k, delta, self.kernels.data(), &mut dpatches, false);
                col2im(&g, &dpatches, &mut dx[e * in_len..(e + 1) * in_len]);
            }
        }

        Ok(ConvGrads {
            delta_in: delta_in
                .map(|d| Tensor::new(input.shape(), d))
                .transpose()?,
            grad_kernels: Tensor::new(self.kernels.shape(), grad_k)?,
            grad_biases: Tensor::new(&[o], grad_b)?,
        })
    }
}
