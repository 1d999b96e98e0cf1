//! Oracles shared by the integration and acceptance targets.

use cnnforge::layers::Padding;
use cnnforge::{Rng, Tensor};

/// Output extent and leading pad along one axis.
pub fn pads(n: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((n - k) / s + 1, 0),
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            (out, total / 2)
        }
    }
}

/// `out[i][j][o] = bias[o] + sum_{u,v,c} x[i*s+u-pt][j*s+v-pl][c] * k[o][u][v][c]`,
/// out-of-range input reading as zero.
pub fn brute_force(x: &Tensor, kernels: &Tensor, biases: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let [h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let [o, kh, kw] = [kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]];
    let (oh, pt) = pads(h, kh, stride, padding);
    let (ow, pl) = pads(w, kw, stride, padding);
    let xd = x.data();
    let kd = kernels.data();
    let mut out = vec![0.0; oh * ow * o];
    for i in 0..oh {
        for j in 0..ow {
            for f in 0..o {
                let mut acc = 0.0;
                for u in 0..kh {
                    for v in 0..kw {
                        for ch in 0..c {
                            let r = (i * stride + u) as isize - pt as isize;
                            let q = (j * stride + v) as isize - pl as isize;
                            let xv = if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                0.0
                            } else {
                                xd[(r as usize * w + q as usize) * c + ch]
                            };
                            acc += xv * kd[((f * kh + u) * kw + v) * c + ch];
                        }
                    }
                }
                out[(i * ow + j) * o + f] = acc + biases.data()[f];
            }
        }
    }
    Tensor::new(&[oh, ow, o], out).unwrap()
}

/// Random convolution geometry up to 8x8x3 input and 4 kernels.
pub struct ConvCase {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
}

pub fn random_case(rng: &mut Rng) -> ConvCase {
    let h = 1 + rng.index(8);
    let w = 1 + rng.index(8);
    let padding = if rng.index(2) == 0 { Padding::Same } else { Padding::Valid };
    let kmax = match padding {
        Padding::Same => 5,
        Padding::Valid => h.min(w).min(5),
    };
    ConvCase {
        h,
        w,
        c: 1 + rng.index(3),
        o: 1 + rng.index(4),
        k: 1 + rng.index(kmax),
        stride: 1 + rng.index(2),
        padding,
    }
}
