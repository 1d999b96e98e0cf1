//! Row-major matrix product with a fixed per-element summation order.
//!
//! Every output element is computed as `((c0 + a0*b0) + a1*b1) + ...` with `k`
//! ascending and one rounding per multiply and per add, where `c0` is `0.0`
//! or the existing value of `c` when accumulating. Blocking only changes which
//! elements are in flight together, never the order within one element, so the
//! result is bit-identical to the naive triple loop on every code path.

const MR: usize = 4;
const NR: usize = 16;

/// `c[m x n] = a[m x k] * b[k x n]`, or `c += a * b` when `accumulate` is set.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let packed = pack_panels(k, n, b);

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx512(m, k, n, a, &packed, c, accumulate) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, k, n, a, &packed, c, accumulate) };
            return;
        }
    }
    gemm_packed(m, k, n, a, &packed, c, accumulate);
}

/// Copies `b` into column panels of width `NR`, zero-padding the last panel.
fn pack_panels(k: usize, n: usize, b: &[f64]) -> Vec<f64> {
    let panels = n.div_ceil(NR);
    let mut packed = vec![0.0; panels * k * NR];
    for p in 0..panels {
        let j0 = p * NR;
        let width = NR.min(n - j0);
        let dst = &mut packed[p * k * NR..(p + 1) * k * NR];
        for kk in 0..k {
            dst[kk * NR..kk * NR + width].copy_from_slice(&b[kk * n + j0..kk * n + j0 + width]);
        }
    }
    packed
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_avx512(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    packed: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    gemm_packed(m, k, n, a, packed, c, accumulate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    packed: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    gemm_packed(m, k, n, a, packed, c, accumulate)
}

#[inline(always)]
fn gemm_packed(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    packed: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    let panels = n.div_ceil(NR);
    let full_rows = m - m % MR;
    for p in 0..panels {
        let j0 = p * NR;
        let width = NR.min(n - j0);
        let panel = &packed[p * k * NR..(p + 1) * k * NR];
        let mut i0 = 0;
        while i0 < full_rows {
            block::<MR>(i0, k, n, j0, width, a, panel, c, accumulate);
            i0 += MR;
        }
        while i0 < m {
            block::<1>(i0, k, n, j0, width, a, panel, c, accumulate);
            i0 += 1;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn block<const R: usize>(
    i0: usize,
    k: usize,
    n: usize,
    j0: usize,
    width: usize,
    a: &[f64],
    panel: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    let mut acc = [[0.0f64; NR]; R];
    if accumulate {
        for (r, row) in acc.iter_mut().enumerate() {
            let base = (i0 + r) * n + j0;
            row[..width].copy_from_slice(&c[base..base + width]);
        }
    }
    let rows: [&[f64]; R] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
    for kk in 0..k {
        let bv: &[f64; NR] = panel[kk * NR..(kk + 1) * NR].try_into().unwrap();
        for r in 0..R {
            let av = rows[r][kk];
            for j in 0..NR {
                acc[r][j] += av * bv[j];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let base = (i0 + r) * n + j0;
        c[base..base + width].copy_from_slice(&row[..width]);
    }
}
