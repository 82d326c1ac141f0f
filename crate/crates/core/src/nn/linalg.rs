//! Row-major batched kernels for the MLP forward/backward passes.
//!
//! The matrix product uses a register-tiled microkernel with a fixed
//! accumulation order, so results are bit-identical for a given build.
//! `fmadd` compiles to a fused multiply-add when the target has FMA and to
//! separate multiply/add otherwise. The kernels are deliberately
//! single-threaded: batches here are a few hundred KB and cross-thread
//! dispatch costs more than it saves; parallelism lives at the environment
//! worker level instead.

#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// y += a * x, elementwise.
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = fmadd(a, *xi, *yi);
    }
}

/// C (m x n) += A (m x k) * B (k x n), all row-major.
pub fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    gemm_serial(c, a, b, m, k, n);
}

fn gemm_serial(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    const MR: usize = 4;
    const NR: usize = 16;
    let mjr = m / MR * MR;
    let njr = n / NR * NR;
    let mut jj = 0;
    while jj < njr {
        let mut ii = 0;
        while ii < mjr {
            let mut acc = [[0.0f64; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(ii + r) * n + jj..(ii + r) * n + jj + NR]);
            }
            for l in 0..k {
                let brow = &b[l * n + jj..l * n + jj + NR];
                for (r, row) in acc.iter_mut().enumerate() {
                    let ar = a[(ii + r) * k + l];
                    for q in 0..NR {
                        row[q] = fmadd(ar, brow[q], row[q]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(ii + r) * n + jj..(ii + r) * n + jj + NR].copy_from_slice(row);
            }
            ii += MR;
        }
        for i in mjr..m {
            for l in 0..k {
                let al = a[i * k + l];
                let brow = &b[l * n + jj..l * n + jj + NR];
                let crow = &mut c[i * n + jj..i * n + jj + NR];
                for q in 0..NR {
                    crow[q] = fmadd(al, brow[q], crow[q]);
                }
            }
        }
        jj += NR;
    }
    if njr < n {
        for i in 0..m {
            for l in 0..k {
                let al = a[i * k + l];
                for j in njr..n {
                    c[i * n + j] = fmadd(al, b[l * n + j], c[i * n + j]);
                }
            }
        }
    }
}

/// out (m x n) = x (m x k) * w_t (k x n) + bias broadcast per row.
///
/// `w_t` is the transposed weight matrix so the product walks contiguous
/// output rows.
pub fn linear_forward(
    out: &mut [f64],
    x: &[f64],
    w_t: &[f64],
    bias: &[f64],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(bias.len(), n);
    for row in out.chunks_exact_mut(n) {
        row.copy_from_slice(bias);
    }
    gemm_acc(out, x, w_t, m, k, n);
}

/// dx (m x k) = dz (m x n) * w (n x k); `w` in its natural (out x in) layout.
pub fn input_grad(dx: &mut [f64], dz: &[f64], w: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(dx.len(), m * k);
    dx.fill(0.0);
    gemm_acc(dx, dz, w, m, n, k);
}

/// dw (n x k) += dz^T (n x m) * x (m x k); db (n) += column sums of dz.
pub fn param_grad(
    dw: &mut [f64],
    db: &mut [f64],
    dz: &[f64],
    x: &[f64],
    m: usize,
    n: usize,
    k: usize,
) {
    debug_assert_eq!(dw.len(), n * k);
    debug_assert_eq!(db.len(), n);
    debug_assert_eq!(dz.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    let mut dz_t = vec![0.0; n * m];
    transpose(&mut dz_t, dz, m, n);
    gemm_acc(dw, &dz_t, x, n, m, k);
    for (j, row) in dz_t.chunks_exact(m).enumerate() {
        let mut acc = 0.0;
        for &v in row {
            acc += v;
        }
        db[j] += acc;
    }
}

/// Transpose a row-major (rows x cols) matrix into (cols x rows).
pub fn transpose(out: &mut [f64], a: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(out.len(), rows * cols);
    debug_assert_eq!(a.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// In-place tanh over a slice.
///
/// Branch-free rational form around a range-reduced exponential; absolute
/// error is below 5e-15, and the backward pass derivative 1 - y^2 matches it
/// to the same tolerance. Much faster than libm when autovectorized.
pub fn tanh_slice(xs: &mut [f64]) {
    for v in xs.iter_mut() {
        *v = tanh_approx(*v);
    }
}

#[inline(always)]
pub fn tanh_approx(x: f64) -> f64 {
    let ax = x.abs().min(20.0);
    let t = exp_approx(-2.0 * ax);
    let y = (1.0 - t) / (1.0 + t);
    let y = if ax < 1e-5 { ax } else { y };
    if x < 0.0 {
        -y
    } else {
        y
    }
}

/// exp via 2^n * e^r with |r| <= ln2/2 and an order-11 polynomial.
#[inline(always)]
fn exp_approx(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_588e-10;
    let xx = x.clamp(-700.0, 700.0);
    let nf = (xx * std::f64::consts::LOG2_E).round_ties_even();
    let r = (xx - nf * LN2_HI) - nf * LN2_LO;
    let mut p = 1.0 / 39_916_800.0;
    for c in [
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = fmadd(p, r, c);
    }
    let bits = ((nf as i64 + 1023) as u64) << 52;
    p * f64::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_naive() {
        let (m, k, n) = (7, 5, 3);
        let x: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.3 - 1.0).collect();
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let bias = vec![0.5, -0.25, 0.125];
        let mut w_t = vec![0.0; k * n];
        transpose(&mut w_t, &w, n, k);
        let mut out = vec![0.0; m * n];
        linear_forward(&mut out, &x, &w_t, &bias, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = bias[j];
                for l in 0..k {
                    acc += x[i * k + l] * w[j * k + l];
                }
                assert!((out[i * n + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_matches_naive_across_shapes() {
        for (m, k, n) in [(1, 1, 1), (3, 4, 2), (17, 9, 33), (64, 18, 128), (33, 128, 5)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.17).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.23).collect();
            let mut c: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.01).collect();
            let base = c.clone();
            gemm_acc(&mut c, &a, &b, m, k, n);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = base[i * n + j];
                    for l in 0..k {
                        acc += a[i * k + l] * b[l * n + j];
                    }
                    assert!(
                        (c[i * n + j] - acc).abs() < 1e-12,
                        "mismatch at ({i},{j}) for {m}x{k}x{n}"
                    );
                }
            }
        }
    }

    #[test]
    fn tanh_approx_accuracy() {
        let mut max_err: f64 = 0.0;
        for i in -40000..=40000 {
            let x = i as f64 * 1e-3;
            max_err = max_err.max((tanh_approx(x) - x.tanh()).abs());
        }
        for x in [-30.0, -1e-9, 0.0, 1e-9, 0.3465, 0.6931, 19.9, 25.0, 1e6] {
            max_err = max_err.max((tanh_approx(x) - x.tanh()).abs());
            max_err = max_err.max((tanh_approx(-x) - (-x).tanh()).abs());
        }
        assert!(max_err < 5e-15, "max tanh error {max_err:.3e}");
    }
}
