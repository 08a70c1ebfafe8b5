//! Small shared numeric utilities: order-stable summation, Cholesky
//! factorization, and least-norm solves for linear constraints.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("singular constraint system")]
    SingularSystem,
}

/// Pairwise (cascade) summation: deterministic for a fixed input order and
/// with O(log n) error growth, so parallel producers can collect into a `Vec`
/// in index order and reduce here independently of thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean and (unbiased) variance in one pass over the data.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "variance needs at least two samples");
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - 1) as f64)
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A` for a symmetric
/// positive-definite matrix given in row-major order.
pub fn cholesky_lower(a: &[f64], n: usize) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(a.len(), n * n);
    let m = DMatrix::from_row_slice(n, n, a);
    let chol: Cholesky<f64, Dyn> = Cholesky::new(m).ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Applies a lower-triangular factor to a vector: `y = L z`.
pub fn lower_apply(l: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[i * n + j] * z[j];
        }
        y[i] = acc;
    }
    y
}

/// Least-norm solution of the under-determined system `C x = b` in the inner
/// product induced by sym. pos. def. `Q` (row-major, n×n): minimizes
/// `xᵀ Q x / 2` subject to the `m` linear constraints, via the normal system
/// `C Q⁻¹ Cᵀ λ = b`, `x = Q⁻¹ Cᵀ λ`.
pub fn least_norm_solve(
    q: &[f64],
    c: &[f64],
    b: &[f64],
    n: usize,
    m: usize,
) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(q.len(), n * n);
    assert_eq!(c.len(), m * n);
    assert_eq!(b.len(), m);
    let qm = DMatrix::from_row_slice(n, n, q);
    let cm = DMatrix::from_row_slice(m, n, c);
    let bv = DVector::from_row_slice(b);
    let chol = Cholesky::new(qm).ok_or(LinalgError::NotPositiveDefinite)?;
    let qinv_ct = chol.solve(&cm.transpose()); // n×m
    let gram = &cm * &qinv_ct; // m×m
    let lam = gram
        .lu()
        .solve(&bv)
        .ok_or(LinalgError::SingularSystem)?;
    let x = qinv_ct * lam;
    Ok(x.iter().copied().collect())
}

/// Riemann zeta function ζ(s) for s > 1, by Euler–Maclaurin:
/// `Σ_{n<N} n^{−s} + N^{1−s}/(s−1) + N^{−s}/2 + s·N^{−s−1}/12`.
/// Accurate to ~1e-12 in the range used here (s ∈ (1, 4]).
pub fn riemann_zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta diverges at s <= 1");
    let n = 4000u32;
    let nf = n as f64;
    let tail: Vec<f64> = (1..n).map(|k| (k as f64).powf(-s)).collect();
    pairwise_sum(&tail) + nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s)
        + s * nf.powf(-s - 1.0) / 12.0
}

/// Trapezoid-rule integral of samples `ys` on a uniform grid of spacing `dt`.
pub fn trapezoid(ys: &[f64], dt: f64) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let interior: Vec<f64> = ys[1..ys.len() - 1].to_vec();
    dt * (0.5 * (ys[0] + ys[ys.len() - 1]) + pairwise_sum(&interior))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let xs = [1.5, -2.25, 3.0, 0.125, 7.0];
        assert_eq!(pairwise_sum(&xs), 1.5 - 2.25 + 3.0 + 0.125 + 7.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[4.0]), 4.0);
    }

    #[test]
    fn mean_var_of_known_sample() {
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky_lower(&a, 2).unwrap();
        // L Lᵀ = A, L lower-triangular.
        assert_eq!(l[1 * 2 + 0], 1.0); // 2 / sqrt(4)
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!(l[0 * 2 + 1].abs() < 1e-15);
        let a00 = l[0] * l[0];
        let a10 = l[2] * l[0];
        let a11 = l[2] * l[2] + l[3] * l[3];
        assert!((a00 - 4.0).abs() < 1e-12);
        assert!((a10 - 2.0).abs() < 1e-12);
        assert!((a11 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_lower(&a, 2).is_err());
    }

    #[test]
    fn lower_apply_multiplies() {
        let l = [2.0, 0.0, 1.0, 3.0];
        let y = lower_apply(&l, 2, &[1.0, -1.0]);
        assert_eq!(y, vec![2.0, -2.0]);
    }

    #[test]
    fn least_norm_solution_of_single_constraint() {
        // minimize |x|²/2 s.t. Σ x_i = 1 with Q = I: x_i = 1/n.
        let n = 4;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        let c = vec![1.0; n];
        let x = least_norm_solve(&q, &c, &[1.0], n, 1).unwrap();
        for xi in x {
            assert!((xi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn zeta_matches_closed_forms() {
        let pi = std::f64::consts::PI;
        assert!((riemann_zeta(2.0) - pi * pi / 6.0).abs() < 1e-11);
        assert!((riemann_zeta(4.0) - pi.powi(4) / 90.0).abs() < 1e-11);
        // Monotone decreasing on (1, ∞).
        assert!(riemann_zeta(1.2) > riemann_zeta(1.3));
        assert!(riemann_zeta(1.2) > 5.0 && riemann_zeta(1.2) < 6.0);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let ys: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        assert!((trapezoid(&ys, 0.1) - 5.0).abs() < 1e-12);
    }
}
