//! Truncated tensor algebra of degree 3 and exact signatures of piecewise-linear paths.
//!
//! Background
//! ----------
//! ```text
//! The step-3 truncated tensor algebra over V = R^d is
//!
//!     T3(V) = R  ⊕  V  ⊕  V⊗V  ⊕  V⊗V⊗V,
//!
//! with the graded, truncated product
//!
//!     (a ⊗ b)^k = Σ_{i+j=k} a^i ⊗ b^j,      k = 0,1,2,3,
//!
//! grades above 3 being discarded.  The signature of a path x on [s,t] is the
//! collection of iterated integrals
//!
//!     S(x)_{s,t} = ( 1,  ∫ dx,  ∫∫ dx⊗dx,  ∫∫∫ dx⊗dx⊗dx ),
//!
//! which for a single straight segment with increment v has the closed form
//!
//!     S = ( 1,  v,  v⊗v / 2,  v⊗v⊗v / 6 ).
//!
//! Signatures are multiplicative over concatenation (Chen's identity)
//!
//!     S(x)_{s,t} = S(x)_{s,u} ⊗ S(x)_{u,t},
//!
//! so the signature of a piecewise-linear path is the ordered product of its
//! segment signatures — exact up to floating point, no quadrature involved.
//!
//! Signatures of bounded-variation paths are group-like: products of lower
//! levels expand into sums over shuffles of higher levels,
//!
//!     X1^p X1^q   = X2^{pq} + X2^{qp},
//!     X1^p X2^{qr} = X3^{pqr} + X3^{qpr} + X3^{qrp}.
//!
//! `shuffle_defect` measures the worst violation of these relations; it
//! vanishes exactly on group-like elements at this truncation depth.
//! ```
//!
//! Tensor levels are stored as dense, row-major `Vec<f64>` blocks with index
//! helpers [`l2`] and [`l3`]; dimensions stay small (d ≤ 8) so density wins.

use thiserror::Error;

/// Errors produced by tensor and path-signature operations.
#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid interval: s={s} exceeds t={t}")]
    InvalidInterval { s: f64, t: f64 },
    #[error("time {t} outside path span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },
}

/// Row-major index into a level-2 block of dimension `d`.
#[inline(always)]
pub const fn l2(d: usize, i: usize, j: usize) -> usize {
    i * d + j
}

/// Row-major index into a level-3 block of dimension `d`.
#[inline(always)]
pub const fn l3(d: usize, i: usize, j: usize, k: usize) -> usize {
    (i * d + j) * d + k
}

/// Element of the step-3 truncated tensor algebra T3(R^d).
///
/// `level0` is the scalar grade; `level1` has length `d`, `level2` length
/// `d^2` (row-major), `level3` length `d^3`.  Values are immutable in spirit:
/// every operation returns a fresh tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    dim: usize,
    pub level0: f64,
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
    pub level3: Vec<f64>,
}

impl TruncatedTensor {
    /// The zero element (all grades zero).
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            level0: 0.0,
            level1: vec![0.0; dim],
            level2: vec![0.0; dim * dim],
            level3: vec![0.0; dim * dim * dim],
        }
    }

    /// The multiplicative identity (1, 0, 0, 0) — the signature of an empty
    /// interval.
    pub fn identity(dim: usize) -> Self {
        let mut t = Self::zero(dim);
        t.level0 = 1.0;
        t
    }

    /// Exact signature of a straight-line segment with increment `v`:
    /// `(1, v, v⊗v/2, v⊗v⊗v/6)`.
    pub fn segment_signature(v: &[f64]) -> Self {
        let d = v.len();
        let mut t = Self::identity(d);
        t.level1.copy_from_slice(v);
        for i in 0..d {
            for j in 0..d {
                t.level2[l2(d, i, j)] = v[i] * v[j] / 2.0;
                for k in 0..d {
                    t.level3[l3(d, i, j, k)] = v[i] * v[j] * v[k] / 6.0;
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, other: &Self) -> Result<(), AlgebraError> {
        if self.dim != other.dim {
            Err(AlgebraError::DimensionMismatch(self.dim, other.dim))
        } else {
            Ok(())
        }
    }

    /// Graded truncated product `(ab)^k = Σ_{i+j=k} a^i ⊗ b^j`, k ≤ 3.
    pub fn mul(&self, other: &Self) -> Result<Self, AlgebraError> {
        self.check_dim(other)?;
        let d = self.dim;
        let (a, b) = (self, other);
        let mut r = Self::zero(d);
        r.level0 = a.level0 * b.level0;
        for i in 0..d {
            r.level1[i] = a.level0 * b.level1[i] + a.level1[i] * b.level0;
        }
        for i in 0..d {
            for j in 0..d {
                r.level2[l2(d, i, j)] = a.level0 * b.level2[l2(d, i, j)]
                    + a.level1[i] * b.level1[j]
                    + a.level2[l2(d, i, j)] * b.level0;
            }
        }
        for i in 0..d {
            for j in 0..d {
                let ij = l2(d, i, j);
                for k in 0..d {
                    r.level3[l3(d, i, j, k)] = a.level0 * b.level3[l3(d, i, j, k)]
                        + a.level1[i] * b.level2[l2(d, j, k)]
                        + a.level2[ij] * b.level1[k]
                        + a.level3[l3(d, i, j, k)] * b.level0;
                }
            }
        }
        Ok(r)
    }

    /// Multiplicative inverse.  Writing `a = a0 (1 + n)` with `n` carrying no
    /// scalar grade, the truncated Neumann series `1 - n + n² - n³` is exact
    /// at this depth.  Requires `a0 != 0`.
    pub fn inverse(&self) -> Self {
        let a0 = self.level0;
        assert!(a0 != 0.0, "tensor with zero scalar grade has no inverse");
        let mut n = self.scale(1.0 / a0);
        n.level0 = 0.0;
        let n2 = n.mul(&n).expect("same dim");
        let n3 = n2.mul(&n).expect("same dim");
        let mut r = Self::identity(self.dim);
        r = r.sub(&n).add(&n2).sub(&n3);
        r.scale(1.0 / a0)
    }

    /// Truncated tensor exponential `1 + x + x²/2 + x³/6` of an element with
    /// zero scalar grade (a Lie element, say).
    pub fn exp(&self) -> Self {
        assert!(
            self.level0 == 0.0,
            "exp expects a tensor with zero scalar grade"
        );
        let x2 = self.mul(self).expect("same dim");
        let x3 = x2.mul(self).expect("same dim");
        Self::identity(self.dim)
            .add(self)
            .add(&x2.scale(0.5))
            .add(&x3.scale(1.0 / 6.0))
    }

    /// Componentwise sum across all grades.
    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// Componentwise difference across all grades.
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim, other.dim, "tensor dimensions must agree");
        let mut r = self.clone();
        r.level0 = f(self.level0, other.level0);
        for (x, y) in r.level1.iter_mut().zip(&other.level1) {
            *x = f(*x, *y);
        }
        for (x, y) in r.level2.iter_mut().zip(&other.level2) {
            *x = f(*x, *y);
        }
        for (x, y) in r.level3.iter_mut().zip(&other.level3) {
            *x = f(*x, *y);
        }
        r
    }

    /// Uniform scalar multiple of every grade.
    pub fn scale(&self, c: f64) -> Self {
        let mut r = self.clone();
        r.level0 *= c;
        r.level1.iter_mut().for_each(|x| *x *= c);
        r.level2.iter_mut().for_each(|x| *x *= c);
        r.level3.iter_mut().for_each(|x| *x *= c);
        r
    }

    /// Dilation: grade `i` scaled by `lambda^i` (the scalar grade is fixed).
    /// Satisfies `dilate(S(x), c) = S(c·x)` for signatures.
    pub fn dilate(&self, lambda: f64) -> Self {
        let mut r = self.clone();
        let l2c = lambda * lambda;
        let l3c = l2c * lambda;
        r.level1.iter_mut().for_each(|x| *x *= lambda);
        r.level2.iter_mut().for_each(|x| *x *= l2c);
        r.level3.iter_mut().for_each(|x| *x *= l3c);
        r
    }

    /// Largest absolute entry across grades 1–3 (the scalar grade is a
    /// bookkeeping constant and excluded).
    pub fn norm_inf(&self) -> f64 {
        let m1 = self.level1.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let m2 = self.level2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let m3 = self.level3.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        m1.max(m2).max(m3)
    }

    /// Largest absolute entry of one grade (1, 2 or 3).
    pub fn level_norm_inf(&self, level: usize) -> f64 {
        let slice: &[f64] = match level {
            1 => &self.level1,
            2 => &self.level2,
            3 => &self.level3,
            _ => panic!("level must be 1, 2 or 3"),
        };
        slice.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Worst violation of the step-3 shuffle relations:
    /// `max |X1^p X1^q − X2^{pq} − X2^{qp}|  ∨  |X1^p X2^{qr} − X3^{pqr} − X3^{qpr} − X3^{qrp}|`.
    ///
    /// Zero (up to roundoff) exactly when the element is group-like at this
    /// truncation.
    pub fn shuffle_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for p in 0..d {
            for q in 0..d {
                let lhs = self.level1[p] * self.level1[q];
                let rhs = self.level2[l2(d, p, q)] + self.level2[l2(d, q, p)];
                worst = worst.max((lhs - rhs).abs());
            }
        }
        for p in 0..d {
            for q in 0..d {
                for r in 0..d {
                    let lhs = self.level1[p] * self.level2[l2(d, q, r)];
                    let rhs = self.level3[l3(d, p, q, r)]
                        + self.level3[l3(d, q, p, r)]
                        + self.level3[l3(d, q, r, p)];
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        worst
    }
}

/// A continuous path given by values on a strictly increasing time grid and
/// linear interpolation in between.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    /// Builds a path from grid times and per-node values.  Requires at least
    /// two nodes, strictly increasing times and a consistent dimension.
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, AlgebraError> {
        if times.len() < 2 {
            return Err(AlgebraError::InvalidGrid(
                "at least two grid points required".into(),
            ));
        }
        if times.len() != values.len() {
            return Err(AlgebraError::InvalidGrid(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AlgebraError::InvalidGrid(
                "times must be strictly increasing".into(),
            ));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return Err(AlgebraError::InvalidGrid(
                "node values must share a positive dimension".into(),
            ));
        }
        Ok(Self { times, values })
    }

    /// Straight line from `from` to `to` sampled on `n + 1` equally spaced
    /// nodes over `[t0, t1]`.
    pub fn line(from: &[f64], to: &[f64], t0: f64, t1: f64, n: usize) -> Self {
        assert_eq!(from.len(), to.len());
        assert!(n >= 1 && t1 > t0);
        let times: Vec<f64> = (0..=n)
            .map(|k| t0 + (t1 - t0) * k as f64 / n as f64)
            .collect();
        let values = (0..=n)
            .map(|k| {
                let th = k as f64 / n as f64;
                from.iter().zip(to).map(|(a, b)| a + th * (b - a)).collect()
            })
            .collect();
        Self { times, values }
    }

    /// Samples a coordinate map `f(t)` on `n + 1` equally spaced nodes.
    pub fn from_fn(f: impl Fn(f64) -> Vec<f64>, t0: f64, t1: f64, n: usize) -> Self {
        assert!(n >= 1 && t1 > t0);
        let times: Vec<f64> = (0..=n)
            .map(|k| t0 + (t1 - t0) * k as f64 / n as f64)
            .collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation of the path at `t` (must lie within the span).
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>, AlgebraError> {
        let (lo, hi) = (self.t_start(), self.t_end());
        if t < lo || t > hi {
            return Err(AlgebraError::OutOfSpan { t, lo, hi });
        }
        let k = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.values[k].clone()),
            Err(k) => k - 1, // t strictly inside cell k
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let th = (t - t0) / (t1 - t0);
        Ok(self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| a + th * (b - a))
            .collect())
    }

    /// Increment `x_t − x_s` (endpoints interpolated).
    pub fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>, AlgebraError> {
        let a = self.value_at(s)?;
        let b = self.value_at(t)?;
        Ok(b.iter().zip(&a).map(|(x, y)| x - y).collect())
    }

    /// Step-3 signature over `[s, t]`: the Chen product of per-segment
    /// signatures, with the boundary segments split exactly at `s` and `t`
    /// by linear interpolation.
    pub fn signature(&self, s: f64, t: f64) -> Result<TruncatedTensor, AlgebraError> {
        if s > t {
            return Err(AlgebraError::InvalidInterval { s, t });
        }
        let d = self.dim();
        // Validates the span on both endpoints.
        let _ = self.value_at(s)?;
        let _ = self.value_at(t)?;
        if s == t {
            return Ok(TruncatedTensor::identity(d));
        }
        let mut sig = TruncatedTensor::identity(d);
        for k in 0..self.times.len() - 1 {
            let (a, b) = (self.times[k], self.times[k + 1]);
            let lo = a.max(s);
            let hi = b.min(t);
            if hi <= lo {
                continue;
            }
            let frac = (hi - lo) / (b - a);
            let v: Vec<f64> = self.values[k]
                .iter()
                .zip(&self.values[k + 1])
                .map(|(x, y)| (y - x) * frac)
                .collect();
            sig = sig.mul(&TruncatedTensor::segment_signature(&v))?;
        }
        Ok(sig)
    }

    /// Stacks two paths sharing a time grid into one path over the product
    /// state space (dimensions add).
    pub fn zip(&self, other: &Self) -> Result<Self, AlgebraError> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(AlgebraError::InvalidGrid(
                "zip requires a common time grid".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(Self {
            times: self.times.clone(),
            values,
        })
    }

    /// Pointwise sum of two paths on a common grid.
    pub fn add(&self, other: &Self) -> Result<Self, AlgebraError> {
        if self.dim() != other.dim() {
            return Err(AlgebraError::DimensionMismatch(self.dim(), other.dim()));
        }
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(AlgebraError::InvalidGrid(
                "add requires a common time grid".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            times: self.times.clone(),
            values,
        })
    }

    /// Pointwise scalar multiple.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| c * x).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force iterated integrals of the straight line x_t = v·t over
    /// [0,1] by left Riemann sums on `m` steps — the oracle for the
    /// closed-form segment signature.
    fn riemann_line_signature(v: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let d = v.len();
        let dt = 1.0 / m as f64;
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d * d];
        let mut s3 = vec![0.0; d * d * d];
        for _ in 0..m {
            let dx: Vec<f64> = v.iter().map(|vi| vi * dt).collect();
            // Order matters: update level 3 from the previous level 2, then 2 from 1.
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        s3[l3(d, i, j, k)] += s2[l2(d, i, j)] * dx[k];
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    s2[l2(d, i, j)] += s1[i] * dx[j];
                }
            }
            for i in 0..d {
                s1[i] += dx[i];
            }
        }
        (s2, s3)
    }

    #[test]
    fn segment_signature_matches_riemann_oracle_and_closed_form() {
        // Oracle first: fine Riemann sums on x_t = v t, v = (1, 1).
        let v = [1.0, 1.0];
        let (s2, s3) = riemann_line_signature(&v, 4000);
        for x in &s2 {
            assert!((x - 0.5).abs() < 1e-3, "oracle level2 {x}");
        }
        for x in &s3 {
            assert!((x - 1.0 / 6.0).abs() < 1e-3, "oracle level3 {x}");
        }
        // Frozen closed form.
        let sig = TruncatedTensor::segment_signature(&v);
        for x in &sig.level2 {
            assert!((x - 0.5).abs() < 1e-15);
        }
        for x in &sig.level3 {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_signature_scalar_values() {
        let sig = TruncatedTensor::segment_signature(&[2.0]);
        assert_eq!(sig.level0, 1.0);
        assert_eq!(sig.level1[0], 2.0);
        assert_eq!(sig.level2[0], 2.0);
        assert!((sig.level3[0] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_increment_gives_identity() {
        let sig = TruncatedTensor::segment_signature(&[0.0, 0.0, 0.0]);
        assert_eq!(sig, TruncatedTensor::identity(3));
    }

    #[test]
    fn product_of_pure_level1_elements() {
        // (1, v, 0, 0) ⊗ (1, w, 0, 0) = (1, v+w, v⊗w, 0).
        let d = 2;
        let mut a = TruncatedTensor::identity(d);
        a.level1 = vec![1.0, 2.0];
        let mut b = TruncatedTensor::identity(d);
        b.level1 = vec![-3.0, 0.5];
        let r = a.mul(&b).unwrap();
        assert_eq!(r.level1, vec![-2.0, 2.5]);
        for i in 0..d {
            for j in 0..d {
                assert_eq!(r.level2[l2(d, i, j)], a.level1[i] * b.level1[j]);
            }
        }
        assert!(r.level3.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_is_neutral() {
        let x = TruncatedTensor::segment_signature(&[0.3, -1.2, 0.7]);
        let e = TruncatedTensor::identity(3);
        assert_eq!(e.mul(&x).unwrap(), x);
        assert_eq!(x.mul(&e).unwrap(), x);
    }

    #[test]
    fn chen_on_two_segments_matches_straight_line() {
        // A straight line split at an interior point: the Chen product of the
        // two half signatures must reproduce the full segment signature.
        let v = [0.7, -0.4, 1.1];
        let half: Vec<f64> = v.iter().map(|x| x / 2.0).collect();
        let s_half = TruncatedTensor::segment_signature(&half);
        let prod = s_half.mul(&s_half).unwrap();
        let full = TruncatedTensor::segment_signature(&v);
        assert!(prod.sub(&full).norm_inf() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = TruncatedTensor::identity(2);
        let b = TruncatedTensor::identity(3);
        assert!(matches!(
            a.mul(&b),
            Err(AlgebraError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn inverse_of_group_like_element() {
        let x = TruncatedTensor::segment_signature(&[0.9, -0.3]);
        let e = x.mul(&x.inverse()).unwrap();
        assert!(e.sub(&TruncatedTensor::identity(2)).norm_inf() < 1e-14);
        assert!((e.level0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn signature_of_interval_with_equal_endpoints_is_identity() {
        let p = PiecewiseLinearPath::line(&[0.0, 0.0], &[1.0, 2.0], 0.0, 1.0, 4);
        let sig = p.signature(0.5, 0.5).unwrap();
        assert_eq!(sig, TruncatedTensor::identity(2));
    }

    #[test]
    fn signature_rejects_reversed_interval() {
        let p = PiecewiseLinearPath::line(&[0.0], &[1.0], 0.0, 1.0, 2);
        assert!(matches!(
            p.signature(0.8, 0.2),
            Err(AlgebraError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn partial_segments_split_by_interpolation() {
        // One segment with increment v; the signature over [0.25, 0.75] is the
        // segment signature of v/2.
        let v = [1.4, -0.6];
        let p = PiecewiseLinearPath::line(&[0.0, 0.0], &v, 0.0, 1.0, 1);
        let sig = p.signature(0.25, 0.75).unwrap();
        let expect = TruncatedTensor::segment_signature(&[v[0] / 2.0, v[1] / 2.0]);
        assert!(sig.sub(&expect).norm_inf() < 1e-15);
    }

    /// Shoelace signed area of a closed polygon.
    fn shoelace(vertices: &[[f64; 2]]) -> f64 {
        let n = vertices.len();
        let mut a = 0.0;
        for k in 0..n {
            let [x0, y0] = vertices[k];
            let [x1, y1] = vertices[(k + 1) % n];
            a += x0 * y1 - x1 * y0;
        }
        a / 2.0
    }

    #[test]
    fn levy_area_of_closed_polygons_matches_shoelace() {
        // Closed polygon: level 1 vanishes and the antisymmetric part of
        // level 2 is the signed enclosed area.
        let polys: Vec<Vec<[f64; 2]>> = vec![
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            vec![[0.0, 0.0], [2.0, 1.0], [1.5, 2.5], [-0.5, 1.0]],
        ];
        for verts in polys {
            let oracle = shoelace(&verts);
            let n = verts.len();
            let times: Vec<f64> = (0..=n).map(|k| k as f64).collect();
            let mut values: Vec<Vec<f64>> = verts.iter().map(|v| v.to_vec()).collect();
            values.push(verts[0].to_vec());
            let p = PiecewiseLinearPath::new(times, values).unwrap();
            let sig = p.signature(0.0, n as f64).unwrap();
            assert!(sig.level_norm_inf(1) < 1e-14, "closed path level1");
            let area = (sig.level2[l2(2, 0, 1)] - sig.level2[l2(2, 1, 0)]) / 2.0;
            assert!(
                (area - oracle).abs() < 1e-12,
                "area {area} vs shoelace {oracle}"
            );
        }
    }

    #[test]
    fn shuffle_defect_of_pure_level1_element() {
        // X2 = 0 with X1 ≠ 0 violates the first shuffle relation by exactly
        // max |X1^p X1^q|.
        let d = 3;
        let mut x = TruncatedTensor::identity(d);
        x.level1 = vec![0.5, -2.0, 1.0];
        let expect = 4.0; // |(-2)·(-2)|
        assert!((x.shuffle_defect() - expect).abs() < 1e-15);
    }

    #[test]
    fn exp_of_lie_element_is_group_like() {
        // Lie element: level 1 plus a level-2 bracket [v, w]; its exponential
        // must satisfy the shuffle relations.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = 3;
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lie = TruncatedTensor::zero(d);
            lie.level1 = u;
            for i in 0..d {
                for j in 0..d {
                    lie.level2[l2(d, i, j)] = v[i] * w[j] - w[i] * v[j];
                }
            }
            let g = lie.exp();
            assert!(g.shuffle_defect() < 1e-10, "defect {}", g.shuffle_defect());
        }
    }

    #[test]
    fn signatures_of_sampled_paths_are_group_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let d = rng.gen_range(1..=4);
            let n = rng.gen_range(1..=10);
            let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let values: Vec<Vec<f64>> = (0..=n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let p = PiecewiseLinearPath::new(times, values).unwrap();
            let sig = p.signature(0.0, 1.0).unwrap();
            assert!(sig.shuffle_defect() < 1e-10);
        }
    }

    #[test]
    fn reversal_cancels_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let n = 6;
        let times: Vec<f64> = (0..=2 * n).map(|k| k as f64).collect();
        let fwd: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut values = fwd.clone();
        values.extend(fwd.iter().rev().skip(1).cloned());
        let p = PiecewiseLinearPath::new(times, values).unwrap();
        let sig = p.signature(0.0, 2.0 * n as f64).unwrap();
        assert!(sig.sub(&TruncatedTensor::identity(d)).norm_inf() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn chen_identity_on_random_paths(
            seed in 0u64..1_000_000,
            d in 1usize..=4,
            n in 2usize..=12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let values: Vec<Vec<f64>> = (0..=n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let p = PiecewiseLinearPath::new(times, values).unwrap();
            let (s, u, t) = {
                let mut pts = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (pts[0], pts[1], pts[2])
            };
            let whole = p.signature(s, t).unwrap();
            let split = p.signature(s, u).unwrap().mul(&p.signature(u, t).unwrap()).unwrap();
            let scale = whole.norm_inf().max(1.0);
            prop_assert!(whole.sub(&split).norm_inf() <= 1e-12 * scale);
        }

        #[test]
        fn level1_is_exactly_the_increment(
            seed in 0u64..1_000_000,
            d in 1usize..=4,
            n in 2usize..=10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let values: Vec<Vec<f64>> = (0..=n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let p = PiecewiseLinearPath::new(times, values.clone()).unwrap();
            let sig = p.signature(0.0, 1.0).unwrap();
            for i in 0..d {
                let inc = values[n][i] - values[0][i];
                prop_assert!((sig.level1[i] - inc).abs() < 1e-12);
            }
        }

        #[test]
        fn dilation_matches_scaled_path(
            seed in 0u64..1_000_000,
            c in -2.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let a = TruncatedTensor::segment_signature(&v).dilate(c);
            let b = TruncatedTensor::segment_signature(&scaled);
            prop_assert!(a.sub(&b).norm_inf() < 1e-12);
        }

        #[test]
        fn product_is_bilinear_in_each_grade(
            seed in 0u64..1_000_000,
            c in -3.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 2;
            let rand_tensor = |rng: &mut ChaCha8Rng| {
                let mut t = TruncatedTensor::zero(d);
                t.level1.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                t.level2.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                t.level3.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                t
            };
            let a = rand_tensor(&mut rng);
            let b = rand_tensor(&mut rng);
            let g = rand_tensor(&mut rng);
            // (a + c·g) ⊗ b = a⊗b + c·(g⊗b): grade-preserving bilinearity.
            let lhs = a.add(&g.scale(c)).mul(&b).unwrap();
            let rhs = a.mul(&b).unwrap().add(&g.mul(&b).unwrap().scale(c));
            prop_assert!(lhs.sub(&rhs).norm_inf() < 1e-12);
        }
    }
}
