//! Smooth (C⁴) maps with explicit derivative tensors.
//!
//! Composition of controlled paths and the solver's Taylor-type corrections
//! need ∇Φ…∇⁴Φ as honest tensors, not just directional derivatives.  The
//! [`SmoothMap`] trait hands them out in flat row-major layout:
//!
//! ```text
//!   eval   : [p]          f_i
//!   grad   : [p·m]        ∂f_i/∂y_a          at index  i·m + a
//!   hess   : [p·m²]       ∂²f_i/∂y_a∂y_b     at index (i·m + a)·m + b
//!   third  : [p·m³]       and so on, one more trailing m-index per level
//!   fourth : [p·m⁴]
//! ```
//!
//! The palette members carry closed-form derivatives; [`FdAdapter`] wraps a
//! plain closure with central finite differences and is flagged
//! lower-accuracy (use it for exploration, not for oracle tests).
//!
//! `c4_bound` reports the scale `Σ_{i≤4} sup‖∇ⁱ‖` used by step-size
//! heuristics.  For members that are genuinely unbounded (linear maps,
//! polynomials) it is a nominal value over a reference box, recorded rather
//! than claimed as a sup over all of space.

/// A C⁴ map `R^m → R^p` with derivative tensors up to fourth order.
pub trait SmoothMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, y: &[f64]) -> Vec<f64>;
    fn grad(&self, y: &[f64]) -> Vec<f64>;
    fn hess(&self, y: &[f64]) -> Vec<f64>;
    fn third(&self, y: &[f64]) -> Vec<f64>;
    fn fourth(&self, y: &[f64]) -> Vec<f64>;
    /// Nominal `Σ_{i=0..4} sup‖∇ⁱ‖` scale for step-size heuristics.
    fn c4_bound(&self) -> f64;
}

/// Constant map: `f(y) = c` for every `y`.
#[derive(Debug, Clone)]
pub struct Constant {
    pub value: Vec<f64>,
    pub dim_in: usize,
}

impl Constant {
    pub fn new(value: Vec<f64>, dim_in: usize) -> Self {
        Self { value, dim_in }
    }
}

impl SmoothMap for Constant {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _y: &[f64]) -> Vec<f64> {
        self.value.clone()
    }
    fn grad(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.value.len() * self.dim_in]
    }
    fn hess(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.value.len() * self.dim_in.pow(2)]
    }
    fn third(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.value.len() * self.dim_in.pow(3)]
    }
    fn fourth(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.value.len() * self.dim_in.pow(4)]
    }
    fn c4_bound(&self) -> f64 {
        self.value.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Affine map: `f(y) = A y + c` with `A` a `p×m` matrix in row-major order.
#[derive(Debug, Clone)]
pub struct Linear {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub dim_in: usize,
}

impl Linear {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>, dim_in: usize) -> Self {
        assert_eq!(matrix.len() % dim_in, 0);
        assert_eq!(matrix.len() / dim_in, offset.len());
        Self {
            matrix,
            offset,
            dim_in,
        }
    }

    /// The scalar map `y ↦ a·y` (1×1 matrix).
    pub fn scalar(a: f64) -> Self {
        Self::new(vec![a], vec![0.0], 1)
    }

    /// `y ↦ c·y` on `R^m`.
    pub fn scale(c: f64, dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = c;
        }
        Self::new(matrix, vec![0.0; dim], dim)
    }

    /// The identity on `R^m`.
    pub fn identity(dim: usize) -> Self {
        Self::scale(1.0, dim)
    }
}

impl SmoothMap for Linear {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.offset.len()
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        let (m, p) = (self.dim_in, self.offset.len());
        (0..p)
            .map(|i| {
                self.offset[i]
                    + (0..m).map(|a| self.matrix[i * m + a] * y[a]).sum::<f64>()
            })
            .collect()
    }
    fn grad(&self, _y: &[f64]) -> Vec<f64> {
        self.matrix.clone()
    }
    fn hess(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.offset.len() * self.dim_in.pow(2)]
    }
    fn third(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.offset.len() * self.dim_in.pow(3)]
    }
    fn fourth(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.offset.len() * self.dim_in.pow(4)]
    }
    fn c4_bound(&self) -> f64 {
        let a = self.matrix.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let c = self.offset.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a + c
    }
}

/// Scalar polynomial `f(y) = Σ c_k y^k` (`m = p = 1`), derivatives exact.
#[derive(Debug, Clone)]
pub struct Polynomial1d {
    pub coeffs: Vec<f64>,
}

impl Polynomial1d {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    fn derive(coeffs: &[f64]) -> Vec<f64> {
        coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect()
    }

    fn horner(coeffs: &[f64], y: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    fn nth(&self, n: usize, y: f64) -> f64 {
        let mut c = self.coeffs.clone();
        for _ in 0..n {
            c = Self::derive(&c);
        }
        Self::horner(&c, y)
    }
}

impl SmoothMap for Polynomial1d {
    fn dim_in(&self) -> usize {
        1
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        vec![self.nth(0, y[0])]
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        vec![self.nth(1, y[0])]
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        vec![self.nth(2, y[0])]
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        vec![self.nth(3, y[0])]
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        vec![self.nth(4, y[0])]
    }
    fn c4_bound(&self) -> f64 {
        // Nominal scale over |y| ≤ 2.
        (0..=4)
            .map(|n| self.nth(n, 2.0).abs().max(self.nth(n, -2.0).abs()))
            .sum()
    }
}

/// Scalar sine `f(y) = a·sin(ω y + φ)` — bounded with all derivatives.
#[derive(Debug, Clone)]
pub struct Sine1d {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Sine1d {
    pub fn new(amp: f64, freq: f64, phase: f64) -> Self {
        Self { amp, freq, phase }
    }
}

impl SmoothMap for Sine1d {
    fn dim_in(&self) -> usize {
        1
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        vec![self.amp * (self.freq * y[0] + self.phase).sin()]
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        vec![self.amp * self.freq * (self.freq * y[0] + self.phase).cos()]
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        vec![-self.amp * self.freq.powi(2) * (self.freq * y[0] + self.phase).sin()]
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        vec![-self.amp * self.freq.powi(3) * (self.freq * y[0] + self.phase).cos()]
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        vec![self.amp * self.freq.powi(4) * (self.freq * y[0] + self.phase).sin()]
    }
    fn c4_bound(&self) -> f64 {
        let a = self.amp.abs();
        let w = self.freq.abs();
        a * (1.0 + w + w.powi(2) + w.powi(3) + w.powi(4))
    }
}

/// Finite-difference adapter for a plain closure.  Central differences:
/// gradient is O(h²)-accurate, each further level loses accuracy — flagged
/// lower-accuracy and excluded from oracle-grade tests.
pub struct FdAdapter {
    f: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    dim_in: usize,
    dim_out: usize,
    step: f64,
    bound: f64,
}

impl FdAdapter {
    pub fn new(
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        dim_in: usize,
        dim_out: usize,
        bound: f64,
    ) -> Self {
        Self {
            f: Box::new(f),
            dim_in,
            dim_out,
            step: 1e-4,
            bound,
        }
    }

    fn diff(&self, g: impl Fn(&[f64]) -> Vec<f64>, y: &[f64], width: usize) -> Vec<f64> {
        let m = self.dim_in;
        let mut out = vec![0.0; width * m];
        let mut yp = y.to_vec();
        for a in 0..m {
            yp[a] = y[a] + self.step;
            let up = g(&yp);
            yp[a] = y[a] - self.step;
            let dn = g(&yp);
            yp[a] = y[a];
            for i in 0..width {
                // Interleave so the new index is the trailing one.
                out[i * m + a] = (up[i] - dn[i]) / (2.0 * self.step);
            }
        }
        out
    }
}

impl SmoothMap for FdAdapter {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.f)(y)
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        self.diff(|z| self.eval(z), y, self.dim_out)
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        self.diff(|z| self.grad(z), y, self.dim_out * self.dim_in)
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        self.diff(|z| self.hess(z), y, self.dim_out * self.dim_in.pow(2))
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        self.diff(|z| self.third(z), y, self.dim_out * self.dim_in.pow(3))
    }
    fn c4_bound(&self) -> f64 {
        self.bound
    }
}

/// Stacks maps with a common input into one map whose output (and every
/// derivative tensor) is their row-block concatenation.
pub struct Stacked {
    rows: Vec<std::sync::Arc<dyn SmoothMap>>,
    dim_in: usize,
    dim_out: usize,
}

impl Stacked {
    /// All members must share `dim_in`; panics otherwise (construction-time
    /// programming error, not a data error).
    pub fn new(rows: Vec<std::sync::Arc<dyn SmoothMap>>) -> Self {
        assert!(!rows.is_empty());
        let dim_in = rows[0].dim_in();
        assert!(
            rows.iter().all(|r| r.dim_in() == dim_in),
            "stacked maps must share the input dimension"
        );
        let dim_out = rows.iter().map(|r| r.dim_out()).sum();
        Self {
            rows,
            dim_in,
            dim_out,
        }
    }

    fn concat(&self, parts: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim_out);
        for p in parts {
            out.extend(p);
        }
        out
    }
}

impl SmoothMap for Stacked {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.concat(self.rows.iter().map(|r| r.eval(y)))
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        self.concat(self.rows.iter().map(|r| r.grad(y)))
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        self.concat(self.rows.iter().map(|r| r.hess(y)))
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        self.concat(self.rows.iter().map(|r| r.third(y)))
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        self.concat(self.rows.iter().map(|r| r.fourth(y)))
    }
    fn c4_bound(&self) -> f64 {
        self.rows.iter().map(|r| r.c4_bound()).fold(0.0, f64::max)
    }
}

/// Scalar multiple of another map: `(c·f)(y) = c f(y)` — every derivative
/// tensor scales by the same factor.
pub struct Scaled {
    inner: std::sync::Arc<dyn SmoothMap>,
    factor: f64,
}

impl Scaled {
    pub fn new(inner: std::sync::Arc<dyn SmoothMap>, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl SmoothMap for Scaled {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.inner.eval(y).iter().map(|v| v * self.factor).collect()
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        self.inner.grad(y).iter().map(|v| v * self.factor).collect()
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        self.inner.hess(y).iter().map(|v| v * self.factor).collect()
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        self.inner.third(y).iter().map(|v| v * self.factor).collect()
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        self.inner
            .fourth(y)
            .iter()
            .map(|v| v * self.factor)
            .collect()
    }
    fn c4_bound(&self) -> f64 {
        self.inner.c4_bound() * self.factor.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Max relative defect between an analytic derivative level and the
    /// central finite difference of the level below it, over random points.
    fn fd_defect(
        map: &dyn SmoothMap,
        lower: impl Fn(&[f64]) -> Vec<f64>,
        upper: impl Fn(&[f64]) -> Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let m = map.dim_in();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let ana = upper(&y);
            let width = ana.len() / m;
            let mut yp = y.clone();
            for a in 0..m {
                yp[a] = y[a] + h;
                let up = lower(&yp);
                yp[a] = y[a] - h;
                let dn = lower(&yp);
                yp[a] = y[a];
                for i in 0..width {
                    let fd = (up[i] - dn[i]) / (2.0 * h);
                    let scale = ana[i * m + a].abs().max(1.0);
                    worst = worst.max((ana[i * m + a] - fd).abs() / scale);
                }
            }
        }
        worst
    }

    fn check_all_levels(map: &dyn SmoothMap, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        assert!(fd_defect(map, |y| map.eval(y), |y| map.grad(y), &mut rng) < 1e-6);
        assert!(fd_defect(map, |y| map.grad(y), |y| map.hess(y), &mut rng) < 1e-6);
        assert!(fd_defect(map, |y| map.hess(y), |y| map.third(y), &mut rng) < 1e-5);
        assert!(fd_defect(map, |y| map.third(y), |y| map.fourth(y), &mut rng) < 1e-5);
    }

    #[test]
    fn palette_derivatives_match_finite_differences() {
        check_all_levels(&Constant::new(vec![2.0, -1.0], 3), 1);
        check_all_levels(
            &Linear::new(vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.0], vec![0.3, -0.7], 3),
            2,
        );
        check_all_levels(&Polynomial1d::new(vec![0.5, -1.0, 0.25, 2.0, -0.125]), 3);
        check_all_levels(&Sine1d::new(0.8, 1.7, 0.3), 4);
    }

    #[test]
    fn fd_adapter_gradient_of_quadratic() {
        let f = FdAdapter::new(|y: &[f64]| vec![y[0] * y[0] + 3.0 * y[1]], 2, 1, 10.0);
        let g = f.grad(&[1.0, 2.0]);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
        let h = f.hess(&[1.0, 2.0]);
        assert!((h[0] - 2.0).abs() < 1e-3, "hess[00] = {}", h[0]);
        assert!(h[3].abs() < 1e-3);
    }

    #[test]
    fn linear_eval_and_shapes() {
        let l = Linear::new(vec![2.0, 0.0, 0.0, -1.0], vec![1.0, 0.0], 2);
        assert_eq!(l.eval(&[3.0, 5.0]), vec![7.0, -5.0]);
        assert_eq!(l.grad(&[0.0, 0.0]).len(), 4);
        assert_eq!(l.hess(&[0.0, 0.0]).len(), 8);
        let id = Linear::identity(3);
        assert_eq!(id.eval(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn polynomial_derivatives_are_exact() {
        // f = y³: f' = 3y², f'' = 6y, f''' = 6, f'''' = 0.
        let p = Polynomial1d::new(vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.eval(&[2.0]), vec![8.0]);
        assert_eq!(p.grad(&[2.0]), vec![12.0]);
        assert_eq!(p.hess(&[2.0]), vec![12.0]);
        assert_eq!(p.third(&[2.0]), vec![6.0]);
        assert_eq!(p.fourth(&[2.0]), vec![0.0]);
    }
}
