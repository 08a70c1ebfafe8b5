//! Cameron–Martin controls for the mixed driver: Volterra-kernel shifts
//! of the fractional factor and absolutely continuous shifts of the
//! Brownian factor.
//!
//! ```text
//! A control is a pair of piecewise-constant coefficient functions on a
//! control grid:
//!
//!     u_t = ∫₀ᵗ K_H(t,s) ĥ(s) ds        (fractional factor, H < 1/2)
//!     v_t = ∫₀ᵗ v′(s) ds                 (Brownian factor)
//!
//! with squared energy  norm_sq = ½(‖ĥ‖²_{L²} + ‖v′‖²_{L²}), computed
//! exactly from the coefficients.  K_H is the Volterra kernel whose
//! square integrates to the fractional variance, ∫₀ᵗ K_H(t,s)² ds = t^{2H}:
//!
//!     K_H(t,s) = c_H [ (t/s)^{H−1/2} (t−s)^{H−1/2}
//!                      + (1/2−H) s^{H−1/2} B(1−2H, H+1/2)
//!                        (1 − I_{s/t}(1−2H, H+1/2)) ]
//!
//!     c_H = [ 2H / ((1−2H) B(1−2H, H+1/2)) ]^{1/2}
//!
//! where the inner integral ∫ₛᵗ r^{H−3/2}(r−s)^{H−1/2} dr has been
//! reduced to the regularized incomplete beta function I_x(a,b) by the
//! substitution r ↦ s/θ.  The kernel diverges like s^{H−1/2} at s→0 and
//! like (t−s)^{H−1/2} at s→t, both square-integrable.
//!
//! Evaluating u on a simulation grid needs the node integrals
//!
//!     M[k][j] = ∫_{cell_j ∩ [0, t_k]} K_H(t_k, s) ds,
//!
//! which CmKernel precomputes once per (grid, control-grid) pair by
//! midpoint quadrature, 16 points per intersected cell, after the
//! power substitution s ↦ v^{1/(H+1/2)} (resp. t−s ↦ v^{1/(H+1/2)})
//! that flattens the end-point singularities.  Applying the matrix to a
//! coefficient vector is then a cheap inner product, which is what the
//! rate-function optimizer iterates on.
//! ```

use super::GaussianError;
use crate::algebra::PiecewiseLinearPath;
use crate::roughpath::{HolderExponents, RoughPath};
use statrs::function::beta::{beta, beta_reg};

/// Piecewise-constant control coefficients `(ĥ, v′)` on a control grid.
#[derive(Debug, Clone)]
pub struct CameronMartinControl {
    hurst: f64,
    ctrl_times: Vec<f64>,
    /// `hhat[j]` holds the fractional coefficients on cell j (width = d_fbm).
    hhat: Vec<Vec<f64>>,
    /// `vprime[j]` holds the Brownian derivative on cell j (width = d_bm).
    vprime: Vec<Vec<f64>>,
}

impl CameronMartinControl {
    pub fn new(
        hurst: f64,
        ctrl_times: Vec<f64>,
        hhat: Vec<Vec<f64>>,
        vprime: Vec<Vec<f64>>,
    ) -> Result<Self, GaussianError> {
        if !(hurst > 0.0 && hurst < 0.5) {
            return Err(GaussianError::InvalidHurst(hurst));
        }
        if ctrl_times.len() < 2 || ctrl_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GaussianError::GridMismatch(
                "control grid must be strictly increasing with at least two nodes".into(),
            ));
        }
        let m = ctrl_times.len() - 1;
        if hhat.len() != m || vprime.len() != m {
            return Err(GaussianError::GridMismatch(format!(
                "expected {m} coefficient cells, got {} fractional and {} Brownian",
                hhat.len(),
                vprime.len()
            )));
        }
        let d_fbm = hhat[0].len();
        let d_bm = vprime[0].len();
        if d_fbm + d_bm == 0 {
            return Err(GaussianError::DimensionMismatch(
                "control must carry at least one coordinate".into(),
            ));
        }
        if hhat.iter().any(|c| c.len() != d_fbm) || vprime.iter().any(|c| c.len() != d_bm) {
            return Err(GaussianError::DimensionMismatch(
                "ragged control coefficients".into(),
            ));
        }
        Ok(Self {
            hurst,
            ctrl_times,
            hhat,
            vprime,
        })
    }

    /// The zero control on the given grid.
    pub fn zero(
        hurst: f64,
        ctrl_times: Vec<f64>,
        d_fbm: usize,
        d_bm: usize,
    ) -> Result<Self, GaussianError> {
        let m = ctrl_times.len().saturating_sub(1);
        Self::new(
            hurst,
            ctrl_times,
            vec![vec![0.0; d_fbm]; m],
            vec![vec![0.0; d_bm]; m],
        )
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn ctrl_times(&self) -> &[f64] {
        &self.ctrl_times
    }

    pub fn d_fbm(&self) -> usize {
        self.hhat[0].len()
    }

    pub fn d_bm(&self) -> usize {
        self.vprime[0].len()
    }

    pub fn hhat(&self) -> &[Vec<f64>] {
        &self.hhat
    }

    pub fn vprime(&self) -> &[Vec<f64>] {
        &self.vprime
    }

    /// Exact squared energy ½(‖ĥ‖²_{L²} + ‖v′‖²_{L²}) from the coefficients.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for (j, w) in self.ctrl_times.windows(2).enumerate() {
            let dt = w[1] - w[0];
            let h2: f64 = self.hhat[j].iter().map(|x| x * x).sum();
            let v2: f64 = self.vprime[j].iter().map(|x| x * x).sum();
            acc += dt * (h2 + v2);
        }
        0.5 * acc
    }
}

/// The Volterra kernel K_H(t,s) for 0 < s < t and H ∈ (0, 1/2).
pub fn volterra_kernel(hurst: f64, t: f64, s: f64) -> f64 {
    debug_assert!(hurst > 0.0 && hurst < 0.5);
    debug_assert!(s > 0.0 && s < t);
    let h = hurst;
    let a = 1.0 - 2.0 * h;
    let b = h + 0.5;
    let c_h = (2.0 * h / (a * beta(a, b))).sqrt();
    let first = (t / s).powf(h - 0.5) * (t - s).powf(h - 0.5);
    let tail = beta(a, b) * (1.0 - beta_reg(a, b, s / t));
    let second = (0.5 - h) * s.powf(h - 0.5) * tail;
    c_h * (first + second)
}

/// Precomputed node integrals of the Volterra kernel against the control
/// cells: `weights[k][j] = ∫_{cell_j ∩ [0, t_k]} K_H(t_k, s) ds`.
pub struct CmKernel {
    hurst: f64,
    grid_times: Vec<f64>,
    ctrl_times: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

/// Midpoint points per intersected cell (after the singularity-flattening
/// substitution at the two end cells).
const QUAD_POINTS: usize = 16;

/// ∫_a^b K_H(t,s) ds with optional power substitutions at the ends.
fn integrate_kernel(h: f64, t: f64, a: f64, b: f64) -> f64 {
    if b - a <= 0.0 {
        return 0.0;
    }
    let q = 1.0 / (h + 0.5);
    let singular_left = a == 0.0;
    let singular_right = (t - b).abs() < 1e-15 * t.max(1.0);
    if singular_left && singular_right {
        let mid = 0.5 * (a + b);
        return integrate_kernel(h, t, a, mid) + integrate_kernel(h, t, mid, b);
    }
    let mut acc = 0.0;
    if singular_left {
        // s = v^q flattens the s^{H-1/2} divergence at s = 0.
        let (va, vb) = (0.0, b.powf(h + 0.5));
        let dv = (vb - va) / QUAD_POINTS as f64;
        for i in 0..QUAD_POINTS {
            let v = va + (i as f64 + 0.5) * dv;
            let s = v.powf(q);
            acc += volterra_kernel(h, t, s) * q * v.powf(q - 1.0) * dv;
        }
    } else if singular_right {
        // t - s = v^q flattens the (t-s)^{H-1/2} divergence at s = t.
        let (va, vb) = (0.0, (t - a).powf(h + 0.5));
        let dv = (vb - va) / QUAD_POINTS as f64;
        for i in 0..QUAD_POINTS {
            let v = va + (i as f64 + 0.5) * dv;
            let s = t - v.powf(q);
            acc += volterra_kernel(h, t, s) * q * v.powf(q - 1.0) * dv;
        }
    } else {
        let ds = (b - a) / QUAD_POINTS as f64;
        for i in 0..QUAD_POINTS {
            let s = a + (i as f64 + 0.5) * ds;
            acc += volterra_kernel(h, t, s) * ds;
        }
    }
    acc
}

impl CmKernel {
    pub fn new(
        hurst: f64,
        grid_times: &[f64],
        ctrl_times: &[f64],
    ) -> Result<Self, GaussianError> {
        if !(hurst > 0.0 && hurst < 0.5) {
            return Err(GaussianError::InvalidHurst(hurst));
        }
        if grid_times.len() < 2 || grid_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GaussianError::GridMismatch(
                "simulation grid must be strictly increasing".into(),
            ));
        }
        if grid_times[0] != 0.0 || ctrl_times[0] != 0.0 {
            return Err(GaussianError::GridMismatch(
                "both grids must start at time 0".into(),
            ));
        }
        let horizon = *grid_times.last().unwrap();
        if *ctrl_times.last().unwrap() < horizon - 1e-9 {
            return Err(GaussianError::GridMismatch(
                "control grid must cover the simulation horizon".into(),
            ));
        }
        let m = ctrl_times.len() - 1;
        let mut weights = Vec::with_capacity(grid_times.len());
        weights.push(vec![0.0; m]);
        for &t in &grid_times[1..] {
            let mut row = vec![0.0; m];
            for j in 0..m {
                let a = ctrl_times[j];
                let b = ctrl_times[j + 1].min(t);
                if b > a {
                    row[j] = integrate_kernel(hurst, t, a, b);
                }
            }
            weights.push(row);
        }
        Ok(Self {
            hurst,
            grid_times: grid_times.to_vec(),
            ctrl_times: ctrl_times.to_vec(),
            weights,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid_times(&self) -> &[f64] {
        &self.grid_times
    }

    pub fn ctrl_times(&self) -> &[f64] {
        &self.ctrl_times
    }

    /// Node-integral row for grid node k (one weight per control cell).
    pub fn weight_row(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    /// u at every grid node for the given coefficient cells
    /// (`hhat[j]` of common width d).
    pub fn u_values(&self, hhat: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GaussianError> {
        let m = self.ctrl_times.len() - 1;
        if hhat.len() != m {
            return Err(GaussianError::GridMismatch(format!(
                "expected {m} coefficient cells, got {}",
                hhat.len()
            )));
        }
        let d = hhat.first().map_or(0, |c| c.len());
        let mut out = Vec::with_capacity(self.grid_times.len());
        for row in &self.weights {
            let mut u = vec![0.0; d];
            for (w, coef) in row.iter().zip(hhat) {
                for (acc, c) in u.iter_mut().zip(coef) {
                    *acc += w * c;
                }
            }
            out.push(u);
        }
        Ok(out)
    }
}

/// Exact node values of the Brownian part v (piecewise-linear in t).
fn v_values(ctrl: &CameronMartinControl, grid_times: &[f64]) -> Vec<Vec<f64>> {
    let d = ctrl.d_bm();
    grid_times
        .iter()
        .map(|&t| {
            let mut v = vec![0.0; d];
            for (j, w) in ctrl.ctrl_times.windows(2).enumerate() {
                let overlap = (w[1].min(t) - w[0]).max(0.0);
                if overlap > 0.0 {
                    for (acc, c) in v.iter_mut().zip(&ctrl.vprime[j]) {
                        *acc += overlap * c;
                    }
                }
            }
            v
        })
        .collect()
}

/// Evaluates the control as a path (u-coordinates then v-coordinates) on
/// the simulation grid, returning the path and its exact squared energy.
pub fn cm_to_path(
    ctrl: &CameronMartinControl,
    grid_times: &[f64],
) -> Result<(PiecewiseLinearPath, f64), GaussianError> {
    let u = if ctrl.d_fbm() > 0 {
        let kernel = CmKernel::new(ctrl.hurst, grid_times, &ctrl.ctrl_times)?;
        kernel.u_values(&ctrl.hhat)?
    } else {
        vec![Vec::new(); grid_times.len()]
    };
    let v = v_values(ctrl, grid_times);
    let values: Vec<Vec<f64>> = u
        .into_iter()
        .zip(v)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect();
    let path = PiecewiseLinearPath::new(grid_times.to_vec(), values)?;
    Ok((path, ctrl.norm_sq()))
}

/// Geometric lift of the control path, with its exact squared energy.
pub fn cm_lift(
    ctrl: &CameronMartinControl,
    grid_times: &[f64],
    exponents: HolderExponents,
) -> Result<(RoughPath, f64), GaussianError> {
    let (path, energy) = cm_to_path(ctrl, grid_times)?;
    let rough = RoughPath::from_signature_path(&path, exponents)?;
    Ok((rough, energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::l2;
    use rand::Rng as _;
    use rand::SeedableRng;

    fn uniform_grid(n: usize, horizon: f64) -> Vec<f64> {
        (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
    }

    fn exps() -> HolderExponents {
        HolderExponents::new(0.30, 0.27, 0.49).unwrap()
    }

    /// ∫₀ᵗ K_H(t,s)² ds = t^{2H}: the kernel reproduces the fractional
    /// variance.  Plain midpoint with 2048 points; both end singularities
    /// are square-integrable, so the quadrature lands within a few percent.
    #[test]
    fn kernel_square_integrates_to_the_fractional_variance() {
        for &h in &[0.26, 0.30] {
            for &t in &[0.3, 0.7, 1.0] {
                let n = 2048;
                let ds = t / n as f64;
                let quad: f64 = (0..n)
                    .map(|i| {
                        let s = (i as f64 + 0.5) * ds;
                        volterra_kernel(h, t, s).powi(2) * ds
                    })
                    .sum();
                let exact = t.powf(2.0 * h);
                assert!(
                    (quad - exact).abs() <= 3e-2 * exact,
                    "H={h}, t={t}: {quad} vs {exact}"
                );
            }
        }
    }

    /// ∫₀^s K_H(t,r) K_H(s,r) dr reproduces the two-time covariance
    /// ½(t^{2H} + s^{2H} − (t−s)^{2H}).
    #[test]
    fn kernel_products_integrate_to_the_two_time_covariance() {
        let (h, t, s) = (0.28, 1.0, 0.6);
        let n = 2048;
        let dr = s / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let r = (i as f64 + 0.5) * dr;
                volterra_kernel(h, t, r) * volterra_kernel(h, s, r) * dr
            })
            .sum();
        let exact = 0.5
            * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).powf(2.0 * h));
        assert!(
            (quad - exact).abs() <= 3e-2 * exact,
            "{quad} vs {exact}"
        );
    }

    #[test]
    fn zero_control_gives_zero_path_zero_lift_zero_norm() {
        let grid = uniform_grid(32, 1.0);
        let ctrl = CameronMartinControl::zero(0.30, uniform_grid(8, 1.0), 1, 1).unwrap();
        let (rough, energy) = cm_lift(&ctrl, &grid, exps()).unwrap();
        assert_eq!(energy, 0.0);
        for k in 0..=32 {
            assert!(rough.value(k).iter().all(|x| *x == 0.0));
        }
        let full = rough.chen_reconstruct(0, 32).unwrap();
        assert_eq!(full.level_norm_inf(1), 0.0);
        assert_eq!(full.level_norm_inf(2), 0.0);
        assert_eq!(full.level_norm_inf(3), 0.0);
    }

    #[test]
    fn unit_brownian_derivative_gives_a_linear_path() {
        let grid = uniform_grid(16, 1.0);
        let ctrl = CameronMartinControl::new(
            0.30,
            uniform_grid(4, 1.0),
            vec![vec![]; 4],
            vec![vec![1.0]; 4],
        )
        .unwrap();
        let (rough, energy) = cm_lift(&ctrl, &grid, exps()).unwrap();
        // ½ ∫₀¹ 1² ds = ½.
        assert!((energy - 0.5).abs() < 1e-15);
        for (k, &t) in grid.iter().enumerate() {
            assert!((rough.value(k)[0] - t).abs() < 1e-14);
        }
        for &k in &[4usize, 9, 16] {
            let t = grid[k];
            let tensor = rough.chen_reconstruct(0, k).unwrap();
            assert!((tensor.level2[l2(1, 0, 0)] - t * t / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn energy_matches_an_independent_quadrature_of_the_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = 8;
        let ctrl_times = uniform_grid(m, 1.0);
        let hhat: Vec<Vec<f64>> = (0..m)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let vprime: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let ctrl =
            CameronMartinControl::new(0.28, ctrl_times.clone(), hhat.clone(), vprime.clone())
                .unwrap();

        // Exact re-sum from the coefficients.
        let dt = 1.0 / m as f64;
        let mut exact = 0.0;
        for j in 0..m {
            exact += dt * (hhat[j].iter().map(|x| x * x).sum::<f64>());
            exact += dt * (vprime[j].iter().map(|x| x * x).sum::<f64>());
        }
        assert!((ctrl.norm_sq() - 0.5 * exact).abs() < 1e-15);

        // Independent quadrature of the step functions at off-grid points.
        let n = 10_000;
        let mut quad = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) / n as f64;
            let j = ((s * m as f64) as usize).min(m - 1);
            quad += (hhat[j].iter().map(|x| x * x).sum::<f64>()
                + vprime[j].iter().map(|x| x * x).sum::<f64>())
                / n as f64;
        }
        assert!((ctrl.norm_sq() - 0.5 * quad).abs() < 1e-3 * ctrl.norm_sq());
    }

    /// The fractional part u is continuous with finite variation; node
    /// values and total variation stabilize as the evaluation grid refines.
    #[test]
    fn u_values_stabilize_under_grid_refinement() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let m = 8;
        let hhat: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect();
        let ctrl = CameronMartinControl::new(
            0.28,
            uniform_grid(m, 1.0),
            hhat,
            vec![vec![]; m],
        )
        .unwrap();
        let u_on = |n: usize| {
            let grid = uniform_grid(n, 1.0);
            let (path, _) = cm_to_path(&ctrl, &grid).unwrap();
            path.values().iter().map(|v| v[0]).collect::<Vec<f64>>()
        };
        let (u64v, u128, u256) = (u_on(64), u_on(128), u_on(256));
        let sup: f64 = u64v.iter().fold(0.0, |a, x| a.max(x.abs()));
        assert!(sup > 0.0);
        // The node integrals depend on the node time and the control grid
        // alone, so values at shared nodes agree across evaluation grids.
        for k in 0..=64 {
            assert!((u64v[k] - u128[2 * k]).abs() < 1e-12 * sup);
            assert!((u128[2 * k] - u256[4 * k]).abs() < 1e-12 * sup);
        }
        // Total-variation estimates stay in a tight band: u has bounded
        // variation despite its vertical tangents at the control-cell
        // boundaries.  (A path of fractional roughness would grow its
        // discrete variation like n^{1−H} across these grids.)
        let tv = |u: &[f64]| u.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        let (tv1, tv2, tv3) = (tv(&u64v), tv(&u128), tv(&u256));
        let band = tv1.max(tv2).max(tv3) - tv1.min(tv2).min(tv3);
        assert!(band < 1e-2 * tv1, "band {band} around {tv1}");
    }

    /// Lifts of dyadic piecewise-linear approximations of the control
    /// path converge to the lift of the control path itself.
    #[test]
    fn dyadic_approximation_lifts_converge_to_the_control_lift() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let m = 8;
        let hhat: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect();
        let vprime: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect();
        let ctrl =
            CameronMartinControl::new(0.28, uniform_grid(m, 1.0), hhat, vprime).unwrap();
        let grid = uniform_grid(256, 1.0);
        let (target_path, _) = cm_to_path(&ctrl, &grid).unwrap();
        let target = RoughPath::from_signature_path(&target_path, exps()).unwrap();

        let mut distances = Vec::new();
        for level in 4..=8u32 {
            let stride = 256 >> level;
            let coarse_times: Vec<f64> =
                grid.iter().step_by(stride.max(1)).copied().collect();
            let coarse_values: Vec<Vec<f64>> = target_path
                .values()
                .iter()
                .step_by(stride.max(1))
                .cloned()
                .collect();
            let coarse = PiecewiseLinearPath::new(coarse_times, coarse_values).unwrap();
            // Re-express the interpolation on the fine grid so the lifts share it.
            let fine_values: Vec<Vec<f64>> =
                grid.iter().map(|&t| coarse.value_at(t).unwrap()).collect();
            let approx_path = PiecewiseLinearPath::new(grid.clone(), fine_values).unwrap();
            let approx = RoughPath::from_signature_path(&approx_path, exps()).unwrap();
            distances.push(target.distance(&approx).unwrap());
        }
        assert!(distances[0] > 0.0);
        for w in distances.windows(2) {
            assert!(w[1] < w[0], "distances {distances:?}");
        }
    }
}
