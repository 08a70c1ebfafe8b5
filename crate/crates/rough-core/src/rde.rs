//! Rough and Young differential equation solvers.
//!
//! ```text
//! The flagship solver integrates
//!
//!     dY_t = f(Y_t) dt + σ(Y_t) dX_t,        Y_0 = ξ,
//!
//! against a level-3 rough path X.  Time is adjoined to the driver as one
//! extra coordinate whose joint signature blocks are exact for piecewise-
//! linear drivers (and exact in the time-only and single-cross blocks in
//! general), so drift and diffusion run through one integration routine:
//! the equation becomes dY = Σ(Y) dX̂ with Σ = [σ | f] against the
//! augmented driver X̂.
//!
//! Each solve works on subintervals of target length
//!
//!     λ = { C_β (K+1)^ν̂ ( ⫼X⫼_α + 1 )^ν̂ }^{ −1/(α−β) },   K = ‖σ‖_{C⁴_b} ∨ L,
//!
//! clamped into [mesh, span]: on realistic grids λ is far below the mesh, so
//! the effective subinterval is a single cell; λ itself is recorded in the
//! step log.  On each subinterval the solution is the fixed point of the
//! Picard map
//!
//!     M(Y) = ξ + ∫ Σ(Y_s) dX̂_s        (rough integral, germ to level 3),
//!
//! iterated until the controlled-path distance d_{X,X,3β} between
//! successive iterates falls below tolerance; the contraction factor is
//! recorded per subinterval, and a non-contracting subinterval is halved
//! and retried.  The discrete fixed point satisfies the per-cell recursion
//!
//!     Y_{k+1} = Y_k + Σ(Y_k) X̂¹ + (∇Σ·Σ)(Y_k) X̂² + (∇(∇Σ·Σ)·Σ + ∇²Σ⟨Σ,Σ⟩)(Y_k) X̂³,
//!
//! so chunked solves assemble into the global fixed point (flow property)
//! and the solution is controlled with derivatives (Σ(Y), (∇Σ·Σ)(Y)).
//!
//! The Young companion solves dY = f(Y) dt + σ(Y) du for an absolutely
//! continuous control u by the Euler scheme with increments f·Δt + σ(Y)·Δu,
//! refined dyadically until successive solutions agree to tolerance — the
//! skeleton equations of the deviation analysis live here.
//! ```

use crate::algebra::{l2, l3, PiecewiseLinearPath, TruncatedTensor};
use crate::controlled::{ControlledError, ControlledPath, Convention};
use crate::roughpath::{GeometricCheck, HolderExponents, RoughPath, RoughPathError};
use crate::smooth::SmoothMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdeError {
    #[error(transparent)]
    Controlled(#[from] ControlledError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Picard iteration failed to contract on [{start:.6}, {end:.6}] (last distance {last_distance:.3e})")]
    NonContraction {
        start: f64,
        end: f64,
        last_distance: f64,
    },
    #[error("refinement diverged (last delta {0:.3e}) — driver rejected")]
    RefinementDiverging(f64),
}

/// The two free constants of the subinterval-length rule, open bounds in
/// the underlying estimate; defaults sit just above them.
#[derive(Debug, Clone, Copy)]
pub struct StepConstants {
    pub c_beta: f64,
    pub nu_hat: f64,
}

impl Default for StepConstants {
    fn default() -> Self {
        Self {
            c_beta: 4.01,
            nu_hat: 2.01,
        }
    }
}

/// Iteration and subdivision limits for one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveBudget {
    pub max_picard: usize,
    pub max_halvings: usize,
    /// Upper bound on cells per subinterval (the λ clamp usually forces 1).
    pub chunk_cells: usize,
    /// Relative tolerance for the Picard distance, scaled by 1 + |ξ|.
    pub tol: f64,
    /// Compute λ, the driver norm, and the solution's β-norm.  Off for
    /// Monte-Carlo hot loops where the report is not consumed.
    pub norm_diagnostics: bool,
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self {
            max_picard: 50,
            max_halvings: 12,
            chunk_cells: 64,
            tol: 1e-10,
            norm_diagnostics: true,
        }
    }
}

/// The problem `dY = f(Y) dt + σ(Y) dX`, `Y_0 = initial`.  The diffusion
/// maps the state to a flat `w×d` matrix, row-major: entry `a·d + p` feeds
/// driver coordinate `p` into state coordinate `a`.
#[derive(Clone)]
pub struct RdeProblem {
    pub drift: Arc<dyn SmoothMap>,
    pub diffusion: Arc<dyn SmoothMap>,
    pub driver: Arc<RoughPath>,
    pub initial: Vec<f64>,
    pub exponents: HolderExponents,
    pub step: StepConstants,
}

impl RdeProblem {
    pub fn new(
        drift: Arc<dyn SmoothMap>,
        diffusion: Arc<dyn SmoothMap>,
        driver: Arc<RoughPath>,
        initial: Vec<f64>,
    ) -> Self {
        let exponents = driver.exponents();
        Self {
            drift,
            diffusion,
            driver,
            initial,
            exponents,
            step: StepConstants::default(),
        }
    }
}

/// One subinterval of the solve: the λ the rule produced, the τ actually
/// used, and how the Picard iteration behaved.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub start_node: usize,
    pub end_node: usize,
    pub lambda: f64,
    pub tau: f64,
    pub iterations: usize,
    /// Last ratio of successive Picard distances (0 when convergence was
    /// immediate).
    pub contraction: f64,
    pub final_distance: f64,
}

/// Whole-solve scalars: the step rule inputs and the solution's own norm.
#[derive(Debug, Clone, Copy)]
pub struct RdeDiagnostics {
    pub lambda: f64,
    pub homogeneous_norm: f64,
    pub beta_norm: f64,
}

/// A solved rough differential equation: the solution as a path controlled
/// by the time-augmented driver, with per-subinterval iteration records.
pub struct RdeSolution {
    pub path: ControlledPath,
    pub step_log: Vec<StepRecord>,
    pub diagnostics: RdeDiagnostics,
}

impl RdeSolution {
    pub fn times(&self) -> &[f64] {
        self.path.reference().times()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        self.path.y()
    }

    pub fn final_value(&self) -> &[f64] {
        self.path.y().last().unwrap()
    }
}

/// Adjoins time as the last driver coordinate.  Pure-x blocks are copied
/// verbatim; blocks with one x-pair and one time index integrate the
/// stored second level under the sub-cell interpolation `X²_{s,r} ≈ θ²X²`;
/// the remaining mixed blocks use the piecewise-linear forms.  For a
/// piecewise-linear driver every block is exact, and group-likeness of the
/// base cells is preserved exactly in all cases.
pub fn augment_with_time(x: &RoughPath) -> Result<RoughPath, RdeError> {
    let d = x.dim();
    let dd = d + 1;
    let times = x.times().to_vec();
    let values: Vec<Vec<f64>> = (0..x.len())
        .map(|k| {
            let mut v = x.values()[k].clone();
            v.push(times[k]);
            v
        })
        .collect();
    let mut cells = Vec::with_capacity(x.len() - 1);
    for k in 0..x.len() - 1 {
        let c = x.cell(k);
        let dt = times[k + 1] - times[k];
        let mut a = TruncatedTensor::identity(dd);
        for p in 0..d {
            a.level1[p] = c.level1[p];
        }
        a.level1[d] = dt;
        for p in 0..d {
            for q in 0..d {
                a.level2[l2(dd, p, q)] = c.level2[l2(d, p, q)];
            }
            a.level2[l2(dd, p, d)] = c.level1[p] * dt / 2.0;
            a.level2[l2(dd, d, p)] = c.level1[p] * dt / 2.0;
        }
        a.level2[l2(dd, d, d)] = dt * dt / 2.0;
        for p in 0..d {
            for q in 0..d {
                for r in 0..d {
                    a.level3[l3(dd, p, q, r)] = c.level3[l3(d, p, q, r)];
                }
                let xx = c.level1[p] * c.level1[q];
                let b2 = c.level2[l2(d, p, q)];
                a.level3[l3(dd, p, q, d)] = b2 * dt / 3.0;
                a.level3[l3(dd, d, p, q)] = dt * (2.0 * b2 / 3.0 - xx / 6.0);
                a.level3[l3(dd, p, d, q)] = dt * xx / 6.0;
            }
            let v = c.level1[p] * dt * dt / 6.0;
            a.level3[l3(dd, p, d, d)] = v;
            a.level3[l3(dd, d, p, d)] = v;
            a.level3[l3(dd, d, d, p)] = v;
        }
        a.level3[l3(dd, d, d, d)] = dt * dt * dt / 6.0;
        cells.push(a);
    }
    Ok(RoughPath::from_cells(
        times,
        values,
        cells,
        x.exponents(),
        GeometricCheck::Record(1e-8),
    )?)
}

/// Drift and diffusion fused into one coefficient block `Σ = [σ | f]`
/// against the time-augmented driver: output row `a·(d+1)+p` is the σ
/// entry for `p < d` and the drift entry for `p = d`, at every derivative
/// level.
struct Combined {
    drift: Arc<dyn SmoothMap>,
    diffusion: Arc<dyn SmoothMap>,
    w: usize,
    d: usize,
}

impl Combined {
    fn remap(&self, sigma: Vec<f64>, drift: Vec<f64>, per_row: usize) -> Vec<f64> {
        let (w, d) = (self.w, self.d);
        let dd = d + 1;
        let mut out = vec![0.0; w * dd * per_row];
        for a in 0..w {
            for p in 0..d {
                let dst = (a * dd + p) * per_row;
                let src = (a * d + p) * per_row;
                out[dst..dst + per_row].copy_from_slice(&sigma[src..src + per_row]);
            }
            let dst = (a * dd + d) * per_row;
            let src = a * per_row;
            out[dst..dst + per_row].copy_from_slice(&drift[src..src + per_row]);
        }
        out
    }
}

impl SmoothMap for Combined {
    fn dim_in(&self) -> usize {
        self.w
    }
    fn dim_out(&self) -> usize {
        self.w * (self.d + 1)
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.remap(self.diffusion.eval(y), self.drift.eval(y), 1)
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        self.remap(self.diffusion.grad(y), self.drift.grad(y), self.w)
    }
    fn hess(&self, y: &[f64]) -> Vec<f64> {
        self.remap(self.diffusion.hess(y), self.drift.hess(y), self.w.pow(2))
    }
    fn third(&self, y: &[f64]) -> Vec<f64> {
        self.remap(self.diffusion.third(y), self.drift.third(y), self.w.pow(3))
    }
    fn fourth(&self, y: &[f64]) -> Vec<f64> {
        self.remap(
            self.diffusion.fourth(y),
            self.drift.fourth(y),
            self.w.pow(4),
        )
    }
    fn c4_bound(&self) -> f64 {
        self.diffusion.c4_bound().max(self.drift.c4_bound())
    }
}

/// `(∇Σ·Σ)(y)` as a flat `w·D·D` block: the second Gubinelli derivative of
/// the solution.
fn nabla_sigma_sigma(sigma: &Combined, y: &[f64]) -> Vec<f64> {
    let w = sigma.w;
    let dd = sigma.d + 1;
    let s = sigma.eval(y);
    let g = sigma.grad(y);
    let mut out = vec![0.0; w * dd * dd];
    for i in 0..w * dd {
        for q in 0..dd {
            let mut acc = 0.0;
            for b in 0..w {
                acc += g[i * w + b] * s[b * dd + q];
            }
            out[i * dd + q] = acc;
        }
    }
    out
}

/// Solves `dY = f(Y) dt + σ(Y) dX` on the driver's grid.
pub fn solve_rde(p: &RdeProblem, budget: &SolveBudget) -> Result<RdeSolution, RdeError> {
    let d = p.driver.dim();
    let w = p.initial.len();
    if p.drift.dim_in() != w || p.drift.dim_out() != w {
        return Err(RdeError::DimensionMismatch(format!(
            "drift must map {w} -> {w}, got {} -> {}",
            p.drift.dim_in(),
            p.drift.dim_out()
        )));
    }
    if p.diffusion.dim_in() != w || p.diffusion.dim_out() != w * d {
        return Err(RdeError::DimensionMismatch(format!(
            "diffusion must map {w} -> {}, got {} -> {}",
            w * d,
            p.diffusion.dim_in(),
            p.diffusion.dim_out()
        )));
    }
    let aug = Arc::new(augment_with_time(&p.driver)?);
    let sigma = Combined {
        drift: Arc::clone(&p.drift),
        diffusion: Arc::clone(&p.diffusion),
        w,
        d,
    };
    let exps = p.exponents;
    let (lambda, homog) = if budget.norm_diagnostics {
        let h = aug.homogeneous_norm();
        let k_const = sigma.c4_bound();
        let base = p.step.c_beta
            * (k_const + 1.0).powf(p.step.nu_hat)
            * (h + 1.0).powf(p.step.nu_hat);
        (base.powf(-1.0 / (exps.alpha - exps.beta)), h)
    } else {
        (f64::NAN, f64::NAN)
    };
    let times = aug.times().to_vec();
    let n = aug.len();
    let mesh = (0..n - 1)
        .map(|k| times[k + 1] - times[k])
        .fold(f64::INFINITY, f64::min);
    let span = times[n - 1] - times[0];
    let tau_target = if lambda.is_finite() {
        lambda.clamp(mesh, span)
    } else {
        mesh
    };
    let mut bounds = vec![0usize];
    let mut k = 0usize;
    while k < n - 1 {
        let start_t = times[k];
        let mut j = k + 1;
        while j < n - 1 && j - k < budget.chunk_cells && times[j + 1] - start_t <= tau_target {
            j += 1;
        }
        bounds.push(j);
        k = j;
    }
    let beta_exps = HolderExponents::relaxed(exps.beta, exps.beta * 0.9, exps.gamma);
    let mut y_all: Vec<Vec<f64>> = vec![p.initial.clone()];
    let mut step_log = Vec::new();
    for win in bounds.windows(2) {
        solve_chunk(
            &aug,
            &sigma,
            beta_exps,
            win[0],
            win[1],
            budget,
            lambda,
            &mut y_all,
            &mut step_log,
            0,
        )?;
    }
    let ydag: Vec<Vec<f64>> = y_all.iter().map(|v| sigma.eval(v)).collect();
    let ydagdag: Vec<Vec<f64>> = y_all.iter().map(|v| nabla_sigma_sigma(&sigma, v)).collect();
    let beta_norm = if budget.norm_diagnostics {
        let mut worst = 0.0f64;
        for (i, j) in aug.norm_pairs() {
            let dt = times[j] - times[i];
            let m = y_all[j]
                .iter()
                .zip(&y_all[i])
                .fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
            worst = worst.max(m / dt.powf(exps.beta));
        }
        worst
    } else {
        f64::NAN
    };
    let path = ControlledPath::new(aug, y_all, ydag, ydagdag)?;
    Ok(RdeSolution {
        path,
        step_log,
        diagnostics: RdeDiagnostics {
            lambda,
            homogeneous_norm: homog,
            beta_norm,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_chunk(
    aug: &Arc<RoughPath>,
    sigma: &Combined,
    beta_exps: HolderExponents,
    i0: usize,
    i1: usize,
    budget: &SolveBudget,
    lambda: f64,
    y_all: &mut Vec<Vec<f64>>,
    step_log: &mut Vec<StepRecord>,
    depth: usize,
) -> Result<(), RdeError> {
    let xi = y_all.last().unwrap().clone();
    let sub = Arc::new(aug.restrict(i0, i1)?.with_exponents(beta_exps));
    match picard_on(&sub, sigma, &xi, budget) {
        Ok((values, iterations, contraction, final_distance)) => {
            y_all.extend(values.into_iter().skip(1));
            step_log.push(StepRecord {
                start_node: i0,
                end_node: i1,
                lambda,
                tau: aug.times()[i1] - aug.times()[i0],
                iterations,
                contraction,
                final_distance,
            });
            Ok(())
        }
        Err(e) => {
            if depth >= budget.max_halvings || i1 - i0 <= 1 {
                return Err(e);
            }
            let mid = (i0 + i1) / 2;
            solve_chunk(
                aug, sigma, beta_exps, i0, mid, budget, lambda, y_all, step_log,
                depth + 1,
            )?;
            solve_chunk(
                aug, sigma, beta_exps, mid, i1, budget, lambda, y_all, step_log,
                depth + 1,
            )
        }
    }
}

/// Picard iteration `Y ↦ ξ + ∫ Σ(Y) dX̂` on one subinterval, measured in
/// the controlled distance at the β scale.
fn picard_on(
    sub: &Arc<RoughPath>,
    sigma: &Combined,
    xi: &[f64],
    budget: &SolveBudget,
) -> Result<(Vec<Vec<f64>>, usize, f64, f64), RdeError> {
    let n = sub.len();
    let scale = 1.0 + xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sig0 = sigma.eval(xi);
    let dagdag0 = nabla_sigma_sigma(sigma, xi);
    let mut cur = ControlledPath::new(
        Arc::clone(sub),
        vec![xi.to_vec(); n],
        vec![sig0; n],
        vec![dagdag0; n],
    )?;
    let mut prev_dist = f64::NAN;
    let mut contraction = 0.0f64;
    for it in 1..=budget.max_picard {
        let integrand = cur.compose(sigma)?;
        let z = integrand.rough_integral()?;
        let y: Vec<Vec<f64>> = z
            .y()
            .iter()
            .map(|row| row.iter().zip(xi).map(|(a, b)| a + b).collect())
            .collect();
        let next = ControlledPath::new(
            Arc::clone(sub),
            y,
            z.ydag().to_vec(),
            z.ydagdag().to_vec(),
        )?;
        let dist = next.distance(&cur, Convention::LeftEndpoint)?;
        if prev_dist.is_finite() && prev_dist > 0.0 {
            contraction = dist / prev_dist;
        }
        cur = next;
        if dist <= budget.tol * scale {
            return Ok((cur.y().to_vec(), it, contraction, dist));
        }
        prev_dist = dist;
    }
    Err(RdeError::NonContraction {
        start: sub.times()[0],
        end: *sub.times().last().unwrap(),
        last_distance: prev_dist,
    })
}

/// The problem `dY = f(Y) dt + σ(Y) du` for an absolutely continuous
/// control `u` (stored piecewise-linearly).  Same coefficient layout as
/// [`RdeProblem`].
pub struct YoungProblem {
    pub drift: Arc<dyn SmoothMap>,
    pub diffusion: Arc<dyn SmoothMap>,
    pub control: PiecewiseLinearPath,
    pub initial: Vec<f64>,
}

/// Euler solution refined until two consecutive refinements agree.
pub struct YoungSolution {
    /// Finest grid used.
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Solution restricted to the control's own nodes.
    pub node_values: Vec<Vec<f64>>,
    pub refinements: usize,
    pub last_delta: f64,
    pub converged: bool,
}

/// Young–Euler with dyadic refinement: each control cell is split into
/// 2^r parts until the solutions at the control nodes agree to `tol`
/// (sup norm), up to `max_refine` doublings.
pub fn solve_young(
    p: &YoungProblem,
    tol: f64,
    max_refine: usize,
) -> Result<YoungSolution, RdeError> {
    let w = p.initial.len();
    let m = p.control.dim();
    if p.drift.dim_in() != w || p.drift.dim_out() != w {
        return Err(RdeError::DimensionMismatch(format!(
            "drift must map {w} -> {w}"
        )));
    }
    if p.diffusion.dim_in() != w || p.diffusion.dim_out() != w * m {
        return Err(RdeError::DimensionMismatch(format!(
            "diffusion must map {w} -> {}",
            w * m
        )));
    }
    let mut factor = 1usize;
    let mut refinements = 0usize;
    let mut prev_nodes: Option<Vec<Vec<f64>>> = None;
    let mut prev_delta = f64::INFINITY;
    let mut rises = 0usize;
    loop {
        let (times, values) = euler_young(p, factor);
        let node_values: Vec<Vec<f64>> = values.iter().step_by(factor).cloned().collect();
        if let Some(pn) = &prev_nodes {
            let delta = pn
                .iter()
                .zip(&node_values)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            if delta <= tol {
                return Ok(YoungSolution {
                    times,
                    values,
                    node_values,
                    refinements,
                    last_delta: delta,
                    converged: true,
                });
            }
            if delta > prev_delta {
                rises += 1;
                if rises >= 2 {
                    return Err(RdeError::RefinementDiverging(delta));
                }
            } else {
                rises = 0;
            }
            prev_delta = delta;
            if refinements >= max_refine {
                return Ok(YoungSolution {
                    times,
                    values,
                    node_values,
                    refinements,
                    last_delta: delta,
                    converged: false,
                });
            }
        }
        prev_nodes = Some(node_values);
        factor *= 2;
        refinements += 1;
    }
}

fn euler_young(p: &YoungProblem, factor: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let w = p.initial.len();
    let m = p.control.dim();
    let ctrl_times = p.control.times();
    let mut times = Vec::with_capacity((ctrl_times.len() - 1) * factor + 1);
    times.push(ctrl_times[0]);
    for c in 0..ctrl_times.len() - 1 {
        let (a, b) = (ctrl_times[c], ctrl_times[c + 1]);
        for s in 1..=factor {
            times.push(a + (b - a) * s as f64 / factor as f64);
        }
    }
    let mut values = Vec::with_capacity(times.len());
    values.push(p.initial.clone());
    let mut u_prev = p.control.value_at(times[0]).unwrap();
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let u_next = p.control.value_at(times[k + 1]).unwrap();
        let y = values.last().unwrap();
        let f = p.drift.eval(y);
        let s = p.diffusion.eval(y);
        let mut next = y.clone();
        for a in 0..w {
            let mut inc = f[a] * dt;
            for j in 0..m {
                inc += s[a * m + j] * (u_next[j] - u_prev[j]);
            }
            next[a] += inc;
        }
        values.push(next);
        u_prev = u_next;
    }
    (times, values)
}

/// Perturbation family for the stability probe: the initial condition
/// moves along `initial_direction` and the driver is dilated by
/// `1 + magnitude·driver_dilation`.
pub struct Perturbation {
    pub initial_direction: Vec<f64>,
    pub driver_dilation: f64,
}

/// Empirical continuity ratios of the solution map.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub magnitudes: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Sup of the ratios — an empirical stand-in for the continuity
    /// constant of the solution map.
    pub sup_ratio: f64,
}

/// Measures `‖Y−Ỹ‖_β / (|ξ−ξ̃| + ρ_α(X,X̃))` over a family of perturbation
/// magnitudes (ratio 0 at zero perturbation).
pub fn stability_probe(
    p: &RdeProblem,
    budget: &SolveBudget,
    pert: &Perturbation,
    magnitudes: &[f64],
) -> Result<StabilityReport, RdeError> {
    let base = solve_rde(p, budget)?;
    let beta = p.exponents.beta;
    let pairs = p.driver.norm_pairs();
    let times = p.driver.times().to_vec();
    let mut ratios = Vec::with_capacity(magnitudes.len());
    for &mag in magnitudes {
        if mag == 0.0 {
            ratios.push(0.0);
            continue;
        }
        let xi2: Vec<f64> = p
            .initial
            .iter()
            .zip(&pert.initial_direction)
            .map(|(a, e)| a + mag * e)
            .collect();
        let driver2 = if pert.driver_dilation != 0.0 {
            Arc::new(p.driver.dilate(1.0 + mag * pert.driver_dilation))
        } else {
            Arc::clone(&p.driver)
        };
        let p2 = RdeProblem {
            drift: Arc::clone(&p.drift),
            diffusion: Arc::clone(&p.diffusion),
            driver: Arc::clone(&driver2),
            initial: xi2.clone(),
            exponents: p.exponents,
            step: p.step,
        };
        let sol2 = solve_rde(&p2, budget)?;
        let diff: Vec<Vec<f64>> = base
            .values()
            .iter()
            .zip(sol2.values())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let l2norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut num = l2norm(&diff[0]);
        for &(i, j) in &pairs {
            let dt = times[j] - times[i];
            let inc: Vec<f64> = diff[j].iter().zip(&diff[i]).map(|(a, b)| a - b).collect();
            num = num.max(l2norm(&inc) / dt.powf(beta));
        }
        let dx: Vec<f64> = p
            .initial
            .iter()
            .zip(&xi2)
            .map(|(a, b)| a - b)
            .collect();
        let den = l2norm(&dx) + p.driver.distance(&driver2)?;
        ratios.push(if den > 0.0 { num / den } else { 0.0 });
    }
    let sup_ratio = ratios.iter().fold(0.0f64, |m, r| m.max(*r));
    Ok(StabilityReport {
        magnitudes: magnitudes.to_vec(),
        ratios,
        sup_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::{Constant, Linear, Sine1d, Stacked};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn exps() -> HolderExponents {
        HolderExponents::new(0.30, 0.27, 0.49).unwrap()
    }

    fn smooth_driver(n: usize) -> Arc<RoughPath> {
        let p = PiecewiseLinearPath::from_fn(|t| vec![(2.0 * t).sin() + 0.5 * t], 0.0, 1.0, n);
        Arc::new(RoughPath::from_signature_path(&p, exps()).unwrap())
    }

    /// Identity-matrix diffusion (constant coefficient) for state dim = driver dim.
    fn identity_diffusion(d: usize) -> Arc<dyn SmoothMap> {
        let mut flat = vec![0.0; d * d];
        for a in 0..d {
            flat[a * d + a] = 1.0;
        }
        Arc::new(Constant::new(flat, d))
    }

    fn zero_drift(w: usize) -> Arc<dyn SmoothMap> {
        Arc::new(Constant::new(vec![0.0; w], w))
    }

    #[test]
    fn augmentation_matches_direct_joint_lift_of_pl_path() {
        // For a piecewise-linear driver, adjoining time must reproduce the
        // signature of the joint (x, t) piecewise-linear path exactly.
        let n = 24;
        let base = PiecewiseLinearPath::from_fn(|t| vec![(2.0 * t).sin(), t * t - 0.3 * t], 0.0, 1.0, n);
        let rp = RoughPath::from_signature_path(&base, exps()).unwrap();
        let aug = augment_with_time(&rp).unwrap();
        let joint =
            PiecewiseLinearPath::from_fn(|t| vec![(2.0 * t).sin(), t * t - 0.3 * t, t], 0.0, 1.0, n);
        let jrp = RoughPath::from_signature_path(&joint, exps()).unwrap();
        for k in 0..n {
            let a = aug.cell(k);
            let b = jrp.cell(k);
            let err = a.sub(&b).norm_inf();
            assert!(err < 1e-14, "cell {k} differs by {err}");
        }
        assert!(aug.geometric());
    }

    #[test]
    fn augmentation_of_composite_cells_stays_group_like() {
        // Coarsening first makes cells genuine multi-segment signatures
        // (nondegenerate area); augmentation must keep them group-like.
        let base = PiecewiseLinearPath::from_fn(
            |t| vec![(3.0 * t).sin(), (2.0 * t).cos() - 1.0],
            0.0,
            1.0,
            64,
        );
        let rp = RoughPath::from_signature_path(&base, exps())
            .unwrap()
            .coarsen(4)
            .unwrap();
        let aug = augment_with_time(&rp).unwrap();
        assert!(aug.geometric());
        assert!(aug.worst_cell_defect() < 1e-12);
    }

    #[test]
    fn identity_diffusion_reproduces_the_driver() {
        let p2 = PiecewiseLinearPath::from_fn(|t| vec![(2.0 * t).sin(), t * t], 0.0, 1.0, 32);
        let rp = Arc::new(RoughPath::from_signature_path(&p2, exps()).unwrap());
        let xi = vec![0.3, -0.2];
        let prob = RdeProblem::new(zero_drift(2), identity_diffusion(2), Arc::clone(&rp), xi.clone());
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        for k in 0..rp.len() {
            for a in 0..2 {
                let expect = xi[a] + rp.values()[k][a] - rp.values()[0][a];
                assert!((sol.values()[k][a] - expect).abs() < 1e-13);
            }
        }
        // Derivative blocks: σ columns are the identity, drift column zero.
        let dag = &sol.path.ydag()[10];
        for a in 0..2 {
            for p in 0..2 {
                let expect = if a == p { 1.0 } else { 0.0 };
                assert_eq!(dag[a * 3 + p], expect);
            }
            assert_eq!(dag[a * 3 + 2], 0.0);
        }
    }

    #[test]
    fn zero_diffusion_matches_fourth_order_ode_reference() {
        // dY = −Y dt on [0,1]: solver vs RK4 on the same grid, and the
        // closed form e^{−t}.
        let n = 256;
        let line = PiecewiseLinearPath::from_fn(|t| vec![t], 0.0, 1.0, n);
        let rp = Arc::new(RoughPath::from_signature_path(&line, exps()).unwrap());
        let prob = RdeProblem::new(
            Arc::new(Linear::scale(-1.0, 1)),
            Arc::new(Constant::new(vec![0.0], 1)),
            rp,
            vec![1.0],
        );
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        let mut rk = 1.0f64;
        let h = 1.0 / n as f64;
        let mut worst = 0.0f64;
        for k in 0..=n {
            let t = k as f64 * h;
            worst = worst.max((sol.values()[k][0] - rk).abs());
            worst = worst.max((sol.values()[k][0] - (-t).exp()).abs());
            let f = |y: f64| -y;
            let k1 = f(rk);
            let k2 = f(rk + 0.5 * h * k1);
            let k3 = f(rk + 0.5 * h * k2);
            let k4 = f(rk + h * k3);
            rk += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
        assert!(worst < 1e-8, "worst deviation {worst}");
    }

    /// Sup-node error of dY = Y dX against Y₀·exp(x_t − x₀).
    fn exponential_error(n: usize) -> f64 {
        let rp = smooth_driver(n);
        let prob = RdeProblem::new(
            zero_drift(1),
            Arc::new(Linear::identity(1)),
            Arc::clone(&rp),
            vec![1.0],
        );
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        let x0 = rp.values()[0][0];
        (0..rp.len())
            .map(|k| (sol.values()[k][0] - (rp.values()[k][0] - x0).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_linear_equation_matches_exponential() {
        let errs: Vec<f64> = [128usize, 256, 512].iter().map(|&n| exponential_error(n)).collect();
        assert!(errs[2] < 5e-7, "errors {errs:?}");
        // Third-order per-cell truncation: each refinement cuts the error
        // by about 8; demand at least a factor 2.
        assert!(errs[1] < errs[0] / 2.0, "errors {errs:?}");
        assert!(errs[2] < errs[1] / 2.0, "errors {errs:?}");
    }

    #[test]
    fn joint_drift_and_diffusion_match_closed_form() {
        // dY = −Y dt + Y dx  ⇒  Y_t = exp((x_t − t) − x_0) for smooth x:
        // exercises the time-cross blocks of the augmented driver.
        let n = 512;
        let rp = smooth_driver(n);
        let prob = RdeProblem::new(
            Arc::new(Linear::scale(-1.0, 1)),
            Arc::new(Linear::identity(1)),
            Arc::clone(&rp),
            vec![1.0],
        );
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        let x0 = rp.values()[0][0];
        let mut worst = 0.0f64;
        for k in 0..rp.len() {
            let t = rp.times()[k];
            let expect = (rp.values()[k][0] - x0 - t).exp();
            worst = worst.max((sol.values()[k][0] - expect).abs());
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    fn sine_problem(rp: &Arc<RoughPath>) -> RdeProblem {
        RdeProblem::new(
            Arc::new(Linear::scale(-0.5, 1)),
            Arc::new(Sine1d::new(0.8, 1.1, 0.3)),
            Arc::clone(rp),
            vec![0.4],
        )
    }

    #[test]
    fn solution_is_self_consistent_and_satisfies_the_germ_recursion() {
        let rp = smooth_driver(96);
        let prob = sine_problem(&rp);
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        let sigma = Sine1d::new(0.8, 1.1, 0.3);
        for k in 0..sol.values().len() {
            let y = &sol.values()[k];
            let dag = &sol.path.ydag()[k];
            assert!((dag[0] - sigma.eval(y)[0]).abs() < 1e-12);
            assert!((dag[1] - (-0.5 * y[0])).abs() < 1e-12);
        }
        // Fixed-point check: node increments equal the germ of the composed
        // coefficient path Σ(Y).
        let combined = Combined {
            drift: Arc::clone(&prob.drift),
            diffusion: Arc::clone(&prob.diffusion),
            w: 1,
            d: 1,
        };
        let integrand = sol.path.compose(&combined).unwrap();
        for k in 0..sol.values().len() - 1 {
            let g = integrand.germ(k, k + 1).unwrap();
            let inc = sol.values()[k + 1][0] - sol.values()[k][0];
            assert!((inc - g[0]).abs() < 1e-9, "cell {k}: {inc} vs {}", g[0]);
        }
    }

    #[test]
    fn step_log_records_contraction_below_one() {
        let rp = smooth_driver(64);
        let prob = sine_problem(&rp);
        let sol = solve_rde(&prob, &SolveBudget::default()).unwrap();
        assert!(!sol.step_log.is_empty());
        let mut covered = 0usize;
        for rec in &sol.step_log {
            assert_eq!(rec.start_node, covered);
            covered = rec.end_node;
            assert!(rec.contraction < 1.0, "record {rec:?}");
            assert!(rec.iterations >= 1);
            assert!(rec.lambda.is_finite() && rec.lambda > 0.0);
            assert!(rec.tau >= rec.lambda, "τ is the λ rule clamped to the mesh");
        }
        assert_eq!(covered, 64);
        assert!(sol.diagnostics.beta_norm.is_finite());
    }

    #[test]
    fn flow_property_restart_reproduces_full_solve() {
        let rp = smooth_driver(64);
        let prob = sine_problem(&rp);
        let budget = SolveBudget::default();
        let full = solve_rde(&prob, &budget).unwrap();
        let first = RdeProblem {
            driver: Arc::new(rp.restrict(0, 32).unwrap()),
            ..prob.clone()
        };
        let sol1 = solve_rde(&first, &budget).unwrap();
        let second = RdeProblem {
            driver: Arc::new(rp.restrict(32, 64).unwrap()),
            initial: sol1.final_value().to_vec(),
            ..prob.clone()
        };
        let sol2 = solve_rde(&second, &budget).unwrap();
        for k in 0..=32 {
            assert!((full.values()[k][0] - sol1.values()[k][0]).abs() < 1e-12);
            assert!((full.values()[32 + k][0] - sol2.values()[k][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dilating_the_driver_equals_scaling_the_diffusion() {
        let rp = smooth_driver(64);
        let eps_sqrt = 0.35f64;
        let dilated = RdeProblem {
            driver: Arc::new(rp.dilate(eps_sqrt)),
            ..sine_problem(&rp)
        };
        let scaled = RdeProblem {
            diffusion: Arc::new(Sine1d::new(0.8 * eps_sqrt, 1.1, 0.3)),
            ..sine_problem(&rp)
        };
        let a = solve_rde(&dilated, &SolveBudget::default()).unwrap();
        let b = solve_rde(&scaled, &SolveBudget::default()).unwrap();
        for k in 0..rp.len() {
            assert!((a.values()[k][0] - b.values()[k][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_differences_shrink_monotonically() {
        let mut sols = Vec::new();
        for n in [64usize, 128, 256] {
            let rp = smooth_driver(n);
            let prob = sine_problem(&rp);
            sols.push(solve_rde(&prob, &SolveBudget::default()).unwrap());
        }
        let diff = |coarse: &RdeSolution, fine: &RdeSolution, stride: usize| {
            (0..coarse.values().len())
                .map(|k| (coarse.values()[k][0] - fine.values()[k * stride][0]).abs())
                .fold(0.0f64, f64::max)
        };
        let d1 = diff(&sols[0], &sols[1], 2);
        let d2 = diff(&sols[1], &sols[2], 2);
        assert!(d2 < d1, "d1 {d1}, d2 {d2}");
    }

    #[test]
    fn young_euler_with_constant_coefficients_is_exact() {
        let ctrl = PiecewiseLinearPath::from_fn(|t| vec![(3.0 * t).sin()], 0.0, 1.0, 32);
        let p = YoungProblem {
            drift: zero_drift(1),
            diffusion: Arc::new(Constant::new(vec![1.0], 1)),
            control: ctrl.clone(),
            initial: vec![0.7],
        };
        let sol = solve_young(&p, 1e-12, 4).unwrap();
        assert!(sol.converged);
        for (k, v) in sol.node_values.iter().enumerate() {
            let expect = 0.7 + ctrl.values()[k][0] - ctrl.values()[0][0];
            assert!((v[0] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn young_linear_ode_matches_closed_form() {
        // dZ = −Z dt + du with u_t = t: Z_t = 1 − e^{−t} from Z₀ = 0.
        let ctrl = PiecewiseLinearPath::from_fn(|t| vec![t], 0.0, 1.0, 64);
        let p = YoungProblem {
            drift: Arc::new(Linear::scale(-1.0, 1)),
            diffusion: Arc::new(Constant::new(vec![1.0], 1)),
            control: ctrl,
            initial: vec![0.0],
        };
        let sol = solve_young(&p, 1e-4, 10).unwrap();
        assert!(sol.converged);
        let mut worst = 0.0f64;
        for (k, v) in sol.node_values.iter().enumerate() {
            let t = k as f64 / 64.0;
            worst = worst.max((v[0] - (1.0 - (-t).exp())).abs());
        }
        assert!(worst < 5e-4, "worst {worst}");
    }

    #[test]
    fn young_and_rough_solvers_agree_on_smooth_controls() {
        // Five random two-channel smooth controls: the rough solve driven by
        // the geometric lift must agree with the refined Young solve.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let ctrl = PiecewiseLinearPath::from_fn(
                |t| {
                    let u = a
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * ((k + 1) as f64 * 1.7 * t).sin())
                        .sum::<f64>();
                    let v = b
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * ((k + 1) as f64 * 1.3 * t).cos() - c)
                        .sum::<f64>();
                    vec![u, v]
                },
                0.0,
                1.0,
                256,
            );
            let diffusion: Arc<dyn SmoothMap> = Arc::new(Stacked::new(vec![
                Arc::new(Sine1d::new(0.5, 1.0, 0.3)),
                Arc::new(Sine1d::new(0.4, 0.8, 1.9)),
            ]));
            let drift: Arc<dyn SmoothMap> = Arc::new(Linear::scale(-0.3, 1));
            let young = solve_young(
                &YoungProblem {
                    drift: Arc::clone(&drift),
                    diffusion: Arc::clone(&diffusion),
                    control: ctrl.clone(),
                    initial: vec![0.2],
                },
                1e-6,
                8,
            )
            .unwrap();
            let rp = Arc::new(RoughPath::from_signature_path(&ctrl, exps()).unwrap());
            let rough = solve_rde(
                &RdeProblem::new(drift, diffusion, rp, vec![0.2]),
                &SolveBudget::default(),
            )
            .unwrap();
            let mut worst = 0.0f64;
            for k in 0..young.node_values.len() {
                worst = worst.max((young.node_values[k][0] - rough.values()[k][0]).abs());
            }
            assert!(worst < 1e-3, "solvers disagree by {worst}");
        }
    }

    #[test]
    fn stability_ratio_is_zero_at_zero_and_one_for_pure_shift() {
        let p2 = PiecewiseLinearPath::from_fn(|t| vec![(2.0 * t).sin(), t * t], 0.0, 1.0, 24);
        let rp = Arc::new(RoughPath::from_signature_path(&p2, exps()).unwrap());
        let prob = RdeProblem::new(zero_drift(2), identity_diffusion(2), rp, vec![0.0, 0.0]);
        let report = stability_probe(
            &prob,
            &SolveBudget::default(),
            &Perturbation {
                initial_direction: vec![1.0, -2.0],
                driver_dilation: 0.0,
            },
            &[0.0, 1e-1, 1e-3],
        )
        .unwrap();
        assert_eq!(report.ratios[0], 0.0);
        // Solutions differ by the constant initial shift: ratio exactly 1.
        assert!((report.ratios[1] - 1.0).abs() < 1e-12);
        assert!((report.ratios[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stability_ratios_stay_in_a_band_across_magnitudes() {
        let rp = smooth_driver(48);
        let prob = sine_problem(&rp);
        let report = stability_probe(
            &prob,
            &SolveBudget::default(),
            &Perturbation {
                initial_direction: vec![1.0],
                driver_dilation: 0.5,
            },
            &[1e-1, 1e-2, 1e-3, 1e-4],
        )
        .unwrap();
        let lo = report.ratios.iter().fold(f64::INFINITY, |m, r| m.min(*r));
        let hi = report.sup_ratio;
        assert!(lo > 0.0);
        assert!(hi / lo < 1.5, "ratios {:?}", report.ratios);
    }
}
