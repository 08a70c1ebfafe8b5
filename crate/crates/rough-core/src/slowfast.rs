//! Two-time-scale simulation and stochastic averaging.
//!
//! The coupled system has a slow state `X` in `R^m` and a fast state `Y`
//! in `R^n`:
//!
//! ```text
//!   dX_t = f(X_t, Y_t) dt + σ(X_t) d(√ε·lift)      (level-3 rough solve)
//!   dY_t = δ⁻¹ F̃(X_t, Y_t) dt + δ^{-1/2} G(X_t, Y_t) dW_t
//! ```
//!
//! with `δ ≪ ε ≤ 1`.  The slow equation is driven by the dilated lift of a
//! fractional path and solved cell by cell with the rough-path solver; the
//! fast equation is an Itô diffusion advanced by Euler–Maruyama on a micro
//! grid nested inside the macro grid.  `F̃` is the Itô-form drift obtained
//! from a Stratonovich-form `F` by the correction
//!
//! ```text
//!   F̃ᵏ(x,y) = Fᵏ(x,y) + ½ Σ_{i≤n, j≤e} ∂Gᵏʲ/∂y_i · Gⁱʲ(x,y),
//! ```
//!
//! so specifications written in either convention use one simulator.
//!
//! Averaging apparatus:
//!
//!   * [`frozen_fast`] — the fast diffusion with the slow argument held at
//!     a fixed `x`, run in its own (unscaled) time; its ergodic averages
//!     define the averaged drift `bar_f(x) = ∫ f(x,y) μ_x(dy)`.
//!   * [`estimate_bar_f`] / [`AveragedModel`] — long-run time averages of
//!     `f(x, Y)` with batch-means error bars, cached per (quantized) `x`
//!     with deterministic per-point noise streams.
//!   * [`auxiliary_fast`] — the fast diffusion re-run with the slow input
//!     frozen on windows of length `Δ` (the piecewise-frozen comparison
//!     process used to quantify averaging error), coupled to the true fast
//!     path through a shared noise stream.
//!   * [`khasminskii_report`] — Monte-Carlo sizes of the four terms in the
//!     telescoping decomposition of `∫ f(X,Y) − bar_f(X)`: freeze the slow
//!     argument, swap the fast path for the frozen one, replace the time
//!     average by the ergodic average, unfreeze.
//!
//! Controlled variants ([`DrivingMode::Controlled`]) add a Cameron–Martin
//! pair `(u, v)`: the slow driver is translated by `√ε·h·u` (with `u`
//! reconstructed through the Volterra kernel) and the fast equation gains
//! the absolutely continuous forcing `(h/√δ) G v̇ dt`.  The large-deviation
//! scaling is `h = ε^{-1/2}` (so the shift `√ε·h·u = u` is order one); the
//! moderate regime uses `1 ≪ h ≪ ε^{-1/2}`.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::algebra::{AlgebraError, PiecewiseLinearPath};
use crate::gaussian::cm::CmKernel;
use crate::gaussian::{translate, CameronMartinControl, GaussianError};
use crate::rde::{solve_rde, RdeError, RdeProblem, SolveBudget};
use crate::rngs::StreamFactory;
use crate::roughpath::{RoughPath, RoughPathError};
use crate::smooth::SmoothMap;

#[derive(Debug, Error)]
pub enum SlowFastError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Rde(#[from] RdeError),
    #[error("invalid two-scale specification: {0}")]
    InvalidSpec(String),
    #[error("fast state blew up at t = {t:.6} (|y|_∞ = {norm:.3e})")]
    FastBlowUp { t: f64, norm: f64 },
}

/// Constants from the standing assumptions on the fast dynamics, quoted by
/// diagnostics rather than verified globally: `lipschitz` bounds the
/// coefficients' Lipschitz constants, `beta1` is the dissipativity margin
/// (see [`SlowFastSpec::dissipativity_spot_check`]), and `beta2` the
/// resulting contraction rate between fast paths sharing a noise stream.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionParams {
    pub lipschitz: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AssumptionParams {
    fn default() -> Self {
        Self {
            lipschitz: 1.0,
            beta1: 1.0,
            beta2: 1.0,
        }
    }
}

/// The coupled two-scale problem.
///
/// Dimensions are read off the coefficient maps: `f : R^{m+n} → R^m`,
/// `σ : R^m → R^{m·d}` (row-major, driver dimension `d`),
/// `F : R^{m+n} → R^n` (Stratonovich-form fast drift) and
/// `G : R^{m+n} → R^{n·e}` (row-major, `e` Brownian channels).  The fast
/// noise may be degenerate (`e = 0` is rejected, but `G ≡ 0` is allowed).
#[derive(Clone)]
pub struct SlowFastSpec {
    pub slow_drift: Arc<dyn SmoothMap>,
    pub slow_diffusion: Arc<dyn SmoothMap>,
    pub fast_drift: Arc<dyn SmoothMap>,
    pub fast_diffusion: Arc<dyn SmoothMap>,
    pub eps: f64,
    pub delta: f64,
    pub hurst: f64,
    pub initial_slow: Vec<f64>,
    pub initial_fast: Vec<f64>,
    pub assumptions: AssumptionParams,
}

impl SlowFastSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        slow_drift: Arc<dyn SmoothMap>,
        slow_diffusion: Arc<dyn SmoothMap>,
        fast_drift: Arc<dyn SmoothMap>,
        fast_diffusion: Arc<dyn SmoothMap>,
        eps: f64,
        delta: f64,
        hurst: f64,
        initial_slow: Vec<f64>,
        initial_fast: Vec<f64>,
    ) -> Result<Self, SlowFastError> {
        let m = initial_slow.len();
        let n = initial_fast.len();
        let joint = m + n;
        if m == 0 || n == 0 {
            return Err(SlowFastError::InvalidSpec(
                "slow and fast states must both be nonempty".into(),
            ));
        }
        let check = |name: &str, got_in: usize, want_in: usize, got_out: usize, mult: usize| {
            if got_in != want_in {
                return Err(SlowFastError::InvalidSpec(format!(
                    "{name}: dim_in = {got_in}, expected {want_in}"
                )));
            }
            if mult == 0 || got_out % mult != 0 {
                return Err(SlowFastError::InvalidSpec(format!(
                    "{name}: dim_out = {got_out} is not a multiple of {mult}"
                )));
            }
            Ok(got_out / mult)
        };
        let mf = check("slow drift", slow_drift.dim_in(), joint, slow_drift.dim_out(), 1)?;
        if mf != m {
            return Err(SlowFastError::InvalidSpec(format!(
                "slow drift maps into R^{mf}, state is R^{m}"
            )));
        }
        check("slow diffusion", slow_diffusion.dim_in(), m, slow_diffusion.dim_out(), m)?;
        let nf = check("fast drift", fast_drift.dim_in(), joint, fast_drift.dim_out(), 1)?;
        if nf != n {
            return Err(SlowFastError::InvalidSpec(format!(
                "fast drift maps into R^{nf}, state is R^{n}"
            )));
        }
        let e = check("fast diffusion", fast_diffusion.dim_in(), joint, fast_diffusion.dim_out(), n)?;
        if e == 0 {
            return Err(SlowFastError::InvalidSpec(
                "fast diffusion has no noise channels".into(),
            ));
        }
        if !(eps > 0.0 && eps <= 1.0) || !(delta > 0.0) {
            return Err(SlowFastError::InvalidSpec(format!(
                "scales must satisfy 0 < ε ≤ 1 and δ > 0 (got ε = {eps}, δ = {delta})"
            )));
        }
        if !(hurst > 0.0 && hurst < 0.5) {
            return Err(SlowFastError::InvalidSpec(format!(
                "Hurst index {hurst} outside (0, 1/2)"
            )));
        }
        Ok(Self {
            slow_drift,
            slow_diffusion,
            fast_drift,
            fast_diffusion,
            eps,
            delta,
            hurst,
            initial_slow,
            initial_fast,
            assumptions: AssumptionParams::default(),
        })
    }

    pub fn dim_slow(&self) -> usize {
        self.initial_slow.len()
    }

    pub fn dim_fast(&self) -> usize {
        self.initial_fast.len()
    }

    /// Driver dimension of the slow equation.
    pub fn dim_driver(&self) -> usize {
        self.slow_diffusion.dim_out() / self.dim_slow()
    }

    /// Number of Brownian channels feeding the fast equation.
    pub fn dim_noise(&self) -> usize {
        self.fast_diffusion.dim_out() / self.dim_fast()
    }

    /// True when the scales are actually separated (`δ < ε`); the averaging
    /// statements concern this regime, though the simulator runs either way.
    pub fn scales_separated(&self) -> bool {
        self.delta < self.eps
    }

    /// The Itô-form fast drift `F̃` (see module docs).
    pub fn corrected_fast_drift(&self) -> Result<Arc<dyn SmoothMap>, SlowFastError> {
        ito_correction(&self.fast_drift, &self.fast_diffusion, self.dim_slow())
    }

    /// Monte-Carlo spot check of the dissipativity condition
    ///
    /// ```text
    ///   2⟨y₁−y₂, F̃(x,y₁)−F̃(x,y₂)⟩ + ‖G(x,y₁)−G(x,y₂)‖²_F ≤ −β₁ |y₁−y₂|²
    /// ```
    ///
    /// at uniformly random points in a box of the given radius.  A failed
    /// check is reported, not fatal: the condition is a hypothesis of the
    /// averaging statements, and the point of the check is to catch
    /// specifications that cannot satisfy them.
    pub fn dissipativity_spot_check(
        &self,
        samples: usize,
        radius: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<DissipativityReport, SlowFastError> {
        let m = self.dim_slow();
        let n = self.dim_fast();
        let corrected = self.corrected_fast_drift()?;
        let beta1 = self.assumptions.beta1;
        let mut worst = f64::NEG_INFINITY;
        let mut violations = 0usize;
        for _ in 0..samples {
            let draw = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
                (0..len).map(|_| rng.gen_range(-radius..radius)).collect()
            };
            let x = draw(rng, m);
            let y1 = draw(rng, n);
            let y2 = draw(rng, n);
            let z1: Vec<f64> = x.iter().chain(&y1).copied().collect();
            let z2: Vec<f64> = x.iter().chain(&y2).copied().collect();
            let f1 = corrected.eval(&z1);
            let f2 = corrected.eval(&z2);
            let g1 = self.fast_diffusion.eval(&z1);
            let g2 = self.fast_diffusion.eval(&z2);
            let mut inner = 0.0;
            let mut dy2 = 0.0;
            for a in 0..n {
                let dy = y1[a] - y2[a];
                inner += dy * (f1[a] - f2[a]);
                dy2 += dy * dy;
            }
            let dg2: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum();
            let margin = 2.0 * inner + dg2 + beta1 * dy2;
            worst = worst.max(margin);
            if margin > 1e-10 * (1.0 + dy2) {
                violations += 1;
            }
        }
        Ok(DissipativityReport {
            checked: samples,
            violations,
            worst_margin: worst,
        })
    }
}

/// Outcome of a dissipativity spot check: `worst_margin ≤ 0` means every
/// sampled triple satisfied the inequality with the spec's `beta1`.
#[derive(Debug, Clone, Copy)]
pub struct DissipativityReport {
    pub checked: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

// ---------------------------------------------------------------------------
// Itô correction
// ---------------------------------------------------------------------------

/// Build the Itô-form drift `F̃` from a Stratonovich-form drift `F` and
/// diffusion `G` on the joint state `(x, y) ∈ R^{m+n}`:
///
/// ```text
///   F̃ᵏ(x,y) = Fᵏ(x,y) + ½ Σ_{i≤n, j≤e} ∂Gᵏʲ/∂y_i · Gⁱʲ(x,y).
/// ```
///
/// Only the `y`-derivatives of `G` enter — the slow argument is a
/// parameter of the fast equation, not part of its state.  The value is
/// assembled from `G`'s exact gradient; the returned map's own derivative
/// tensors are finite-difference (the simulator only evaluates it).
pub fn ito_correction(
    fast_drift: &Arc<dyn SmoothMap>,
    fast_diffusion: &Arc<dyn SmoothMap>,
    dim_slow: usize,
) -> Result<Arc<dyn SmoothMap>, SlowFastError> {
    let joint = fast_drift.dim_in();
    if fast_diffusion.dim_in() != joint {
        return Err(SlowFastError::InvalidSpec(format!(
            "drift and diffusion disagree on the joint dimension ({} vs {})",
            joint,
            fast_diffusion.dim_in()
        )));
    }
    let n = fast_drift.dim_out();
    if dim_slow + n != joint {
        return Err(SlowFastError::InvalidSpec(format!(
            "fast drift maps R^{joint} → R^{n}, inconsistent with slow dimension {dim_slow}"
        )));
    }
    if n == 0 || fast_diffusion.dim_out() % n != 0 {
        return Err(SlowFastError::InvalidSpec(format!(
            "fast diffusion dim_out = {} is not a multiple of the fast dimension {n}",
            fast_diffusion.dim_out()
        )));
    }
    let e = fast_diffusion.dim_out() / n;
    let f = fast_drift.clone();
    let g = fast_diffusion.clone();
    let bound = f.c4_bound() + g.c4_bound() * g.c4_bound();
    let eval = move |z: &[f64]| -> Vec<f64> {
        let mut out = f.eval(z);
        let gv = g.eval(z);
        let gg = g.grad(z);
        // grad layout: entry (k·e + j)·joint + a  is  ∂G^{kj}/∂z_a; the
        // y-coordinates sit at a = dim_slow + i.
        for (k, out_k) in out.iter_mut().enumerate() {
            let mut corr = 0.0;
            for j in 0..e {
                let row = (k * e + j) * joint;
                for i in 0..n {
                    corr += gg[row + dim_slow + i] * gv[i * e + j];
                }
            }
            *out_k += 0.5 * corr;
        }
        out
    };
    Ok(Arc::new(crate::smooth::FdAdapter::new(
        eval, joint, n, bound,
    )))
}

// ---------------------------------------------------------------------------
// Frozen fast dynamics and the averaged drift
// ---------------------------------------------------------------------------

/// Integrate the fast diffusion with the slow argument frozen at `x`, in
/// the fast process's own time (no `δ` scaling):
///
/// ```text
///   dY_s = F̃(x, Y_s) ds + G(x, Y_s) dW_s,   Y_0 = y0.
/// ```
///
/// Euler–Maruyama with step `dt`.  Under the dissipativity condition this
/// process mixes exponentially and its occupation measure converges to the
/// invariant law `μ_x`; un-dissipative inputs are caught by a blow-up cap
/// at `10⁶·(1 + |x|_∞ + |y0|_∞)` rather than left to overflow.
pub fn frozen_fast(
    spec: &SlowFastSpec,
    x: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PiecewiseLinearPath, SlowFastError> {
    let n = spec.dim_fast();
    let e = spec.dim_noise();
    if x.len() != spec.dim_slow() || y0.len() != n {
        return Err(SlowFastError::InvalidSpec(format!(
            "frozen point dims ({}, {}) disagree with the spec ({}, {})",
            x.len(),
            y0.len(),
            spec.dim_slow(),
            n
        )));
    }
    if !(horizon > 0.0 && dt > 0.0 && dt <= horizon) {
        return Err(SlowFastError::InvalidSpec(format!(
            "need 0 < dt ≤ horizon (got dt = {dt}, horizon = {horizon})"
        )));
    }
    let corrected = spec.corrected_fast_drift()?;
    let steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    let sqh = h.sqrt();
    let cap = 1e6 * (1.0 + sup_norm(x) + sup_norm(y0));
    let mut y = y0.to_vec();
    let mut z = vec![0.0; x.len() + n];
    z[..x.len()].copy_from_slice(x);
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(y.clone());
    for step in 0..steps {
        z[x.len()..].copy_from_slice(&y);
        let drift = corrected.eval(&z);
        let diff = spec.fast_diffusion.eval(&z);
        for (a, ya) in y.iter_mut().enumerate() {
            *ya += drift[a] * h;
        }
        for j in 0..e {
            let xi: f64 = rng.sample(StandardNormal);
            for a in 0..n {
                y[a] += diff[a * e + j] * sqh * xi;
            }
        }
        let t = (step + 1) as f64 * h;
        if !y.iter().all(|v| v.is_finite()) || sup_norm(&y) > cap {
            return Err(SlowFastError::FastBlowUp {
                t,
                norm: sup_norm(&y),
            });
        }
        times.push(t);
        values.push(y.clone());
    }
    Ok(PiecewiseLinearPath::new(times, values)?)
}

/// Time and discretization budget for one ergodic average: `burn_in` is
/// discarded, the remaining `horizon` is averaged in `batches` equal
/// batches (means of batch means give the error bar).
#[derive(Debug, Clone, Copy)]
pub struct ErgodicBudget {
    pub horizon: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub batches: usize,
}

impl Default for ErgodicBudget {
    fn default() -> Self {
        Self {
            horizon: 64.0,
            dt: 1.0 / 128.0,
            burn_in: 8.0,
            batches: 16,
        }
    }
}

/// A batch-means estimate of the averaged drift at one slow point.
#[derive(Debug, Clone)]
pub struct BarFEstimate {
    pub value: Vec<f64>,
    /// Per-coordinate standard error from the batch means; doubled when the
    /// split-half check fails.
    pub stderr: Vec<f64>,
    /// Exponential decay rate fitted to the autocovariance of `f(x, Y)`
    /// (first coordinate); `+∞` when the observable is constant along the
    /// trajectory.
    pub decay_rate: f64,
    /// False when the first- and second-half means disagree beyond three
    /// joint standard errors — the estimate is then reported with widened
    /// error bars instead of being silently trusted.
    pub converged: bool,
}

/// Estimate `bar_f(x) = ∫ f(x, y) μ_x(dy)` by a long-run time average of
/// `f(x, Y_s)` along one frozen-fast trajectory started at the spec's fast
/// initial condition.
pub fn estimate_bar_f(
    spec: &SlowFastSpec,
    x: &[f64],
    budget: &ErgodicBudget,
    rng: &mut ChaCha8Rng,
) -> Result<BarFEstimate, SlowFastError> {
    if budget.batches < 2 || !(budget.horizon > 0.0) || !(budget.burn_in >= 0.0) {
        return Err(SlowFastError::InvalidSpec(format!(
            "ergodic budget needs ≥ 2 batches and positive horizon (got {budget:?})"
        )));
    }
    let m = spec.dim_slow();
    let total = budget.burn_in + budget.horizon;
    let path = frozen_fast(spec, x, &spec.initial_fast, total, budget.dt, rng)?;
    let times = path.times();
    let values = path.values();
    // Left-endpoint samples of φ_s = f(x, Y_s) on the post-burn-in window.
    let start = times.partition_point(|&t| t < budget.burn_in - 1e-12);
    let mut z = vec![0.0; m + spec.dim_fast()];
    z[..m].copy_from_slice(x);
    let samples: Vec<Vec<f64>> = values[start..]
        .iter()
        .map(|y| {
            z[m..].copy_from_slice(y);
            spec.slow_drift.eval(&z)
        })
        .collect();
    let count = samples.len();
    if count < 2 * budget.batches {
        return Err(SlowFastError::InvalidSpec(format!(
            "budget leaves only {count} samples for {} batches",
            budget.batches
        )));
    }
    let p = m;
    let batch_len = count / budget.batches;
    let used = batch_len * budget.batches;
    let mut batch_means = vec![vec![0.0; p]; budget.batches];
    for (b, mean) in batch_means.iter_mut().enumerate() {
        for sample in &samples[b * batch_len..(b + 1) * batch_len] {
            for (acc, v) in mean.iter_mut().zip(sample) {
                *acc += v;
            }
        }
        for acc in mean.iter_mut() {
            *acc /= batch_len as f64;
        }
    }
    let nb = budget.batches as f64;
    let mut value = vec![0.0; p];
    for mean in &batch_means {
        for (acc, v) in value.iter_mut().zip(mean) {
            *acc += v / nb;
        }
    }
    let mut stderr = vec![0.0; p];
    for (i, se) in stderr.iter_mut().enumerate() {
        let var: f64 = batch_means
            .iter()
            .map(|mean| (mean[i] - value[i]).powi(2))
            .sum::<f64>()
            / (nb - 1.0);
        *se = (var / nb).sqrt();
    }
    // Split-half agreement: a drifting average (not yet mixed) shows up as
    // first- and second-half means separated by more than the joint bars.
    let half = used / 2;
    let mut converged = true;
    for i in 0..p {
        let first: f64 = samples[..half].iter().map(|s| s[i]).sum::<f64>() / half as f64;
        let second: f64 =
            samples[half..used].iter().map(|s| s[i]).sum::<f64>() / (used - half) as f64;
        let scale = 3.0 * 2.0 * stderr[i] + 1e-12 * (1.0 + value[i].abs());
        if (first - second).abs() > scale {
            converged = false;
        }
    }
    if !converged {
        for se in stderr.iter_mut() {
            *se *= 2.0;
        }
    }
    let decay_rate = fit_decay_rate(&samples, budget.dt, value[0], 0);
    Ok(BarFEstimate {
        value,
        stderr,
        decay_rate,
        converged,
    })
}

/// Least-squares slope of `log acf(ℓ)` over the initial positive stretch of
/// the empirical autocorrelation of coordinate `coord`; returns `+∞` for a
/// (numerically) constant observable.
fn fit_decay_rate(samples: &[Vec<f64>], dt: f64, mean: f64, coord: usize) -> f64 {
    let n = samples.len();
    let centered: Vec<f64> = samples.iter().map(|s| s[coord] - mean).collect();
    let var: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var < 1e-24 {
        return f64::INFINITY;
    }
    let max_lag = (n / 8).max(2);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for lag in 1..max_lag {
        let cov: f64 = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n - lag) as f64;
        let rho = cov / var;
        if rho < 0.05 {
            break;
        }
        xs.push(lag as f64 * dt);
        ys.push(rho.ln());
    }
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    let k = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    -slope
}

/// The averaged drift `x ↦ bar_f(x)`, backed by a cache of per-point
/// ergodic estimates.
///
/// Points are quantized to a grid of pitch `quant` before lookup, and the
/// noise stream for each point is derived deterministically from the seed
/// and the quantized coordinates — so the map is a pure function of `x`
/// (same input, same output, across calls and across runs), which keeps
/// Monte-Carlo drivers reproducible.  The cache is shared behind a mutex;
/// concurrent estimates of the same point compute the same value, so
/// last-write-wins insertion is harmless.
pub struct AveragedModel {
    spec: SlowFastSpec,
    budget: ErgodicBudget,
    seed: u64,
    quant: f64,
    cache: Mutex<HashMap<Vec<i64>, BarFEstimate>>,
}

impl AveragedModel {
    pub fn new(spec: SlowFastSpec, budget: ErgodicBudget, seed: u64) -> Self {
        Self {
            spec,
            budget,
            seed,
            quant: 1e-6,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.quant).round() as i64).collect()
    }

    /// The cached estimate at `x` (computing it on a miss).
    pub fn estimate(&self, x: &[f64]) -> Result<BarFEstimate, SlowFastError> {
        let key = self.key(x);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        key.hash(&mut hasher);
        let mut rng = StreamFactory::new(self.seed).stream(hasher.finish());
        let snapped: Vec<f64> = key.iter().map(|k| *k as f64 * self.quant).collect();
        let est = estimate_bar_f(&self.spec, &snapped, &self.budget, &mut rng)?;
        self.cache
            .lock()
            .unwrap()
            .insert(key, est.clone());
        Ok(est)
    }

    /// `bar_f(x)` as a plain vector.
    pub fn bar_f(&self, x: &[f64]) -> Result<Vec<f64>, SlowFastError> {
        Ok(self.estimate(x)?.value)
    }

    /// Crude Lipschitz estimate: the largest difference quotient of
    /// `bar_f` over random pairs in a box of the given radius.
    pub fn lip_estimate(
        &self,
        radius: f64,
        pairs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, SlowFastError> {
        let m = self.spec.dim_slow();
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-radius..radius)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-radius..radius)).collect();
            let dist: f64 = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            if dist < 1e-9 {
                continue;
            }
            let fa = self.bar_f(&a)?;
            let fb = self.bar_f(&b)?;
            let diff: f64 = fa
                .iter()
                .zip(&fb)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(diff / dist);
        }
        Ok(worst)
    }

    /// The averaged drift as a [`SmoothMap`] for use in skeleton solves.
    /// Derivatives are finite differences of cached Monte-Carlo values, so
    /// their accuracy is limited by the estimator's error bars — fine for
    /// exploration, not for oracle-grade comparisons.
    pub fn as_map(self: &Arc<Self>) -> Arc<dyn SmoothMap> {
        let this = self.clone();
        let m = this.spec.dim_slow();
        let bound = this.spec.slow_drift.c4_bound();
        Arc::new(crate::smooth::FdAdapter::new(
            move |x: &[f64]| {
                this.bar_f(x)
                    .expect("averaged drift evaluation failed inside a smooth-map wrapper")
            },
            m,
            m,
            bound,
        ))
    }
}

// ---------------------------------------------------------------------------
// The coupled simulation
// ---------------------------------------------------------------------------

/// How the two-scale system is forced.
///
/// `Plain` is the original dynamics.  `Controlled` adds a Cameron–Martin
/// pair `(u, v)` at strength `h`: the slow driver is translated by
/// `√ε·h·u` and the fast equation gains the drift `(h/√δ) G v̇ dt`.  Either
/// factor of the control may be empty (zero-dimensional), switching off
/// the corresponding term.
#[derive(Clone)]
pub enum DrivingMode {
    Plain,
    Controlled {
        h: f64,
        ctrl: CameronMartinControl,
    },
}

impl DrivingMode {
    /// Large-deviation scaling: `h = ε^{-1/2}`, so the slow shift is
    /// exactly `u` and the fast forcing is `(εδ)^{-1/2} G v̇`.
    pub fn controlled_ldp(eps: f64, ctrl: CameronMartinControl) -> Self {
        Self::Controlled {
            h: eps.powf(-0.5),
            ctrl,
        }
    }

    /// Moderate scaling `h = ε^{-θ/2}` with `θ ∈ (0,1)`: `h → ∞` while
    /// `√ε·h = ε^{(1-θ)/2} → 0`.
    pub fn controlled_mdp(eps: f64, theta: f64, ctrl: CameronMartinControl) -> Self {
        Self::Controlled {
            h: eps.powf(-0.5 * theta),
            ctrl,
        }
    }
}

/// One coupled trajectory: the slow state on the macro grid and the fast
/// state on the nested micro grid it was advanced on.
#[derive(Debug, Clone)]
pub struct SlowFastTrajectory {
    pub slow: PiecewiseLinearPath,
    pub fast: PiecewiseLinearPath,
}

/// Integrate the coupled system over the driver's grid.
///
/// Per macro cell `[t_k, t_{k+1}]`:
///
///   1. the slow state is advanced by the rough-path solver with driver
///      `√ε · lift` (translated by the control's `√ε·h·u` when controlled)
///      restricted to the cell, the fast argument of `f` held at the
///      cell-start fast value;
///   2. the fast state is advanced by Euler–Maruyama on a micro grid of
///      step `min(δ/50, cell/20)`, the slow argument interpolated along
///      the cell's chord (so the fast sees the slow at each micro-step
///      start, matching the frozen comparison process exactly when the
///      freeze window equals the micro step).
///
/// `rng` feeds only the fast noise — exactly `e` standard normals per
/// micro step, in coordinate order — so a clone of it replays the same
/// noise into [`auxiliary_fast`] for coupled comparisons.
pub fn simulate_slow_fast(
    spec: &SlowFastSpec,
    driver: &RoughPath,
    mode: &DrivingMode,
    rng: &mut ChaCha8Rng,
) -> Result<SlowFastTrajectory, SlowFastError> {
    let m = spec.dim_slow();
    let n = spec.dim_fast();
    let e = spec.dim_noise();
    let d = spec.dim_driver();
    if driver.dim() != d {
        return Err(SlowFastError::InvalidSpec(format!(
            "driver dimension {} does not match the slow diffusion's {d}",
            driver.dim()
        )));
    }
    let macro_times = driver.times().to_vec();
    let sqrt_eps = spec.eps.sqrt();
    let mut eff = driver.dilate(sqrt_eps);

    // Control terms: slow translation now, fast forcing inside the loop.
    let mut fast_forcing: Option<(f64, &CameronMartinControl)> = None;
    if let DrivingMode::Controlled { h, ctrl } = mode {
        if ctrl.d_fbm() > 0 {
            if ctrl.d_fbm() != d {
                return Err(SlowFastError::InvalidSpec(format!(
                    "control's fractional factor is {}-dimensional, driver is {d}-dimensional",
                    ctrl.d_fbm()
                )));
            }
            if (ctrl.hurst() - spec.hurst).abs() > 1e-12 {
                return Err(SlowFastError::InvalidSpec(format!(
                    "control Hurst index {} differs from the spec's {}",
                    ctrl.hurst(),
                    spec.hurst
                )));
            }
            let kernel = CmKernel::new(ctrl.hurst(), &macro_times, ctrl.ctrl_times())?;
            let u = kernel.u_values(ctrl.hhat())?;
            let scale = sqrt_eps * h;
            let shifted: Vec<Vec<f64>> = u
                .iter()
                .map(|row| row.iter().map(|v| scale * v).collect())
                .collect();
            let shift = PiecewiseLinearPath::new(macro_times.clone(), shifted)?;
            eff = translate(&eff, &shift)?;
        }
        if ctrl.d_bm() > 0 {
            if ctrl.d_bm() != e {
                return Err(SlowFastError::InvalidSpec(format!(
                    "control's Brownian factor is {}-dimensional, fast noise is {e}-dimensional",
                    ctrl.d_bm()
                )));
            }
            fast_forcing = Some((*h, ctrl));
        }
    }

    let corrected = spec.corrected_fast_drift()?;
    let budget = SolveBudget {
        norm_diagnostics: false,
        ..SolveBudget::default()
    };
    let cap = 1e6 * (1.0 + sup_norm(&spec.initial_slow) + sup_norm(&spec.initial_fast));
    let inv_delta = 1.0 / spec.delta;
    let inv_sqrt_delta = spec.delta.sqrt().recip();

    let mut x = spec.initial_slow.clone();
    let mut y = spec.initial_fast.clone();
    let mut slow_values = Vec::with_capacity(macro_times.len());
    slow_values.push(x.clone());
    let mut micro_times = vec![macro_times[0]];
    let mut fast_values = vec![y.clone()];
    let mut z = vec![0.0; m + n];

    for k in 0..macro_times.len() - 1 {
        let frozen = FrozenDrift::new(spec.slow_drift.clone(), y.clone(), m);
        let cell_driver = Arc::new(eff.restrict(k, k + 1)?);
        let problem = RdeProblem::new(
            Arc::new(frozen),
            spec.slow_diffusion.clone(),
            cell_driver,
            x.clone(),
        );
        let solution = solve_rde(&problem, &budget)?;
        let x_next = solution.final_value().to_vec();

        let (t0, t1) = (macro_times[k], macro_times[k + 1]);
        let span = t1 - t0;
        let dt_target = (spec.delta / 50.0).min(span / 20.0);
        let n_sub = (span / dt_target).ceil().max(1.0) as usize;
        let h_sub = span / n_sub as f64;
        let sqh = h_sub.sqrt();
        for i in 0..n_sub {
            let s = t0 + i as f64 * h_sub;
            let x_arg = chord(&x, &x_next, t0, t1, s);
            z[..m].copy_from_slice(&x_arg);
            z[m..].copy_from_slice(&y);
            let drift = corrected.eval(&z);
            let diff = spec.fast_diffusion.eval(&z);
            for (a, ya) in y.iter_mut().enumerate() {
                *ya += inv_delta * drift[a] * h_sub;
            }
            for j in 0..e {
                let xi: f64 = rng.sample(StandardNormal);
                for a in 0..n {
                    y[a] += inv_sqrt_delta * diff[a * e + j] * sqh * xi;
                }
            }
            if let Some((h, ctrl)) = fast_forcing {
                let vdot = vprime_at(ctrl, s);
                let strength = h * inv_sqrt_delta * h_sub;
                for a in 0..n {
                    for j in 0..e {
                        y[a] += strength * diff[a * e + j] * vdot[j];
                    }
                }
            }
            let s_next = if i + 1 == n_sub {
                t1
            } else {
                t0 + (i + 1) as f64 * h_sub
            };
            if !y.iter().all(|v| v.is_finite()) || sup_norm(&y) > cap {
                return Err(SlowFastError::FastBlowUp {
                    t: s_next,
                    norm: sup_norm(&y),
                });
            }
            micro_times.push(s_next);
            fast_values.push(y.clone());
        }

        x = x_next;
        slow_values.push(x.clone());
    }

    Ok(SlowFastTrajectory {
        slow: PiecewiseLinearPath::new(macro_times, slow_values)?,
        fast: PiecewiseLinearPath::new(micro_times, fast_values)?,
    })
}

/// Linear interpolation along a cell chord, written in the same form as
/// the path evaluator so coupled comparisons agree to rounding.
fn chord(x0: &[f64], x1: &[f64], t0: f64, t1: f64, s: f64) -> Vec<f64> {
    let th = (s - t0) / (t1 - t0);
    x0.iter().zip(x1).map(|(a, b)| a + th * (b - a)).collect()
}

/// The piecewise-constant control derivative `v̇` at time `t`.
fn vprime_at<'c>(ctrl: &'c CameronMartinControl, t: f64) -> &'c [f64] {
    let times = ctrl.ctrl_times();
    let cells = ctrl.vprime().len();
    let k = times.partition_point(|&u| u <= t);
    let k = k.saturating_sub(1).min(cells - 1);
    &ctrl.vprime()[k]
}

/// Re-run the fast equation with the slow input frozen on windows of
/// length `freeze_window`: at micro-step start `s` the slow argument is
/// `slow(Δ·⌊s/Δ⌋)` instead of `slow(s)`.  No control forcing is applied.
///
/// Passing the micro grid and a clone of the `rng` that fed
/// [`simulate_slow_fast`] couples this process to the true fast path
/// noise-for-noise; with `freeze_window` equal to the micro step the two
/// coincide up to rounding, and `freeze_window ≥` the horizon freezes the
/// slow argument at its initial value.
pub fn auxiliary_fast(
    spec: &SlowFastSpec,
    slow: &PiecewiseLinearPath,
    freeze_window: f64,
    micro_times: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<PiecewiseLinearPath, SlowFastError> {
    let m = spec.dim_slow();
    let n = spec.dim_fast();
    let e = spec.dim_noise();
    if slow.dim() != m {
        return Err(SlowFastError::InvalidSpec(format!(
            "slow path dimension {} does not match the spec's {m}",
            slow.dim()
        )));
    }
    if !(freeze_window > 0.0) {
        return Err(SlowFastError::InvalidSpec(format!(
            "freeze window must be positive (got {freeze_window})"
        )));
    }
    if micro_times.len() < 2 {
        return Err(SlowFastError::InvalidSpec(
            "micro grid needs at least two nodes".into(),
        ));
    }
    let t_lo = slow.t_start();
    let t_hi = slow.t_end();
    let corrected = spec.corrected_fast_drift()?;
    let cap = 1e6 * (1.0 + sup_norm(&spec.initial_slow) + sup_norm(&spec.initial_fast));
    let inv_delta = 1.0 / spec.delta;
    let inv_sqrt_delta = spec.delta.sqrt().recip();
    let mut y = spec.initial_fast.clone();
    let mut values = Vec::with_capacity(micro_times.len());
    values.push(y.clone());
    let mut z = vec![0.0; m + n];
    for w in micro_times.windows(2) {
        let (s, s_next) = (w[0], w[1]);
        let h_sub = s_next - s;
        if !(h_sub > 0.0) {
            return Err(SlowFastError::InvalidSpec(
                "micro grid must be strictly increasing".into(),
            ));
        }
        let frozen_t = (freeze_window * ((s / freeze_window) + 1e-9).floor()).clamp(t_lo, t_hi);
        let x_arg = slow.value_at(frozen_t)?;
        z[..m].copy_from_slice(&x_arg);
        z[m..].copy_from_slice(&y);
        let drift = corrected.eval(&z);
        let diff = spec.fast_diffusion.eval(&z);
        for (a, ya) in y.iter_mut().enumerate() {
            *ya += inv_delta * drift[a] * h_sub;
        }
        let sqh = h_sub.sqrt();
        for j in 0..e {
            let xi: f64 = rng.sample(StandardNormal);
            for a in 0..n {
                y[a] += inv_sqrt_delta * diff[a * e + j] * sqh * xi;
            }
        }
        if !y.iter().all(|v| v.is_finite()) || sup_norm(&y) > cap {
            return Err(SlowFastError::FastBlowUp {
                t: s_next,
                norm: sup_norm(&y),
            });
        }
        values.push(y.clone());
    }
    Ok(PiecewiseLinearPath::new(micro_times.to_vec(), values)?)
}

// ---------------------------------------------------------------------------
// Freeze-window decomposition
// ---------------------------------------------------------------------------

/// Monte-Carlo sizes of the four terms that telescope
/// `∫₀ᵗ [f(X_s, Y_s) − bar_f(X_s)] ds`:
///
/// ```text
///   M₁ freezes the slow argument of f on Δ-windows,
///   M₂ swaps the true fast path for the Δ-frozen auxiliary one,
///   M₃ replaces the time average of f(X_{s(Δ)}, Ŷ_s) by bar_f(X_{s(Δ)}),
///   M₄ unfreezes the slow argument of bar_f,
/// ```
///
/// each field holding the across-run mean of `sup_t |M_i(t)|²` on the
/// micro grid (the sup norm stands in for the Hölder-type seminorms of the
/// corresponding error estimates at desk scale).
#[derive(Debug, Clone, Copy)]
pub struct KhasminskiiReport {
    pub eps: f64,
    pub delta: f64,
    pub freeze_window: f64,
    pub runs: usize,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

/// Estimate the four decomposition terms over `runs` independent driver
/// and noise draws.  `bar_f` supplies the averaged drift — a closed form
/// on benchmark problems, or [`AveragedModel::bar_f`] behind a closure.
/// Deterministic in `seed`: run `r` draws the driver from stream `2r` and
/// the fast noise from stream `2r + 1`.
pub fn khasminskii_report(
    spec: &SlowFastSpec,
    macro_n: usize,
    horizon: f64,
    freeze_window: f64,
    mode: &DrivingMode,
    bar_f: &dyn Fn(&[f64]) -> Vec<f64>,
    runs: usize,
    seed: u64,
) -> Result<KhasminskiiReport, SlowFastError> {
    use crate::gaussian::{lift_fbm, FbmSpec};
    use crate::roughpath::HolderExponents;
    if runs == 0 {
        return Err(SlowFastError::InvalidSpec("need at least one run".into()));
    }
    if !(freeze_window > 0.0) {
        return Err(SlowFastError::InvalidSpec(format!(
            "freeze window must be positive (got {freeze_window})"
        )));
    }
    let m = spec.dim_slow();
    let d = spec.dim_driver();
    let exponents = HolderExponents::for_hurst(spec.hurst)?;
    let fbm = FbmSpec::new_test_mode(spec.hurst, d, macro_n, horizon, seed)?;
    let sampler = crate::gaussian::FbmSampler::new(fbm)?;
    let streams = StreamFactory::new(seed);
    let mut acc = [0.0f64; 4];
    for r in 0..runs {
        let path = sampler.sample(2 * r as u64);
        let driver = lift_fbm(&path, exponents)?;
        let mut fast_rng = streams.stream(2 * r as u64 + 1);
        let aux_rng = fast_rng.clone();
        let traj = simulate_slow_fast(spec, &driver, mode, &mut fast_rng)?;
        let micro = traj.fast.times().to_vec();
        let mut aux_rng = aux_rng;
        let aux = auxiliary_fast(spec, &traj.slow, freeze_window, &micro, &mut aux_rng)?;

        // Running integrals of the four integrands, sup over micro nodes.
        let mut integrals = vec![[0.0f64; 4]; m];
        let mut sups = [0.0f64; 4];
        let t_lo = traj.slow.t_start();
        let t_hi = traj.slow.t_end();
        let mut z = vec![0.0; m + spec.dim_fast()];
        for w in 0..micro.len() - 1 {
            let s = micro[w];
            let dt = micro[w + 1] - s;
            let frozen_t =
                (freeze_window * ((s / freeze_window) + 1e-9).floor()).clamp(t_lo, t_hi);
            let x_s = traj.slow.value_at(s)?;
            let x_frozen = traj.slow.value_at(frozen_t)?;
            let y_s = &traj.fast.values()[w];
            let yhat_s = &aux.values()[w];

            z[..m].copy_from_slice(&x_s);
            z[m..].copy_from_slice(y_s);
            let f_xs_y = spec.slow_drift.eval(&z);
            z[..m].copy_from_slice(&x_frozen);
            let f_xf_y = spec.slow_drift.eval(&z);
            z[m..].copy_from_slice(yhat_s);
            let f_xf_yhat = spec.slow_drift.eval(&z);
            let bar_frozen = bar_f(&x_frozen);
            let bar_s = bar_f(&x_s);

            for i in 0..m {
                integrals[i][0] += (f_xs_y[i] - f_xf_y[i]) * dt;
                integrals[i][1] += (f_xf_y[i] - f_xf_yhat[i]) * dt;
                integrals[i][2] += (f_xf_yhat[i] - bar_frozen[i]) * dt;
                integrals[i][3] += (bar_frozen[i] - bar_s[i]) * dt;
            }
            for (term, sup) in sups.iter_mut().enumerate() {
                let norm_sq: f64 = integrals.iter().map(|row| row[term] * row[term]).sum();
                *sup = sup.max(norm_sq);
            }
        }
        for (a, s) in acc.iter_mut().zip(&sups) {
            *a += s;
        }
    }
    let inv = 1.0 / runs as f64;
    Ok(KhasminskiiReport {
        eps: spec.eps,
        delta: spec.delta,
        freeze_window,
        runs,
        m1: acc[0] * inv,
        m2: acc[1] * inv,
        m3: acc[2] * inv,
        m4: acc[3] * inv,
    })
}

/// Freeze-window schedule for the large-deviation regime:
/// `Δ(δ) = δ^{1/(4β)} · log(1/δ)` for a regularity exponent `β` of the
/// slow path (take `β` just below the driver's Hölder exponent).
pub fn ldp_freeze_window(delta: f64, beta: f64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0 && beta > 0.0);
    delta.powf(1.0 / (4.0 * beta)) * (1.0 / delta).ln()
}

/// Rate exponent of the moderate regime's scale constraint,
/// `a(β) = max(1/(2β), 2/(1−3β))` for `β ∈ (1/4, 1/3)`.
pub fn mdp_rate_exponent(beta: f64) -> f64 {
    assert!(beta > 0.25 && beta < 1.0 / 3.0);
    (1.0 / (2.0 * beta)).max(2.0 / (1.0 - 3.0 * beta))
}

/// Freeze-window schedule for the moderate regime:
/// `Δ(δ) = δ^{1/a(β)} · log(1/δ)`.
pub fn mdp_freeze_window(delta: f64, beta: f64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0);
    delta.powf(1.0 / mdp_rate_exponent(beta)) * (1.0 / delta).ln()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// The slow drift with its fast argument held fixed: `x ↦ f(x, y★)`.
/// Derivative tensors are the `x`-restricted blocks of the joint map's.
struct FrozenDrift {
    inner: Arc<dyn SmoothMap>,
    frozen: Vec<f64>,
    dim_slow: usize,
}

impl FrozenDrift {
    fn new(inner: Arc<dyn SmoothMap>, frozen: Vec<f64>, dim_slow: usize) -> Self {
        Self {
            inner,
            frozen,
            dim_slow,
        }
    }

    fn joint(&self, x: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim_slow + self.frozen.len());
        z.extend_from_slice(x);
        z.extend_from_slice(&self.frozen);
        z
    }

    /// Copy the sub-tensor where every trailing differentiation index is
    /// restricted to the slow block (`order` trailing indices).
    fn restrict(&self, full: &[f64], order: u32) -> Vec<f64> {
        let m = self.dim_slow;
        let big = self.dim_slow + self.frozen.len();
        let p = self.inner.dim_out();
        let small_width = m.pow(order);
        let mut out = vec![0.0; p * small_width];
        for i in 0..p {
            for s in 0..small_width {
                // Unpack s in base m, repack in base `big`.
                let mut rem = s;
                let mut offset = 0usize;
                for level in (0..order).rev() {
                    let digit = rem / m.pow(level);
                    rem %= m.pow(level);
                    offset = offset * big + digit;
                }
                out[i * small_width + s] = full[i * big.pow(order) + offset];
            }
        }
        out
    }
}

impl SmoothMap for FrozenDrift {
    fn dim_in(&self) -> usize {
        self.dim_slow
    }

    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.inner.eval(&self.joint(x))
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.grad(&self.joint(x)), 1)
    }

    fn hess(&self, x: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.hess(&self.joint(x)), 2)
    }

    fn third(&self, x: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.third(&self.joint(x)), 3)
    }

    fn fourth(&self, x: &[f64]) -> Vec<f64> {
        self.restrict(&self.inner.fourth(&self.joint(x)), 4)
    }

    fn c4_bound(&self) -> f64 {
        self.inner.c4_bound()
    }
}
