//! Shared machinery behind the subcommands: driver sampling, control and
//! skeleton assembly, the noiseless base solve, and the Monte-Carlo tail
//! loop reused by `mc-tail` and `slope-check`.

use rayon::prelude::*;
use rough_core::algebra::PiecewiseLinearPath;
use rough_core::deviation::{mc_tail, Skeleton, TailEstimate};
use rough_core::gaussian::{lift_fbm, lift_mixed, CameronMartinControl, FbmSampler, FbmSpec, MixedMode};
use rough_core::rde::{solve_young, YoungProblem};
use rough_core::smooth::Constant;
use rough_core::{
    HolderExponents, RdeProblem, RoughPath, SmoothMap, SolveBudget,
};
use std::sync::Arc;

use crate::config::{
    uniform_times, ControlSection, DriverMode, DriverSection, EventKind, GridSection, HMode,
    McSection, MixedKind, SkeletonSection, SkeletonVariant,
};
use crate::errors::{config_err, CliError};

/// Seed offset separating the Brownian factor's sample stream from the
/// fractional one, so mixed drivers draw independent factors while
/// staying reproducible from the single root seed.
pub const BM_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Samplers for the configured driver law, ready to draw indexed
/// realizations.
pub struct DriverSamplers {
    pub fbm: FbmSampler,
    pub bm: Option<FbmSampler>,
    pub exponents: HolderExponents,
    pub mixed: MixedMode,
}

impl DriverSamplers {
    pub fn build(
        drv: &DriverSection,
        grid: &GridSection,
        seed: u64,
    ) -> Result<Self, CliError> {
        if drv.dim_fbm == 0 {
            return Err(config_err("driver needs dim_fbm ≥ 1"));
        }
        let spec = match drv.mode {
            DriverMode::Strict => {
                FbmSpec::new(drv.hurst, drv.dim_fbm, grid.cells, grid.horizon, seed)?
            }
            DriverMode::Test => {
                FbmSpec::new_test_mode(drv.hurst, drv.dim_fbm, grid.cells, grid.horizon, seed)?
            }
        };
        let fbm = FbmSampler::new(spec)?;
        let bm = if drv.dim_bm > 0 {
            let spec = FbmSpec::new_test_mode(
                0.5,
                drv.dim_bm,
                grid.cells,
                grid.horizon,
                seed ^ BM_SEED_SALT,
            )?;
            Some(FbmSampler::new(spec)?)
        } else {
            None
        };
        Ok(Self {
            fbm,
            bm,
            exponents: HolderExponents::for_hurst(drv.hurst)?,
            mixed: match drv.mixed {
                MixedKind::Geometric => MixedMode::Geometric,
                MixedKind::ItoCross => MixedMode::ItoCross,
            },
        })
    }

    /// Total driver dimension (fractional + Brownian factors).
    pub fn dim(&self) -> usize {
        self.fbm.spec().dim + self.bm.as_ref().map_or(0, |s| s.spec().dim)
    }

    /// The `index`-th driver realization as piecewise-linear factor paths.
    pub fn paths(&self, index: u64) -> (PiecewiseLinearPath, Option<PiecewiseLinearPath>) {
        (
            self.fbm.sample(index),
            self.bm.as_ref().map(|s| s.sample(index)),
        )
    }

    /// The `index`-th driver realization, lifted.
    pub fn lift(&self, index: u64) -> Result<RoughPath, CliError> {
        let (f, b) = self.paths(index);
        match b {
            None => Ok(lift_fbm(&f, self.exponents)?),
            Some(b) => Ok(lift_mixed(&f, &b, self.exponents, self.mixed)?.rough),
        }
    }
}

/// Assemble the Cameron–Martin control described by a `[control]` section.
pub fn control_from_section(
    cs: &ControlSection,
    hurst: f64,
    horizon: f64,
) -> Result<CameronMartinControl, CliError> {
    if cs.cells == 0 {
        return Err(config_err("control needs cells ≥ 1"));
    }
    for (name, rows) in [("hhat", &cs.hhat), ("vprime", &cs.vprime)] {
        if !rows.is_empty() {
            if rows.len() != cs.cells {
                return Err(config_err(format!(
                    "control.{name} has {} rows for {} cells",
                    rows.len(),
                    cs.cells
                )));
            }
            let w = rows[0].len();
            if w == 0 || rows.iter().any(|r| r.len() != w) {
                return Err(config_err(format!(
                    "control.{name} rows must share one positive width"
                )));
            }
        }
    }
    // An omitted factor becomes width-zero rows (the library's encoding
    // of "this factor is absent").
    let expand = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        if rows.is_empty() {
            vec![Vec::new(); cs.cells]
        } else {
            rows.clone()
        }
    };
    Ok(CameronMartinControl::new(
        hurst,
        uniform_times(cs.cells, horizon),
        expand(&cs.hhat),
        expand(&cs.vprime),
    )?)
}

/// Assemble the `[skeleton]` section into a solvable skeleton, checking
/// coefficient shapes up front so the error names the config key.
pub fn skeleton_from_section(sk: &SkeletonSection) -> Result<Skeleton, CliError> {
    let m = sk.initial.len();
    if m == 0 {
        return Err(config_err("skeleton.initial must be non-empty"));
    }
    let drift = sk.drift.build_checked(m, m, "skeleton.drift")?;
    let diffusion = sk.diffusion.build()?;
    if diffusion.dim_in() != m || diffusion.dim_out() % m != 0 {
        return Err(config_err(format!(
            "skeleton.diffusion: expected {m} → {m}×k rows, got {} → {}",
            diffusion.dim_in(),
            diffusion.dim_out()
        )));
    }
    let averaged = matches!(
        sk.variant,
        SkeletonVariant::AveragedLdp | SkeletonVariant::AveragedMdp
    );
    if averaged && sk.diffusion_bm.is_some() {
        return Err(config_err(
            "averaged skeleton variants take no diffusion_bm (the Brownian factor does not enter)",
        ));
    }
    let diffusion_bm = match &sk.diffusion_bm {
        None => None,
        Some(spec) => {
            let map = spec.build()?;
            if map.dim_in() != m || map.dim_out() % m != 0 {
                return Err(config_err(format!(
                    "skeleton.diffusion_bm: expected {m} → {m}×k rows, got {} → {}",
                    map.dim_in(),
                    map.dim_out()
                )));
            }
            Some(map)
        }
    };
    Ok(match sk.variant {
        SkeletonVariant::SingleLdp => Skeleton::SingleScaleLdp {
            drift,
            diffusion_fbm: diffusion,
            diffusion_bm,
            initial: sk.initial.clone(),
        },
        SkeletonVariant::SingleMdp => Skeleton::SingleScaleMdp {
            drift,
            diffusion_fbm: diffusion,
            diffusion_bm,
            base_initial: sk.initial.clone(),
        },
        SkeletonVariant::AveragedLdp => Skeleton::SlowFastLdp {
            averaged_drift: drift,
            diffusion,
            initial: sk.initial.clone(),
        },
        SkeletonVariant::AveragedMdp => Skeleton::SlowFastMdp {
            averaged_drift: drift,
            diffusion,
            base_initial: sk.initial.clone(),
        },
    })
}

/// The single-scale skeleton matching a deviation regime, for slope
/// predictions: the full equation under large deviations, its
/// linearization along the base under moderate ones.
pub fn skeleton_for_slope(
    h_mode: HMode,
    drift: &Arc<dyn SmoothMap>,
    diffusion: &Arc<dyn SmoothMap>,
    initial: &[f64],
) -> Result<Skeleton, CliError> {
    match h_mode {
        HMode::Ldp => Ok(Skeleton::SingleScaleLdp {
            drift: drift.clone(),
            diffusion_fbm: diffusion.clone(),
            diffusion_bm: None,
            initial: initial.to_vec(),
        }),
        HMode::Mdp => Ok(Skeleton::SingleScaleMdp {
            drift: drift.clone(),
            diffusion_fbm: diffusion.clone(),
            diffusion_bm: None,
            base_initial: initial.to_vec(),
        }),
        HMode::Clt => Err(config_err(
            "the central-limit regime has no deviation rate to predict",
        )),
    }
}

/// Solve the noiseless limit `x̄′ = drift(x̄)` on the grid (dyadically
/// refined first-order stepping, read back at the grid nodes).
pub fn noiseless_base(
    drift: &Arc<dyn SmoothMap>,
    initial: &[f64],
    grid: &[f64],
) -> Result<PiecewiseLinearPath, CliError> {
    let w = initial.len();
    let zero_ctrl = PiecewiseLinearPath::new(grid.to_vec(), vec![vec![0.0]; grid.len()])?;
    let p = YoungProblem {
        drift: drift.clone(),
        diffusion: Arc::new(Constant::new(vec![0.0; w], w)),
        control: zero_ctrl,
        initial: initial.to_vec(),
    };
    let sol = solve_young(&p, 1e-8, 12)?;
    Ok(PiecewiseLinearPath::new(grid.to_vec(), sol.node_values)?)
}

/// `h(ε)` for the configured deviation regime.
pub fn h_of_eps(mode: HMode, eps: f64, theta: Option<f64>) -> Result<f64, CliError> {
    if !(eps > 0.0) {
        return Err(config_err(format!("need ε > 0 (got {eps})")));
    }
    Ok(match mode {
        HMode::Clt => 1.0,
        HMode::Ldp => eps.powf(-0.5),
        HMode::Mdp => {
            let theta = theta
                .ok_or_else(|| config_err("h_mode = \"mdp\" needs a theta in (0,1)"))?;
            if !(theta > 0.0 && theta < 1.0) {
                return Err(config_err(format!("theta must lie in (0,1) (got {theta})")));
            }
            eps.powf(-0.5 * theta)
        }
    })
}

/// One Monte-Carlo tail estimation at a fixed noise strength: solve the
/// perturbed equation along `runs` independent driver samples, evaluate
/// the deviation functional, and wrap the exceedance count in a Wilson
/// interval.
///
/// Returns the estimate together with the sampled functional values (in
/// run order, independent of thread scheduling).
pub struct TailJob<'a> {
    pub drift: Arc<dyn SmoothMap>,
    pub diffusion: Arc<dyn SmoothMap>,
    pub initial: Vec<f64>,
    pub base: &'a PiecewiseLinearPath,
    pub grid: &'a GridSection,
    pub hurst: f64,
    pub driver_mode: DriverMode,
    pub sampler_seed: u64,
    pub eps: f64,
    pub h: f64,
    pub event: EventKind,
    pub threshold: f64,
    pub coord: usize,
    pub runs: usize,
}

pub fn run_tail(job: &TailJob) -> Result<(TailEstimate, Vec<f64>), CliError> {
    let w = job.initial.len();
    if job.coord >= w {
        return Err(config_err(format!(
            "event coordinate {} out of range for a {w}-dimensional state",
            job.coord
        )));
    }
    let d = job.diffusion.dim_out() / w;
    let spec = match job.driver_mode {
        DriverMode::Strict => FbmSpec::new(
            job.hurst,
            d,
            job.grid.cells,
            job.grid.horizon,
            job.sampler_seed,
        )?,
        DriverMode::Test => FbmSpec::new_test_mode(
            job.hurst,
            d,
            job.grid.cells,
            job.grid.horizon,
            job.sampler_seed,
        )?,
    };
    let sampler = FbmSampler::new(spec)?;
    let exponents = HolderExponents::for_hurst(job.hurst)?;
    let scale = 1.0 / (job.eps.sqrt() * job.h);
    let budget = SolveBudget {
        norm_diagnostics: false,
        ..SolveBudget::default()
    };
    let base_vals = job.base.values();

    let values: Vec<f64> = (0..job.runs)
        .into_par_iter()
        .map(|r| -> Result<f64, CliError> {
            let path = sampler.sample(r as u64);
            let lift = lift_fbm(&path, exponents)?;
            let driver = lift.dilate(job.eps.sqrt());
            let problem = RdeProblem::new(
                job.drift.clone(),
                job.diffusion.clone(),
                Arc::new(driver),
                job.initial.clone(),
            );
            let sol = rough_core::rde::solve_rde(&problem, &budget)?;
            let vals = sol.values();
            Ok(match job.event {
                EventKind::Terminal => {
                    let k = vals.len() - 1;
                    (vals[k][job.coord] - base_vals[k][job.coord]) * scale
                }
                EventKind::Sup => {
                    let mut sup = 0.0f64;
                    for (x, xb) in vals.iter().zip(base_vals) {
                        sup = sup.max(((x[job.coord] - xb[job.coord]) * scale).abs());
                    }
                    sup
                }
            })
        })
        .collect::<Result<_, _>>()?;

    let estimate = mc_tail(&values, job.threshold, 1.96)?;
    Ok((estimate, values))
}

/// Validate the Monte-Carlo section's universal preconditions.
pub fn validate_mc(mc: &McSection) -> Result<(), CliError> {
    if mc.runs < 1000 {
        return Err(config_err(format!(
            "mc.runs must be at least 1000 for a usable tail estimate (got {})",
            mc.runs
        )));
    }
    if !(mc.threshold > 0.0) {
        return Err(config_err(format!(
            "mc.threshold must be positive (got {})",
            mc.threshold
        )));
    }
    Ok(())
}
