//! `slope-check`: estimate tail probabilities across a schedule of noise
//! strengths, regress the implied rate, and compare it with the
//! optimizer's prediction.
//!
//! Per level `ε_i` the scale is `a(ε_i) = ε_i` (large deviations) or
//! `ε_i^θ = 1/h²` (moderate deviations), and `−a(ε_i)·log P̂_i` is
//! regressed affinely on `a(ε_i)`; the intercept extrapolates the rate.
//! Levels with zero hits cannot pin their probability down and are
//! truncated from the fit (they are still reported); if fewer than two
//! usable levels remain the schedule was too ambitious for the run
//! budget and the command exits with the budget code.

use rough_core::deviation::{ldp_slope_check, optimize_rate, TailLevel};
use rough_core::RateOptions;
use serde_json::json;

use crate::config::{require, uniform_times, HMode};
use crate::errors::config_err;
use crate::output::{json_num, num, Csv};
use crate::support::{
    h_of_eps, noiseless_base, run_tail, skeleton_for_slope, validate_mc, TailJob,
};
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let rde = require(&ctx.cfg.rde, "rde")?;
    let mc = require(&ctx.cfg.mc, "mc")?;
    let slope = require(&ctx.cfg.slope, "slope")?;
    validate_mc(mc)?;
    if drv.dim_bm != 0 {
        return Err(config_err(
            "slope-check works on pure fractional drivers (set driver.dim_bm = 0)",
        ));
    }
    if rde.initial.len() != 1 {
        return Err(config_err(
            "slope-check compares against a scalar terminal target; it needs a one-dimensional state",
        ));
    }
    if mc.h_mode == HMode::Clt {
        return Err(config_err(
            "slope-check needs a deviation regime (h_mode \"ldp\" or \"mdp\"); the CLT scale is constant",
        ));
    }
    if slope.eps_schedule.len() < 2 {
        return Err(config_err("slope.eps_schedule needs at least two levels"));
    }
    if slope
        .eps_schedule
        .windows(2)
        .any(|w| !(w[0] > w[1] && w[1] > 0.0))
    {
        return Err(config_err(
            "slope.eps_schedule must be positive and strictly decreasing",
        ));
    }
    if !(slope.gap_tol > 0.0) {
        return Err(config_err("slope.gap_tol must be positive"));
    }
    let runs = mc.runs;
    let gap_tol = slope.gap_tol;
    let schedule_len = slope.eps_schedule.len();

    let w = 1usize;
    let d = drv.dim_fbm;
    let drift = rde.drift.build_checked(w, w, "rde.drift")?;
    let diffusion = rde
        .diffusion
        .build_checked(w, w * d, "rde.diffusion (state → state × driver, row-major)")?;

    let grid = ctx.cfg.grid.times();
    let base = noiseless_base(&drift, &rde.initial, &grid)?;
    let base_terminal = base.values().last().unwrap()[0];

    // Predicted rate: optimize the matching skeleton to the event's
    // boundary.  For the large-deviation regime the skeleton's state is
    // the full solution, so the boundary sits at `X̄_T + a`; the
    // linearized regime constrains the deviation block directly at `a`.
    let skeleton = skeleton_for_slope(mc.h_mode, &drift, &diffusion, &rde.initial)?;
    let target = match mc.h_mode {
        HMode::Ldp => vec![base_terminal + mc.threshold],
        HMode::Mdp => vec![mc.threshold],
        HMode::Clt => unreachable!(),
    };
    let cells = ctx.cfg.rate.as_ref().map_or(32, |r| r.cells).max(1);
    let ctrl_times = uniform_times(cells, ctx.cfg.grid.horizon);
    let rate_sol = optimize_rate(
        &skeleton,
        drv.hurst,
        &ctrl_times,
        &grid,
        &target,
        &RateOptions::default(),
    )?;
    if !rate_sol.converged {
        ctx.finish(json!({
            "predicted_rate": rate_sol.energy,
            "converged": false,
        }))?;
        return Err(CliError::Budget(format!(
            "rate optimizer stopped infeasible (terminal gap {:.3e}); no prediction to check against",
            rate_sol.constraint_gap
        )));
    }
    let predicted = rate_sol.energy;

    // One tail estimate per level, each from its own independent sample
    // stream (the root seed is salted per level).
    let mut table = Csv::new(&[
        "eps", "scale", "h", "runs", "hits", "p_hat", "lo", "hi", "used",
    ]);
    let mut levels: Vec<TailLevel> = Vec::new();
    let mut truncated: Vec<f64> = Vec::new();
    for (li, &eps) in slope.eps_schedule.iter().enumerate() {
        let h = h_of_eps(mc.h_mode, eps, mc.theta)?;
        let scale = match mc.h_mode {
            HMode::Ldp => eps,
            HMode::Mdp => 1.0 / (h * h),
            HMode::Clt => unreachable!(),
        };
        let job = TailJob {
            drift: drift.clone(),
            diffusion: diffusion.clone(),
            initial: rde.initial.clone(),
            base: &base,
            grid: &ctx.cfg.grid,
            hurst: drv.hurst,
            driver_mode: drv.mode,
            sampler_seed: ctx
                .cfg
                .run
                .seed
                .wrapping_add((li as u64 + 1).wrapping_mul(crate::support::BM_SEED_SALT)),
            eps,
            h,
            event: mc.event,
            threshold: mc.threshold,
            coord: mc.coord,
            runs: mc.runs,
        };
        let (tail, _) = run_tail(&job)?;
        let used = tail.hits > 0;
        table.row(&[
            num(eps),
            num(scale),
            num(h),
            tail.runs.to_string(),
            tail.hits.to_string(),
            num(tail.p_hat),
            num(tail.lo),
            num(tail.hi),
            used.to_string(),
        ]);
        if used {
            levels.push(TailLevel { scale, tail });
        } else {
            truncated.push(eps);
        }
    }
    ctx.out.write("levels.csv", &table.into_string())?;

    if levels.len() < 2 {
        ctx.finish(json!({
            "predicted_rate": predicted,
            "usable_levels": levels.len(),
            "truncated_eps": truncated,
        }))?;
        return Err(CliError::Budget(format!(
            "only {} of {schedule_len} levels had any hits at {runs} runs — schedule truncated below a fittable size",
            levels.len()
        )));
    }

    let report = ldp_slope_check(&levels, predicted, gap_tol)?;
    ctx.finish(json!({
        "predicted_rate": predicted,
        "rate_estimate": report.rate_estimate,
        "rate_lo": json_num(report.rate_lo),
        "rate_hi": json_num(report.rate_hi),
        "gap": report.gap,
        "gap_tol": gap_tol,
        "within": report.within,
        "used_upper_bounds": report.used_upper_bounds,
        "usable_levels": levels.len(),
        "truncated_eps": truncated,
        "optimizer_constraint_gap": rate_sol.constraint_gap,
    }))?;
    if !report.within {
        return Err(CliError::Invariant(format!(
            "fitted rate {:.6} differs from predicted {:.6} by {:.1}% (tolerance {:.1}%)",
            report.rate_estimate,
            predicted,
            100.0 * report.gap,
            100.0 * gap_tol
        )));
    }
    Ok(())
}
