//! `mc-tail`: crude Monte-Carlo estimate of a deviation-tail probability
//! at one noise strength, with a Wilson confidence interval.
//!
//! The perturbed equation `dX = f(X)dt + σ(X)d(√ε·B)` is solved along
//! independent driver samples; the deviation process
//! `Z = (X − X̄)/(√ε·h(ε))` is evaluated against the configured event.
//! Zero hits still produce a positive upper bound (the interval's top),
//! never a bare zero.

use serde_json::json;

use crate::config::{require, EventKind, HMode};
use crate::output::{json_num, num, Csv};
use crate::support::{h_of_eps, noiseless_base, run_tail, validate_mc, TailJob};
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let rde = require(&ctx.cfg.rde, "rde")?;
    let mc = require(&ctx.cfg.mc, "mc")?;
    validate_mc(mc)?;
    if drv.dim_bm != 0 {
        return Err(crate::errors::config_err(
            "mc-tail works on pure fractional drivers (set driver.dim_bm = 0)",
        ));
    }

    let w = rde.initial.len();
    let d = drv.dim_fbm;
    let drift = rde.drift.build_checked(w, w, "rde.drift")?;
    let diffusion = rde
        .diffusion
        .build_checked(w, w * d, "rde.diffusion (state → state × driver, row-major)")?;

    let grid = ctx.cfg.grid.times();
    let base = noiseless_base(&drift, &rde.initial, &grid)?;
    let h = h_of_eps(mc.h_mode, mc.eps, mc.theta)?;

    let job = TailJob {
        drift,
        diffusion,
        initial: rde.initial.clone(),
        base: &base,
        grid: &ctx.cfg.grid,
        hurst: drv.hurst,
        driver_mode: drv.mode,
        sampler_seed: ctx.cfg.run.seed,
        eps: mc.eps,
        h,
        event: mc.event,
        threshold: mc.threshold,
        coord: mc.coord,
        runs: mc.runs,
    };
    let (tail, values) = run_tail(&job)?;

    let mut table = Csv::new(&["eps", "h", "runs", "hits", "p_hat", "lo", "hi"]);
    table.row(&[
        num(mc.eps),
        num(h),
        tail.runs.to_string(),
        tail.hits.to_string(),
        num(tail.p_hat),
        num(tail.lo),
        num(tail.hi),
    ]);
    ctx.out.write("tail.csv", &table.into_string())?;

    if mc.dump_values {
        let mut vals = Csv::new(&["run", "value"]);
        for (r, v) in values.iter().enumerate() {
            vals.row(&[r.to_string(), num(*v)]);
        }
        ctx.out.write("values.csv", &vals.into_string())?;
    }

    ctx.finish(json!({
        "eps": mc.eps,
        "h": h,
        "h_mode": match mc.h_mode {
            HMode::Clt => "clt",
            HMode::Ldp => "ldp",
            HMode::Mdp => "mdp",
        },
        "event": match mc.event {
            EventKind::Terminal => "terminal",
            EventKind::Sup => "sup",
        },
        "threshold": mc.threshold,
        "coord": mc.coord,
        "runs": tail.runs,
        "hits": tail.hits,
        "p_hat": tail.p_hat,
        "wilson_lo": tail.lo,
        "wilson_hi": json_num(tail.hi),
    }))
}
