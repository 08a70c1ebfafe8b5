//! `rate`: minimize control energy subject to the skeleton hitting a
//! terminal target, and write the optimal control's cell values.

use rough_core::deviation::optimize_rate;
use rough_core::RateOptions;
use serde_json::json;

use crate::config::{require, uniform_times};
use crate::output::{num, Csv};
use crate::support::skeleton_from_section;
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let sk = require(&ctx.cfg.skeleton, "skeleton")?;
    let rt = require(&ctx.cfg.rate, "rate")?;
    let grid = ctx.cfg.grid.times();

    let skeleton = skeleton_from_section(sk)?;
    if rt.target.len() != skeleton.dim_state() {
        return Err(crate::errors::config_err(format!(
            "rate.target has dimension {}, the skeleton state has {}",
            rt.target.len(),
            skeleton.dim_state()
        )));
    }
    let ctrl_times = uniform_times(rt.cells.max(1), ctx.cfg.grid.horizon);
    let defaults = RateOptions::default();
    let opts = RateOptions {
        max_outer: rt.max_outer.unwrap_or(defaults.max_outer),
        max_inner: rt.max_inner.unwrap_or(defaults.max_inner),
        constraint_tol: rt.constraint_tol.unwrap_or(defaults.constraint_tol),
        young_tol: rt.young_tol.unwrap_or(defaults.young_tol),
        ..defaults
    };

    let sol = optimize_rate(&skeleton, drv.hurst, &ctrl_times, &grid, &rt.target, &opts)?;

    let d = sol.control.d_fbm();
    let e = sol.control.d_bm();
    let mut header: Vec<String> = vec!["cell".into(), "t0".into(), "t1".into()];
    for i in 0..d {
        header.push(format!("hhat{}", i + 1));
    }
    for i in 0..e {
        header.push(format!("vprime{}", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Csv::new(&header_refs);
    for k in 0..ctrl_times.len() - 1 {
        let mut row = vec![k.to_string(), num(ctrl_times[k]), num(ctrl_times[k + 1])];
        if d > 0 {
            row.extend(sol.control.hhat()[k].iter().map(|v| num(*v)));
        }
        if e > 0 {
            row.extend(sol.control.vprime()[k].iter().map(|v| num(*v)));
        }
        table.row(&row);
    }
    ctx.out.write("control.csv", &table.into_string())?;

    ctx.finish(json!({
        "energy": sol.energy,
        "terminal": sol.terminal,
        "target": rt.target,
        "constraint_gap": sol.constraint_gap,
        "outer_rounds": sol.outer_rounds,
        "inner_steps": sol.inner_steps,
        "converged": sol.converged,
        "control_cells": rt.cells,
    }))?;
    if !sol.converged {
        return Err(CliError::Budget(format!(
            "optimizer stopped infeasible: terminal gap {:.3e} above tolerance after {} penalty rounds",
            sol.constraint_gap, sol.outer_rounds
        )));
    }
    Ok(())
}
