//! `skeleton`: solve the noiseless limit equation for an explicit
//! Cameron–Martin control and write the trajectory with its energy.

use rough_core::deviation::solve_skeleton;
use serde_json::json;

use crate::config::require;
use crate::output::{num, Csv};
use crate::support::{control_from_section, skeleton_from_section};
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let sk = require(&ctx.cfg.skeleton, "skeleton")?;
    let cs = require(&ctx.cfg.control, "control")?;
    let grid = ctx.cfg.grid.times();

    let tol = sk.tol;
    let skeleton = skeleton_from_section(sk)?;
    let ctrl = control_from_section(cs, drv.hurst, ctx.cfg.grid.horizon)?;
    let sol = solve_skeleton(&skeleton, &ctrl, &grid, tol, sk.max_refine)?;

    let m = skeleton.dim_state();
    let mut header: Vec<String> = vec!["t".into()];
    for i in 0..m {
        header.push(format!("x{}", i + 1));
    }
    if sol.base.is_some() {
        for i in 0..m {
            header.push(format!("base{}", i + 1));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Csv::new(&header_refs);
    for (k, t) in sol.path.times().iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(sol.path.values()[k].iter().map(|v| num(*v)));
        if let Some(base) = &sol.base {
            row.extend(base.values()[k].iter().map(|v| num(*v)));
        }
        table.row(&row);
    }
    ctx.out.write("skeleton.csv", &table.into_string())?;

    let summary = json!({
        "energy": sol.energy,
        "terminal": sol.terminal(),
        "refinements": sol.refinements,
        "converged": sol.converged,
    });
    ctx.finish(summary)?;
    if !sol.converged {
        return Err(CliError::Budget(format!(
            "skeleton refinement stopped after {} doublings without meeting tol {tol}",
            sol.refinements
        )));
    }
    Ok(())
}
