//! `lift`: draw driver samples, build their level-3 lifts, and write the
//! factor paths plus one fully serialized lift.

use rough_core::serialize::write_rough_path;
use serde_json::json;

use crate::config::require;
use crate::output::{num, Csv};
use crate::support::DriverSamplers;
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let samples = ctx.cfg.lift.as_ref().map_or(1, |l| l.samples).max(1);
    let ds = DriverSamplers::build(drv, &ctx.cfg.grid, ctx.cfg.run.seed)?;

    let mut header: Vec<String> = vec!["sample".into(), "t".into()];
    for i in 0..drv.dim_fbm {
        header.push(format!("b{}", i + 1));
    }
    for i in 0..drv.dim_bm {
        header.push(format!("w{}", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Csv::new(&header_refs);

    let mut worst_defect = 0.0f64;
    for s in 0..samples {
        let (fpath, bpath) = ds.paths(s);
        let lift = ds.lift(s)?;
        worst_defect = worst_defect.max(lift.worst_cell_defect());
        for (k, t) in fpath.times().iter().enumerate() {
            let mut row = vec![s.to_string(), num(*t)];
            row.extend(fpath.values()[k].iter().map(|x| num(*x)));
            if let Some(b) = &bpath {
                row.extend(b.values()[k].iter().map(|x| num(*x)));
            }
            table.row(&row);
        }
        if s == 0 {
            ctx.out.write("lift0.txt", &write_rough_path(&lift))?;
        }
    }
    ctx.out.write("paths.csv", &table.into_string())?;

    ctx.finish(json!({
        "samples": samples,
        "dim_fbm": drv.dim_fbm,
        "dim_bm": drv.dim_bm,
        "hurst": drv.hurst,
        "worst_cell_defect": worst_defect,
        "approximate_factorization": ds.fbm.is_approximate(),
    }))
}
