//! `slow-fast`: simulate the coupled two-scale system over sampled
//! drivers, in the plain or controlled regimes, and write trajectories
//! plus per-run summaries.
//!
//! Runs fan out across threads; sample `2r` of the driver law and noise
//! stream `2r + 1` belong to run `r`, so results are independent of the
//! thread schedule and reproducible from the root seed alone.

use rand::Rng;
use rayon::prelude::*;
use rough_core::gaussian::lift_fbm;
use rough_core::linalg::pairwise_sum;
use rough_core::rngs::StreamFactory;
use rough_core::slowfast::simulate_slow_fast;
use rough_core::{DrivingMode, HolderExponents, SlowFastSpec};
use rough_core::gaussian::{FbmSampler, FbmSpec};
use serde_json::json;

use crate::config::{require, DriverMode, ForcingMode};
use crate::errors::config_err;
use crate::output::{num, Csv};
use crate::support::control_from_section;
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let sf = require(&ctx.cfg.slowfast, "slowfast")?;
    if sf.runs == 0 {
        return Err(config_err("slowfast.runs must be at least 1"));
    }

    let m = sf.initial_slow.len();
    let n = sf.initial_fast.len();
    let slow_drift = sf.slow_drift.build_checked(m + n, m, "slowfast.slow_drift")?;
    let slow_diffusion = sf.slow_diffusion.build()?;
    if slow_diffusion.dim_in() != m || slow_diffusion.dim_out() % m != 0 {
        return Err(config_err(format!(
            "slowfast.slow_diffusion: expected {m} → {m}×d rows (slow state only), got {} → {}",
            slow_diffusion.dim_in(),
            slow_diffusion.dim_out()
        )));
    }
    let d = slow_diffusion.dim_out() / m;
    if drv.dim_fbm != d || drv.dim_bm != 0 {
        return Err(config_err(format!(
            "slow-fast runs need a pure fractional driver of dimension {d} (got dim_fbm {}, dim_bm {})",
            drv.dim_fbm, drv.dim_bm
        )));
    }
    let fast_drift = sf.fast_drift.build_checked(m + n, n, "slowfast.fast_drift")?;
    let fast_diffusion = sf.fast_diffusion.build()?;
    if fast_diffusion.dim_in() != m + n || fast_diffusion.dim_out() % n != 0 {
        return Err(config_err(format!(
            "slowfast.fast_diffusion: expected {} → {n}×e rows, got {} → {}",
            m + n,
            fast_diffusion.dim_in(),
            fast_diffusion.dim_out()
        )));
    }

    let spec = SlowFastSpec::new(
        slow_drift,
        slow_diffusion,
        fast_drift,
        fast_diffusion,
        sf.eps,
        sf.delta,
        drv.hurst,
        sf.initial_slow.clone(),
        sf.initial_fast.clone(),
    )?;

    // Dissipativity spot-check on the fast drift: sample pairs around the
    // initial point and report the worst one-sided slope.  Averaging
    // needs contraction; a non-negative slope gets a warning, not an
    // abort, since the probe is only a heuristic.
    let one_sided = fast_dissipativity_probe(&spec, ctx.cfg.run.seed);
    if one_sided >= 0.0 {
        eprintln!(
            "warning: fast drift's sampled one-sided slope is {one_sided:.3} ≥ 0 — \
             the fast tier may not contract, averaged quantities may drift"
        );
    }

    let mode = match sf.mode {
        ForcingMode::Plain => DrivingMode::Plain,
        ForcingMode::Ldp => {
            let cs = require(&ctx.cfg.control, "control")?;
            DrivingMode::controlled_ldp(
                sf.eps,
                control_from_section(cs, drv.hurst, ctx.cfg.grid.horizon)?,
            )
        }
        ForcingMode::Mdp => {
            let cs = require(&ctx.cfg.control, "control")?;
            let theta = sf
                .theta
                .ok_or_else(|| config_err("slowfast.mode = \"mdp\" needs a theta in (0,1)"))?;
            if !(theta > 0.0 && theta < 1.0) {
                return Err(config_err(format!("theta must lie in (0,1) (got {theta})")));
            }
            DrivingMode::controlled_mdp(
                sf.eps,
                theta,
                control_from_section(cs, drv.hurst, ctx.cfg.grid.horizon)?,
            )
        }
    };

    let fbm_spec = match drv.mode {
        DriverMode::Strict => FbmSpec::new(
            drv.hurst,
            d,
            ctx.cfg.grid.cells,
            ctx.cfg.grid.horizon,
            ctx.cfg.run.seed,
        )?,
        DriverMode::Test => FbmSpec::new_test_mode(
            drv.hurst,
            d,
            ctx.cfg.grid.cells,
            ctx.cfg.grid.horizon,
            ctx.cfg.run.seed,
        )?,
    };
    let sampler = FbmSampler::new(fbm_spec)?;
    let exponents = HolderExponents::for_hurst(drv.hurst)?;
    let streams = StreamFactory::new(ctx.cfg.run.seed);
    let dump = sf.dump_runs.min(sf.runs);

    struct RunResult {
        sup_slow: f64,
        terminal: Vec<f64>,
        dumped: Option<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)>,
    }

    let results: Vec<RunResult> = (0..sf.runs)
        .into_par_iter()
        .map(|r| -> Result<RunResult, CliError> {
            let path = sampler.sample(2 * r as u64);
            let driver = lift_fbm(&path, exponents)?;
            let mut rng = streams.stream(2 * r as u64 + 1);
            let traj = simulate_slow_fast(&spec, &driver, &mode, &mut rng)?;
            let sup_slow = traj
                .slow
                .values()
                .iter()
                .flat_map(|x| x.iter())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let terminal = traj.slow.values().last().unwrap().clone();
            let dumped = (r < dump).then(|| {
                (
                    traj.slow.times().to_vec(),
                    traj.slow.values().to_vec(),
                    traj.fast.times().to_vec(),
                    traj.fast.values().to_vec(),
                )
            });
            Ok(RunResult {
                sup_slow,
                terminal,
                dumped,
            })
        })
        .collect::<Result<_, _>>()?;

    // Per-run summary table.
    let mut header: Vec<String> = vec!["run".into(), "sup_slow".into()];
    for i in 0..m {
        header.push(format!("terminal{}", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut summary_csv = Csv::new(&header_refs);
    for (r, res) in results.iter().enumerate() {
        let mut row = vec![r.to_string(), num(res.sup_slow)];
        row.extend(res.terminal.iter().map(|v| num(*v)));
        summary_csv.row(&row);
    }
    ctx.out.write("runs.csv", &summary_csv.into_string())?;

    // Dumped trajectories: slow on the macro grid, fast on its micro grid.
    let mut slow_header: Vec<String> = vec!["run".into(), "t".into()];
    for i in 0..m {
        slow_header.push(format!("x{}", i + 1));
    }
    let refs: Vec<&str> = slow_header.iter().map(String::as_str).collect();
    let mut slow_csv = Csv::new(&refs);
    let mut fast_header: Vec<String> = vec!["run".into(), "t".into()];
    for i in 0..n {
        fast_header.push(format!("y{}", i + 1));
    }
    let refs: Vec<&str> = fast_header.iter().map(String::as_str).collect();
    let mut fast_csv = Csv::new(&refs);
    for (r, res) in results.iter().enumerate() {
        if let Some((st, sv, ft, fv)) = &res.dumped {
            for (t, x) in st.iter().zip(sv) {
                let mut row = vec![r.to_string(), num(*t)];
                row.extend(x.iter().map(|v| num(*v)));
                slow_csv.row(&row);
            }
            for (t, y) in ft.iter().zip(fv) {
                let mut row = vec![r.to_string(), num(*t)];
                row.extend(y.iter().map(|v| num(*v)));
                fast_csv.row(&row);
            }
        }
    }
    ctx.out.write("slow.csv", &slow_csv.into_string())?;
    ctx.out.write("fast.csv", &fast_csv.into_string())?;

    let inv = 1.0 / sf.runs as f64;
    let mean_sup = pairwise_sum(&results.iter().map(|r| r.sup_slow).collect::<Vec<_>>()) * inv;
    let mean_terminal: Vec<f64> = (0..m)
        .map(|i| pairwise_sum(&results.iter().map(|r| r.terminal[i]).collect::<Vec<_>>()) * inv)
        .collect();

    ctx.finish(json!({
        "runs": sf.runs,
        "eps": sf.eps,
        "delta": sf.delta,
        "mode": match sf.mode {
            ForcingMode::Plain => "plain",
            ForcingMode::Ldp => "ldp",
            ForcingMode::Mdp => "mdp",
        },
        "mean_sup_slow": mean_sup,
        "mean_terminal": mean_terminal,
        "fast_one_sided_slope": one_sided,
    }))
}

/// Largest sampled value of `(F(x₀,y) − F(x₀,y′))·(y − y′)/|y − y′|²`:
/// negative means the fast drift contracts on the probed box.
fn fast_dissipativity_probe(spec: &SlowFastSpec, seed: u64) -> f64 {
    let m = spec.dim_slow();
    let n = spec.dim_fast();
    let mut rng = StreamFactory::new(seed).stream(u64::MAX);
    let mut worst = f64::NEG_INFINITY;
    let mut z = vec![0.0; m + n];
    let mut zp = vec![0.0; m + n];
    z[..m].copy_from_slice(&spec.initial_slow);
    zp[..m].copy_from_slice(&spec.initial_slow);
    for _ in 0..64 {
        for i in 0..n {
            z[m + i] = rng.gen_range(-2.0..2.0);
            zp[m + i] = rng.gen_range(-2.0..2.0);
        }
        let dist_sq: f64 = (0..n).map(|i| (z[m + i] - zp[m + i]).powi(2)).sum();
        if dist_sq < 1e-12 {
            continue;
        }
        let f = spec.fast_drift.eval(&z);
        let fp = spec.fast_drift.eval(&zp);
        let dot: f64 = (0..n).map(|i| (f[i] - fp[i]) * (z[m + i] - zp[m + i])).sum();
        worst = worst.max(dot / dist_sq);
    }
    worst
}
