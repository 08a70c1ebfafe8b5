//! `check-invariants`: structural sanity checks on sampled lifts.
//!
//! Five families, each reported with its worst observed value across the
//! samples:
//!
//! * multiplicativity — reconstructing an increment from two half
//!   reconstructions agrees with the direct one;
//! * geometricity — the worst shuffle defect over cells stays at
//!   rounding size;
//! * dilation — the homogeneous norm scales linearly under `δ_λ`;
//! * translation — shifting by the zero path is the identity;
//! * serialization — write → read → write is byte-stable.
//!
//! Any failure exits with code 2 after the full battery has run, so one
//! bad invariant does not hide the others.

use rough_core::serialize::{read_rough_path, write_rough_path};
use serde_json::json;

use crate::config::require;
use crate::support::DriverSamplers;
use crate::{errors::CliError, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let drv = require(&ctx.cfg.driver, "driver")?;
    let samples = ctx.cfg.lift.as_ref().map_or(5, |l| l.samples).max(1);
    let ds = DriverSamplers::build(drv, &ctx.cfg.grid, ctx.cfg.run.seed)?;

    let mut worst_chen = 0.0f64;
    let mut worst_shuffle = 0.0f64;
    let mut worst_dilate = 0.0f64;
    let mut worst_translate = 0.0f64;
    let mut serial_stable = true;

    for s in 0..samples {
        let lift = ds.lift(s)?;
        let n = lift.len() - 1;
        let mid = n / 2;

        // Multiplicativity: product of the two half reconstructions
        // against the direct one, relative to the tensor's size.
        let left = lift.chen_reconstruct(0, mid)?;
        let right = lift.chen_reconstruct(mid, n)?;
        let whole = lift.chen_reconstruct(0, n)?;
        let defect = left.mul(&right)?.sub(&whole).norm_inf() / (1.0 + whole.norm_inf());
        worst_chen = worst_chen.max(defect);

        // Geometricity of every cell.
        worst_shuffle = worst_shuffle.max(lift.worst_cell_defect());

        // Dilation homogeneity of the whole-interval norm.
        let lambda = 0.5;
        let scaled = lift.dilate(lambda).homogeneous_norm();
        let expected = lambda * lift.homogeneous_norm();
        worst_dilate =
            worst_dilate.max((scaled - expected).abs() / (1.0 + expected));

        // Translation by the zero path.
        let zero = rough_core::algebra::PiecewiseLinearPath::new(
            lift.times().to_vec(),
            vec![vec![0.0; lift.dim()]; lift.len()],
        )?;
        let shifted = rough_core::gaussian::translate(&lift, &zero)?;
        worst_translate = worst_translate.max(lift.distance(&shifted)?);

        // Serialization stability.
        let text = write_rough_path(&lift);
        let back = read_rough_path(&text)
            .map_err(|e| CliError::Invariant(format!("serialized lift failed to re-read: {e}")))?;
        serial_stable &= write_rough_path(&back) == text;
    }

    let checks = [
        ("chen_multiplicativity", worst_chen, 1e-10),
        ("shuffle_defect", worst_shuffle, 1e-8),
        ("dilation_homogeneity", worst_dilate, 1e-9),
        ("zero_translation", worst_translate, 1e-11),
    ];
    let mut failures: Vec<String> = Vec::new();
    for (name, worst, tol) in checks {
        let ok = worst <= tol;
        println!(
            "invariant {name}: {} (worst {worst:.3e}, tolerance {tol:.1e})",
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failures.push(format!("{name} worst {worst:.3e} > {tol:.1e}"));
        }
    }
    println!(
        "invariant serialization_round_trip: {}",
        if serial_stable { "ok" } else { "FAIL" }
    );
    if !serial_stable {
        failures.push("serialization round trip is not byte-stable".into());
    }

    ctx.finish(json!({
        "samples": samples,
        "chen_multiplicativity": worst_chen,
        "shuffle_defect": worst_shuffle,
        "dilation_homogeneity": worst_dilate,
        "zero_translation": worst_translate,
        "serialization_round_trip": serial_stable,
        "failures": failures,
    }))?;
    if !failures.is_empty() {
        return Err(CliError::Invariant(failures.join("; ")));
    }
    Ok(())
}
