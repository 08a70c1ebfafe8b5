//! Coefficient-map palette: the closed-form vector fields a config file
//! can name.
//!
//! Every dynamical quantity in a run — drifts, diffusions, fast-tier
//! coefficients — is assembled from this small tagged palette, e.g.
//!
//! ```toml
//! drift     = { kind = "ou", rate = 1.0, mean = 0.0 }
//! diffusion = { kind = "constant", value = [1.0], dim_in = 1 }
//! ```
//!
//! The palette sticks to maps with exact derivatives so solver and
//! optimizer diagnostics are not polluted by finite-difference noise.

use rough_core::smooth::{Constant, Linear, Polynomial1d, Sine1d};
use rough_core::SmoothMap;
use serde::Deserialize;
use std::sync::Arc;

use crate::errors::{config_err, CliError};

/// A named coefficient map, as written in the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffSpec {
    /// The zero map of explicit shape.
    Zero { dim_in: usize, dim_out: usize },
    /// A constant vector, ignoring its input.
    Constant { value: Vec<f64>, dim_in: usize },
    /// `x ↦ A·x + b` with `A` given row-major.
    Linear {
        matrix: Vec<f64>,
        offset: Vec<f64>,
        dim_in: usize,
    },
    /// `y ↦ c·y` on `R^dim` (diagonal scaling).
    Scale { factor: f64, dim: usize },
    /// Scalar Ornstein–Uhlenbeck drift `y ↦ rate·(mean − y)`.
    Ou { rate: f64, mean: f64 },
    /// Scalar polynomial `y ↦ Σ coeffs[k]·y^k`.
    Polynomial { coeffs: Vec<f64> },
    /// Scalar `y ↦ amp·sin(freq·y + phase)`.
    Sine { amp: f64, freq: f64, phase: f64 },
}

impl CoeffSpec {
    /// Instantiate the map.
    pub fn build(&self) -> Result<Arc<dyn SmoothMap>, CliError> {
        match self {
            CoeffSpec::Zero { dim_in, dim_out } => {
                if *dim_in == 0 || *dim_out == 0 {
                    return Err(config_err("zero map needs positive dimensions"));
                }
                Ok(Arc::new(Constant::new(vec![0.0; *dim_out], *dim_in)))
            }
            CoeffSpec::Constant { value, dim_in } => {
                if value.is_empty() || *dim_in == 0 {
                    return Err(config_err("constant map needs a value and a positive dim_in"));
                }
                Ok(Arc::new(Constant::new(value.clone(), *dim_in)))
            }
            CoeffSpec::Linear {
                matrix,
                offset,
                dim_in,
            } => {
                if *dim_in == 0 {
                    return Err(config_err("linear map needs a positive dim_in"));
                }
                if matrix.len() % dim_in != 0 || matrix.len() / dim_in != offset.len() {
                    return Err(config_err(format!(
                        "linear map shape mismatch: {} matrix entries, {} offsets, dim_in {}",
                        matrix.len(),
                        offset.len(),
                        dim_in
                    )));
                }
                Ok(Arc::new(Linear::new(matrix.clone(), offset.clone(), *dim_in)))
            }
            CoeffSpec::Scale { factor, dim } => {
                if *dim == 0 {
                    return Err(config_err("scale map needs a positive dim"));
                }
                Ok(Arc::new(Linear::scale(*factor, *dim)))
            }
            CoeffSpec::Ou { rate, mean } => Ok(Arc::new(Linear::new(
                vec![-rate],
                vec![rate * mean],
                1,
            ))),
            CoeffSpec::Polynomial { coeffs } => {
                if coeffs.is_empty() {
                    return Err(config_err("polynomial map needs at least one coefficient"));
                }
                Ok(Arc::new(Polynomial1d::new(coeffs.clone())))
            }
            CoeffSpec::Sine { amp, freq, phase } => {
                Ok(Arc::new(Sine1d::new(*amp, *freq, *phase)))
            }
        }
    }

    /// Instantiate and check the map's shape against what the caller
    /// needs, naming the offending config key on mismatch.
    pub fn build_checked(
        &self,
        dim_in: usize,
        dim_out: usize,
        what: &str,
    ) -> Result<Arc<dyn SmoothMap>, CliError> {
        let map = self.build()?;
        if map.dim_in() != dim_in || map.dim_out() != dim_out {
            return Err(config_err(format!(
                "{what}: expected a {dim_in} → {dim_out} map, got {} → {}",
                map.dim_in(),
                map.dim_out()
            )));
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CoeffSpec {
        #[derive(Deserialize)]
        struct Holder {
            map: CoeffSpec,
        }
        toml::from_str::<Holder>(text).unwrap().map
    }

    #[test]
    fn palette_round_trips_through_toml() {
        let ou = parse("map = { kind = \"ou\", rate = 2.0, mean = 0.5 }").build().unwrap();
        // rate·(mean − y) at y = 2 is 2·(0.5 − 2) = −3.
        assert!((ou.eval(&[2.0])[0] + 3.0).abs() < 1e-12);

        let lin = parse(
            "map = { kind = \"linear\", matrix = [1.0, 2.0, 3.0, 4.0], offset = [0.0, 1.0], dim_in = 2 }",
        )
        .build()
        .unwrap();
        let y = lin.eval(&[1.0, 1.0]);
        assert_eq!(y, vec![3.0, 8.0]);

        let zero = parse("map = { kind = \"zero\", dim_in = 3, dim_out = 2 }").build().unwrap();
        assert_eq!(zero.eval(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_checks_name_the_problem() {
        let spec = parse("map = { kind = \"scale\", factor = 0.5, dim = 2 }");
        let err = match spec.build_checked(1, 1, "slow drift") {
            Err(e) => e,
            Ok(_) => panic!("shape mismatch accepted"),
        };
        assert!(err.to_string().contains("slow drift"));

        let bad = parse(
            "map = { kind = \"linear\", matrix = [1.0, 2.0, 3.0], offset = [0.0], dim_in = 2 }",
        );
        assert!(bad.build().is_err());
    }

    #[test]
    fn unknown_palette_keys_are_rejected() {
        #[derive(Deserialize)]
        struct Holder {
            #[allow(dead_code)]
            map: CoeffSpec,
        }
        let res = toml::from_str::<Holder>("map = { kind = \"ou\", rate = 1.0, mean = 0.0, typo = 3 }");
        assert!(res.is_err());
    }
}
