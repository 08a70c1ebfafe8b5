//! Gaussian drivers and their level-3 lifts.
//!
//! ```text
//! Four pieces, one per submodule:
//!
//!   fbm        exact-covariance sampling of fractional Brownian motion,
//!              E[b_t b_s] = ½(t^{2H} + s^{2H} − |t−s|^{2H}), plus the
//!              H = 1/2 Brownian degenerate case (test mode) and Brownian
//!              companions for the mixed driver;
//!
//!   lift       geometric lifting of sampled paths (signature of the
//!              piecewise-linear interpolation — the dyadic-approximation
//!              definition of the Gaussian rough path) and the anisotropic
//!              mixed (fBM, BM) lift with geometric or Itô-type forward
//!              cross integrals;
//!
//!   cm         Cameron–Martin controls: the fBM factor is represented
//!              through the Volterra kernel, u_t = ∫₀ᵗ K_H(t,s) ĥ(s) ds
//!              with ĥ piecewise constant, so ‖u‖_H = ‖ĥ‖_{L²} exactly;
//!              the Brownian factor is v_t = ∫₀ᵗ v′ with v′ piecewise
//!              constant.  Controls evaluate to grid paths and lift
//!              geometrically;
//!
//!   translate  the translation operator on lifted paths: cell-wise
//!              second- and third-level corrections built from the stored
//!              blocks, exact for piecewise-linear data and group-likeness
//!              preserving in general.
//! ```

pub mod cm;
pub mod fbm;
pub mod lift;
pub mod translate;

pub use cm::{cm_lift, cm_to_path, volterra_kernel, CameronMartinControl, CmKernel};
pub use fbm::{sample_fbm, FbmSampler, FbmSpec};
pub use lift::{lift_fbm, lift_mixed, MixedLift, MixedMode};
pub use translate::{translate, translate_by_control};

use crate::algebra::AlgebraError;
use crate::linalg::LinalgError;
use crate::roughpath::RoughPathError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
    #[error("covariance factorization failed at resolution {n}: {source} — try a coarser grid")]
    CovarianceNotPd { n: usize, source: LinalgError },
    #[error("Hurst index {0} outside the supported range")]
    InvalidHurst(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
