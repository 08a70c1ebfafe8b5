//! Level-3 rough-path calculus with Gaussian drivers and slow-fast averaging.
//!
//! The crate builds up, bottom to top:
//!
//! * [`algebra`] — the step-3 truncated tensor algebra, exact signatures of
//!   piecewise-linear paths, shuffle/Chen diagnostics;
//! * [`roughpath`] — discrete Hölder rough paths on a grid: cumulative
//!   signatures, Chen reconstruction, homogeneous norms and distances;
//! * [`smooth`] — closed-form `C^4` vector fields with bounded-derivative
//!   book-keeping (plus a finite-difference fallback);
//! * [`controlled`] — paths controlled by a rough path, composition with
//!   smooth maps, and the compensated-sum rough integral;
//! * [`rde`] — rough differential equations by Picard iteration in the
//!   controlled-path metric, Young equations for smooth controls;
//! * [`gaussian`] — fractional Brownian motion, mixed lifts, Volterra-kernel
//!   Cameron–Martin controls, and higher-order translation of lifts;
//! * [`slowfast`] — two-scale systems: frozen-fast dynamics, averaged
//!   coefficients, joint slow/fast simulation, time-discretization probes;
//! * [`deviation`] — centred/rescaled deviation processes, skeleton rate
//!   functionals, their optimizers and Monte Carlo tail machinery;
//! * [`linalg`], [`rngs`], [`serialize`] — shared numeric utilities,
//!   reproducible random-number streams, and columnar text serialization.

pub mod algebra;
pub mod controlled;
pub mod deviation;
pub mod gaussian;
pub mod linalg;
pub mod rde;
pub mod rngs;
pub mod roughpath;
pub mod serialize;
pub mod slowfast;
pub mod smooth;

pub use algebra::{AlgebraError, PiecewiseLinearPath, TruncatedTensor};
pub use controlled::{ControlledError, ControlledPath, Convention, RemainderNorms, SewingReport};
pub use deviation::{
    DeviationError, RateOptions, RateSolution, Skeleton, SkeletonSolution, SlopeReport,
    TailEstimate, TailLevel,
};
pub use gaussian::{CameronMartinControl, FbmSpec, GaussianError, MixedLift, MixedMode};
pub use rde::{RdeError, RdeProblem, RdeSolution, SolveBudget, YoungProblem, YoungSolution};
pub use roughpath::{GeometricCheck, HolderExponents, RoughPath, RoughPathError};
pub use slowfast::{
    AveragedModel, DrivingMode, SlowFastError, SlowFastSpec, SlowFastTrajectory,
};
pub use serialize::SerializeError;
pub use smooth::SmoothMap;

/// Crate version, for embedding in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
