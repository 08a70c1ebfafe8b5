//! One module per subcommand.  Each `run` takes the shared [`crate::Ctx`],
//! writes its output files, and ends by writing the manifest; errors map
//! to exit codes in [`crate::errors`].

pub mod check_invariants;
pub mod lift;
pub mod mc_tail;
pub mod rate;
pub mod skeleton;
pub mod slope_check;
pub mod slow_fast;
pub mod solve_rde;
