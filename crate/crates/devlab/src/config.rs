//! Run configuration: one TOML file shared by every subcommand.
//!
//! A config describes a whole experiment — driver law, dynamics,
//! control, Monte-Carlo schedule — and each subcommand reads just the
//! sections it needs, so the same file can be replayed under `lift`,
//! `solve-rde`, `mc-tail`, … without edits.  Unknown keys are rejected
//! everywhere: a typo should fail loudly (exit 1), not silently fall
//! back to a default.
//!
//! The file's SHA-256 goes into the run manifest, together with the
//! seed, so any output directory can be traced back to the exact bytes
//! that produced it.

use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::errors::{config_err, CliError};
use crate::palette::CoeffSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub grid: GridSection,
    pub driver: Option<DriverSection>,
    pub lift: Option<LiftSection>,
    pub rde: Option<RdeSection>,
    pub slowfast: Option<SlowFastSection>,
    pub control: Option<ControlSection>,
    pub skeleton: Option<SkeletonSection>,
    pub rate: Option<RateSection>,
    pub mc: Option<McSection>,
    pub slope: Option<SlopeSection>,
}

/// Root seed and default output directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: Option<String>,
}

/// The macro time grid every path-valued quantity lives on.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Number of cells; the grid has `cells + 1` nodes.
    pub cells: usize,
    pub horizon: f64,
}

impl GridSection {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.cells == 0 || !(self.horizon > 0.0) {
            return Err(config_err(format!(
                "grid needs cells ≥ 1 and horizon > 0 (got {} cells, horizon {})",
                self.cells, self.horizon
            )));
        }
        Ok(())
    }

    /// The uniform node vector `0, T/n, …, T`.
    pub fn times(&self) -> Vec<f64> {
        uniform_times(self.cells, self.horizon)
    }
}

/// `0, T/n, …, T`.
pub fn uniform_times(cells: usize, horizon: f64) -> Vec<f64> {
    (0..=cells)
        .map(|k| horizon * k as f64 / cells as f64)
        .collect()
}

/// Law of the Gaussian driver.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSection {
    pub hurst: f64,
    pub dim_fbm: usize,
    /// Independent Brownian factors appended after the fractional ones
    /// (0 = pure fractional driver).
    #[serde(default)]
    pub dim_bm: usize,
    /// `strict` enforces the rough-regime Hurst window; `test` admits any
    /// H in (0,1) for diagnostics.
    #[serde(default)]
    pub mode: DriverMode,
    /// Second-level convention for the cross blocks of a mixed driver.
    #[serde(default)]
    pub mixed: MixedKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriverMode {
    #[default]
    Strict,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MixedKind {
    #[default]
    Geometric,
    ItoCross,
}

/// How many driver samples `lift` and `check-invariants` draw.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSection {
    pub samples: u64,
}

/// A rough differential equation along the sampled driver.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdeSection {
    pub drift: CoeffSpec,
    /// State → (state × driver) matrix, rows per state coordinate.
    pub diffusion: CoeffSpec,
    pub initial: Vec<f64>,
    /// Which driver sample to solve along (`solve-rde` only).
    #[serde(default)]
    pub sample: u64,
}

/// The coupled two-scale system.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowFastSection {
    pub eps: f64,
    pub delta: f64,
    pub slow_drift: CoeffSpec,
    pub slow_diffusion: CoeffSpec,
    pub fast_drift: CoeffSpec,
    pub fast_diffusion: CoeffSpec,
    pub initial_slow: Vec<f64>,
    pub initial_fast: Vec<f64>,
    pub runs: usize,
    #[serde(default)]
    pub mode: ForcingMode,
    /// Moderate-deviation exponent θ ∈ (0,1); required when `mode = "mdp"`.
    pub theta: Option<f64>,
    /// How many trajectories to write out in full (summaries cover all runs).
    #[serde(default = "default_dump_runs")]
    pub dump_runs: usize,
}

fn default_dump_runs() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingMode {
    #[default]
    Plain,
    Ldp,
    Mdp,
}

/// An explicit Cameron–Martin control: piecewise-constant densities on a
/// uniform cell grid over the horizon.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub cells: usize,
    /// Fractional factor `ĥ`, one row per cell (empty = no factor).
    #[serde(default)]
    pub hhat: Vec<Vec<f64>>,
    /// Brownian factor `v′`, one row per cell (empty = no factor).
    #[serde(default)]
    pub vprime: Vec<Vec<f64>>,
}

/// The noiseless limit equation whose terminal value the rate functional
/// constrains.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSection {
    pub variant: SkeletonVariant,
    /// Drift (`single-*`) or averaged drift (`averaged-*`).
    pub drift: CoeffSpec,
    /// Diffusion against the fractional factor (or the averaged
    /// diffusion for the `averaged-*` variants).
    pub diffusion: CoeffSpec,
    /// Diffusion against the Brownian factor (`single-*` only).
    pub diffusion_bm: Option<CoeffSpec>,
    /// Initial state; for the linearized (`*-mdp`) variants this is the
    /// base trajectory's start and the deviation block starts at zero.
    pub initial: Vec<f64>,
    /// Young-refinement tolerance for `skeleton` solves.
    #[serde(default = "default_skeleton_tol")]
    pub tol: f64,
    #[serde(default = "default_skeleton_refine")]
    pub max_refine: usize,
}

fn default_skeleton_tol() -> f64 {
    3e-6
}

fn default_skeleton_refine() -> usize {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkeletonVariant {
    SingleLdp,
    SingleMdp,
    AveragedLdp,
    AveragedMdp,
}

/// Terminal-constraint energy minimization.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    /// Terminal state the skeleton must hit.
    pub target: Vec<f64>,
    /// Control discretization cells.
    #[serde(default = "default_rate_cells")]
    pub cells: usize,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub constraint_tol: Option<f64>,
    pub young_tol: Option<f64>,
}

fn default_rate_cells() -> usize {
    32
}

/// Monte-Carlo tail estimation for the deviation process.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub runs: usize,
    /// Exceedance threshold `a` for the chosen event.
    pub threshold: f64,
    #[serde(default)]
    pub event: EventKind,
    /// Noise strength ε of the perturbed system.
    pub eps: f64,
    /// Deviation regime fixing `h(ε)`.
    #[serde(default)]
    pub h_mode: HMode,
    /// Moderate-deviation exponent θ ∈ (0,1); required when `h_mode = "mdp"`.
    pub theta: Option<f64>,
    /// State coordinate the event watches.
    #[serde(default)]
    pub coord: usize,
    /// Also write every sampled functional value to `values.csv`.
    #[serde(default)]
    pub dump_values: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// `Z_T[coord] ≥ a`.
    #[default]
    Terminal,
    /// `sup_t |Z_t[coord]| ≥ a`.
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HMode {
    /// `h ≡ 1` (central-limit normalization).
    Clt,
    /// `h = ε^{-1/2}` (large deviations; `Z = X^ε − X̄`).
    #[default]
    Ldp,
    /// `h = ε^{-θ/2}` (moderate deviations).
    Mdp,
}

/// Rate-slope regression across a schedule of noise strengths.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeSection {
    /// Noise strengths, largest first.
    pub eps_schedule: Vec<f64>,
    /// Relative gap between fitted and optimized rate that still passes.
    pub gap_tol: f64,
}

/// Read and parse a config file, returning it with the hex SHA-256 of
/// the raw bytes.
pub fn load(path: &Path) -> Result<(Config, String), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let sha = hex(&Sha256::digest(&bytes));
    let text = String::from_utf8(bytes)
        .map_err(|_| config_err(format!("{} is not valid UTF-8", path.display())))?;
    let cfg: Config =
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    cfg.grid.validate()?;
    Ok((cfg, sha))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fetch an optional section, naming it in the error when absent.
pub fn require<'a, T>(sec: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    sec.as_ref()
        .ok_or_else(|| config_err(format!("this command needs a [{name}] section")))
}
