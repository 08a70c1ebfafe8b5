//! Level-3 rough paths over a time grid.
//!
//! Background
//! ----------
//! ```text
//! A rough path of roughness α on a grid t_0 < … < t_N is a two-parameter
//! family X_{s,t} = (1, X¹_{s,t}, X²_{s,t}, X³_{s,t}) with
//!
//!   (A)  Chen:    X_{s,t} = X_{s,u} ⊗ X_{u,t},
//!   (B)  bounds:  ‖Xⁱ_{s,t}‖ ≲ |t−s|^{iα}   for i = 1,2,3.
//!
//! Chen's relation makes the family redundant: we store the blocks of
//! consecutive cells only (O(N) tensors) together with the cumulative
//! products C_k = X_{t_0,t_k} and their inverses, so that any pair is
//! reconstructed in O(1) tensor multiplications:
//!
//!     X_{t_i,t_j} = C_i^{-1} ⊗ C_j .
//!
//! Discrete i·α-Hölder norms take the sup over grid pairs
//!
//!     ‖Xⁱ‖_{iα} = max_{i<j} ‖Xⁱ_{t_i,t_j}‖_∞ / (t_j − t_i)^{iα},
//!
//! a lower bound for the continuous-time norm that converges from below
//! under grid refinement.  The rough-path distance is the sum over levels
//! of the same sup applied to the difference of two families on a common
//! grid.  Dilation scales level i by λⁱ and commutes with everything.
//! ```
//!
//! All-pairs norm sweeps cost O(N²) tensor products; above
//! [`ALL_PAIRS_LIMIT`] nodes the sweep falls back to aligned dyadic pairs
//! (O(N log N)), which is recorded in the returned diagnostics only through
//! the norm value itself.

use crate::algebra::{AlgebraError, PiecewiseLinearPath, TruncatedTensor};
use thiserror::Error;

/// Node count above which norm sweeps use aligned dyadic pairs instead of
/// all O(N²) grid pairs.
pub const ALL_PAIRS_LIMIT: usize = 4097;

#[derive(Debug, Error)]
pub enum RoughPathError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("invalid Hölder exponents: {0}")]
    InvalidExponents(String),
    #[error("shuffle defect {defect:.3e} exceeds tolerance {tol:.1e}")]
    ShuffleDefect { defect: f64, tol: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid pair ({i}, {j})")]
    InvalidPair { i: usize, j: usize },
    #[error("cell increments disagree with node values (worst {0:.3e})")]
    InconsistentCells(f64),
}

/// The exponent triple (α, β, γ): α for the driver, β < α for solutions,
/// γ for the Brownian block of mixed drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderExponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl HolderExponents {
    /// Validated constructor for the rough regime:
    /// `1/4 < β < α ≤ 1/3`, `γ ∈ (0, 1]`, and the joint condition
    /// `2α + γ > 1` required by the mixed lift.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, RoughPathError> {
        let ok = 0.25 < beta
            && beta < alpha
            && alpha <= 1.0 / 3.0 + 1e-12
            && gamma > 0.0
            && gamma <= 1.0
            && 2.0 * alpha + gamma > 1.0;
        if !ok {
            return Err(RoughPathError::InvalidExponents(format!(
                "need 1/4 < beta < alpha <= 1/3, gamma in (0,1], 2*alpha+gamma > 1; \
                 got alpha={alpha}, beta={beta}, gamma={gamma}"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Unvalidated constructor for diagnostics outside the rough regime
    /// (e.g. Brownian samples at α near 1/2).  The calculus itself never
    /// requires the restriction; only the theory's guarantees do.
    pub fn relaxed(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    /// Exponents suited to the lift of an `H`-Hölder Gaussian path: `α`
    /// just below `min(H, 1/3)`, `β` four-fifths of the way from `1/4` up
    /// to `α`, and `γ` with a small margin above the joint constraint.
    pub fn for_hurst(hurst: f64) -> Result<Self, RoughPathError> {
        let alpha = hurst.min(1.0 / 3.0) - 0.005;
        let beta = 0.25 + 0.8 * (alpha - 0.25);
        let gamma = (1.06 - 2.0 * alpha).clamp(0.05, 1.0);
        Self::new(alpha, beta, gamma)
    }
}

/// Policy for the shuffle check at construction time.
#[derive(Debug, Clone, Copy)]
pub enum GeometricCheck {
    /// Fail construction if any cell's shuffle defect exceeds the tolerance.
    Require(f64),
    /// Record pass/fail in the `geometric` flag but never fail construction
    /// (Itô-type lifts are legitimately non-geometric).
    Record(f64),
}

/// A level-3 rough path on a time grid: node values, per-cell signature
/// blocks, and cumulative products for O(1) Chen reconstruction.
#[derive(Debug, Clone)]
pub struct RoughPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    cells: Vec<TruncatedTensor>,
    cum: Vec<TruncatedTensor>,
    cum_inv: Vec<TruncatedTensor>,
    exponents: HolderExponents,
    geometric: bool,
    worst_cell_defect: f64,
}

impl RoughPath {
    /// Canonical lift of a piecewise-linear path on its own grid: each cell
    /// block is the exact segment signature.  Always geometric; the shuffle
    /// check runs at tolerance 1e-9 as a numerical tripwire.
    pub fn from_signature_path(
        path: &PiecewiseLinearPath,
        exponents: HolderExponents,
    ) -> Result<Self, RoughPathError> {
        let cells: Vec<TruncatedTensor> = (0..path.len() - 1)
            .map(|k| {
                let v: Vec<f64> = path.values()[k + 1]
                    .iter()
                    .zip(&path.values()[k])
                    .map(|(b, a)| b - a)
                    .collect();
                TruncatedTensor::segment_signature(&v)
            })
            .collect();
        Self::from_cells(
            path.times().to_vec(),
            path.values().to_vec(),
            cells,
            exponents,
            GeometricCheck::Require(1e-9),
        )
    }

    /// General constructor from per-cell blocks (Gaussian lifts enter here).
    /// Cell level-1 entries must equal the node-value increments.
    pub fn from_cells(
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        cells: Vec<TruncatedTensor>,
        exponents: HolderExponents,
        check: GeometricCheck,
    ) -> Result<Self, RoughPathError> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RoughPathError::GridMismatch(
                "need at least 2 strictly increasing times".into(),
            ));
        }
        if values.len() != times.len() || cells.len() + 1 != times.len() {
            return Err(RoughPathError::GridMismatch(format!(
                "{} times, {} values, {} cells",
                times.len(),
                values.len(),
                cells.len()
            )));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) || cells.iter().any(|c| c.dim() != d) {
            return Err(RoughPathError::GridMismatch(
                "inconsistent dimensions".into(),
            ));
        }
        let mut worst_inc = 0.0f64;
        for (k, cell) in cells.iter().enumerate() {
            for i in 0..d {
                let inc = values[k + 1][i] - values[k][i];
                worst_inc = worst_inc.max((cell.level1[i] - inc).abs());
            }
        }
        let scale = values
            .iter()
            .flat_map(|v| v.iter())
            .fold(1.0f64, |m, x| m.max(x.abs()));
        if worst_inc > 1e-9 * scale {
            return Err(RoughPathError::InconsistentCells(worst_inc));
        }

        let worst_cell_defect = cells
            .iter()
            .map(|c| c.shuffle_defect())
            .fold(0.0f64, f64::max);
        let geometric = match check {
            GeometricCheck::Require(tol) => {
                if worst_cell_defect > tol {
                    return Err(RoughPathError::ShuffleDefect {
                        defect: worst_cell_defect,
                        tol,
                    });
                }
                true
            }
            GeometricCheck::Record(tol) => worst_cell_defect <= tol,
        };

        let mut cum = Vec::with_capacity(times.len());
        cum.push(TruncatedTensor::identity(d));
        for cell in &cells {
            let next = cum.last().unwrap().mul(cell)?;
            cum.push(next);
        }
        let cum_inv = cum.iter().map(|c| c.inverse()).collect();

        Ok(Self {
            times,
            values,
            cells,
            cum,
            cum_inv,
            exponents,
            geometric,
            worst_cell_defect,
        })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of grid nodes (cells + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn exponents(&self) -> HolderExponents {
        self.exponents
    }

    /// Whether every cell passed the shuffle check at construction.
    pub fn geometric(&self) -> bool {
        self.geometric
    }

    /// Worst per-cell shuffle defect observed at construction.
    pub fn worst_cell_defect(&self) -> f64 {
        self.worst_cell_defect
    }

    /// The stored signature block of cell `k` = `[t_k, t_{k+1}]`.
    pub fn cell(&self, k: usize) -> &TruncatedTensor {
        &self.cells[k]
    }

    /// Level-1 increment between nodes `i ≤ j`.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        self.values[j]
            .iter()
            .zip(&self.values[i])
            .map(|(b, a)| b - a)
            .collect()
    }

    /// The tensor `X_{t_i, t_j}` for arbitrary grid nodes `i ≤ j`, via the
    /// cumulative products: `C_i⁻¹ ⊗ C_j`.  Exact up to roundoff by Chen's
    /// relation; O(1) tensor multiplications.
    pub fn chen_reconstruct(&self, i: usize, j: usize) -> Result<TruncatedTensor, RoughPathError> {
        if i > j || j >= self.times.len() {
            return Err(RoughPathError::InvalidPair { i, j });
        }
        if i == j {
            return Ok(TruncatedTensor::identity(self.dim()));
        }
        if j == i + 1 {
            return Ok(self.cells[i].clone());
        }
        Ok(self.cum_inv[i].mul(&self.cum[j])?)
    }

    /// The grid pairs a norm sweep visits: all pairs up to
    /// [`ALL_PAIRS_LIMIT`] nodes, aligned dyadic spans beyond.  Public so
    /// controlled-path norms sweep the identical pair set.
    pub fn norm_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.times.len();
        if n <= ALL_PAIRS_LIMIT {
            let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push((i, j));
                }
            }
            pairs
        } else {
            let mut pairs = Vec::new();
            let mut span = 1usize;
            while span < n {
                let mut i = 0;
                while i < n - 1 {
                    pairs.push((i, (i + span).min(n - 1)));
                    i += span;
                }
                span *= 2;
            }
            pairs.sort_unstable();
            pairs.dedup();
            pairs
        }
    }

    /// Discrete `level·α`-Hölder norm of one level: the sup over grid pairs
    /// of `‖X^level_{s,t}‖_∞ / (t−s)^{level·α}`.
    pub fn holder_norm(&self, level: usize) -> f64 {
        self.level_norms()[level - 1]
    }

    /// All three discrete Hölder norms in a single sweep over the pairs.
    pub fn level_norms(&self) -> [f64; 3] {
        let alpha = self.exponents.alpha;
        let mut norms = [0.0f64; 3];
        for (i, j) in self.norm_pairs() {
            let x = self.chen_reconstruct(i, j).expect("valid pair");
            let dt = self.times[j] - self.times[i];
            for level in 1..=3 {
                let w = dt.powf(level as f64 * alpha);
                norms[level - 1] = norms[level - 1].max(x.level_norm_inf(level) / w);
            }
        }
        norms
    }

    /// Homogeneous rough-path norm `max_i ‖Xⁱ‖_{iα}^{1/i}` — the quantity
    /// the solver step-size rule consumes.
    pub fn homogeneous_norm(&self) -> f64 {
        let [n1, n2, n3] = self.level_norms();
        n1.max(n2.sqrt()).max(n3.cbrt())
    }

    /// Same data re-tagged with different exponents.  Exponents only weight
    /// norms and distances; the path data is untouched.  Used by the solver
    /// to measure Picard convergence at the weaker β scale.
    pub fn with_exponents(mut self, exponents: HolderExponents) -> Self {
        self.exponents = exponents;
        self
    }

    /// Dilation by λ: level i scaled by λⁱ (node values by λ).  Chen and
    /// shuffle structure are preserved exactly.
    pub fn dilate(&self, lambda: f64) -> Self {
        let dil = |ts: &[TruncatedTensor]| ts.iter().map(|t| t.dilate(lambda)).collect::<Vec<_>>();
        Self {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| lambda * x).collect())
                .collect(),
            cells: dil(&self.cells),
            cum: dil(&self.cum),
            // (Δ_λ a)⁻¹ = Δ_λ (a⁻¹): dilation is an algebra automorphism.
            cum_inv: dil(&self.cum_inv),
            exponents: self.exponents,
            geometric: self.geometric,
            worst_cell_defect: self.worst_cell_defect * lambda.abs().max(lambda * lambda),
        }
    }

    /// Restriction to the node range `[i0, i1]` (inclusive), re-based so the
    /// sub-path starts at its own first node.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<Self, RoughPathError> {
        if i0 >= i1 || i1 >= self.times.len() {
            return Err(RoughPathError::InvalidPair { i: i0, j: i1 });
        }
        Self::from_cells(
            self.times[i0..=i1].to_vec(),
            self.values[i0..=i1].to_vec(),
            self.cells[i0..i1].to_vec(),
            self.exponents,
            GeometricCheck::Record(1e-9),
        )
    }

    /// Coarsening by an integer stride: keeps every `stride`-th node and
    /// composes the dropped cells by Chen, so the coarse path carries the
    /// same signature blocks as the fine one over the surviving nodes.
    pub fn coarsen(&self, stride: usize) -> Result<Self, RoughPathError> {
        let n_cells = self.cells.len();
        if stride == 0 || n_cells % stride != 0 {
            return Err(RoughPathError::GridMismatch(format!(
                "stride {stride} does not divide {n_cells} cells"
            )));
        }
        let times: Vec<f64> = self.times.iter().step_by(stride).copied().collect();
        let values: Vec<Vec<f64>> = self.values.iter().step_by(stride).cloned().collect();
        let cells: Result<Vec<TruncatedTensor>, RoughPathError> = (0..n_cells / stride)
            .map(|k| self.chen_reconstruct(k * stride, (k + 1) * stride))
            .collect();
        Self::from_cells(times, values, cells?, self.exponents, GeometricCheck::Record(1e-9))
    }

    /// Rough-path distance `ρ_α(X, X̃) = Σᵢ ‖Xⁱ − X̃ⁱ‖_{iα}` on a common
    /// grid, with α taken from `self`.
    pub fn distance(&self, other: &Self) -> Result<f64, RoughPathError> {
        if self.dim() != other.dim() {
            return Err(RoughPathError::GridMismatch(format!(
                "dimension {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(RoughPathError::GridMismatch(
                "distance requires a common time grid".into(),
            ));
        }
        let alpha = self.exponents.alpha;
        let mut norms = [0.0f64; 3];
        for (i, j) in self.norm_pairs() {
            let xa = self.chen_reconstruct(i, j)?;
            let xb = other.chen_reconstruct(i, j)?;
            let diff = xa.sub(&xb);
            let dt = self.times[j] - self.times[i];
            for level in 1..=3 {
                let w = dt.powf(level as f64 * alpha);
                norms[level - 1] = norms[level - 1].max(diff.level_norm_inf(level) / w);
            }
        }
        Ok(norms[0] + norms[1] + norms[2])
    }
}

/// Convenience: the standard exponents used across tests and experiments
/// for a driver of Hurst-type regularity `h` — α just under `h ∧ 1/3`,
/// β between 1/4 and α, γ just under 1/2.
pub fn default_exponents_for(h: f64) -> HolderExponents {
    let alpha = (h - 0.004).min(1.0 / 3.0);
    let beta = 0.25 + 0.75 * (alpha - 0.25);
    HolderExponents::relaxed(alpha, beta, 0.49)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn exps() -> HolderExponents {
        HolderExponents::new(0.30, 0.27, 0.49).unwrap()
    }

    fn random_path(rng: &mut ChaCha8Rng, d: usize, n: usize) -> PiecewiseLinearPath {
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let values: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        PiecewiseLinearPath::new(times, values).unwrap()
    }

    #[test]
    fn exponent_validation() {
        assert!(HolderExponents::new(0.30, 0.27, 0.49).is_ok());
        // beta above alpha
        assert!(HolderExponents::new(0.27, 0.30, 0.49).is_err());
        // alpha above 1/3
        assert!(HolderExponents::new(0.40, 0.27, 0.49).is_err());
        // beta at the lower boundary
        assert!(HolderExponents::new(0.30, 0.25, 0.49).is_err());
        // joint condition 2*alpha + gamma > 1 violated
        assert!(HolderExponents::new(0.30, 0.27, 0.30).is_err());
        // relaxed constructor accepts out-of-regime diagnostics values
        let e = HolderExponents::relaxed(0.45, 0.40, 0.49);
        assert_eq!(e.alpha, 0.45);
    }

    #[test]
    fn straight_line_lift_matches_closed_form() {
        let v = [0.8, -0.5];
        let p = PiecewiseLinearPath::line(&[0.0, 0.0], &v, 0.0, 1.0, 1);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        let x = rp.chen_reconstruct(0, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((x.level2[i * 2 + j] - v[i] * v[j] / 2.0).abs() < 1e-15);
                for k in 0..2 {
                    assert!(
                        (x.level3[(i * 2 + j) * 2 + k] - v[i] * v[j] * v[k] / 6.0).abs() < 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn zero_path_lifts_to_zero_levels() {
        let times = vec![0.0, 0.5, 1.0];
        let values = vec![vec![0.0, 0.0]; 3];
        let cells = vec![TruncatedTensor::identity(2); 2];
        let rp = RoughPath::from_cells(times, values, cells, exps(), GeometricCheck::Require(1e-9))
            .unwrap();
        let x = rp.chen_reconstruct(0, 2).unwrap();
        assert_eq!(x.level0, 1.0);
        assert_eq!(x.norm_inf(), 0.0);
        assert_eq!(rp.holder_norm(1), 0.0);
    }

    #[test]
    fn reconstruction_matches_direct_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_path(&mut rng, 3, 16);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        for _ in 0..20 {
            let i = rng.gen_range(0..16);
            let j = rng.gen_range(i..=16);
            let direct = p.signature(p.times()[i], p.times()[j]).unwrap();
            let recon = rp.chen_reconstruct(i, j).unwrap();
            let scale = direct.norm_inf().max(1.0);
            assert!(recon.sub(&direct).norm_inf() <= 1e-12 * scale);
        }
    }

    #[test]
    fn reconstruction_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_path(&mut rng, 2, 8);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        // s = t: identity.
        assert_eq!(
            rp.chen_reconstruct(3, 3).unwrap(),
            TruncatedTensor::identity(2)
        );
        // Adjacent pair: stored block verbatim.
        assert_eq!(&rp.chen_reconstruct(4, 5).unwrap(), rp.cell(4));
        // Reversed pair rejected.
        assert!(matches!(
            rp.chen_reconstruct(5, 4),
            Err(RoughPathError::InvalidPair { .. })
        ));
    }

    #[test]
    fn reconstruction_is_split_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_path(&mut rng, 2, 8);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        let whole = rp.chen_reconstruct(0, 4).unwrap();
        for split in 1..4 {
            let left = rp.chen_reconstruct(0, split).unwrap();
            let right = rp.chen_reconstruct(split, 4).unwrap();
            let prod = left.mul(&right).unwrap();
            assert!(
                whole.sub(&prod).norm_inf() <= 1e-12 * whole.norm_inf().max(1.0),
                "split at {split}"
            );
        }
    }

    #[test]
    fn reconstructed_blocks_of_geometric_lift_stay_group_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_path(&mut rng, 3, 32);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        assert!(rp.geometric());
        for _ in 0..10 {
            let i = rng.gen_range(0..32);
            let j = rng.gen_range(i + 1..=32);
            assert!(rp.chen_reconstruct(i, j).unwrap().shuffle_defect() <= 1e-9);
        }
    }

    #[test]
    fn holder_norm_of_linear_scalar_path() {
        // x_t = v·t on [0, 2]: |X¹_{s,t}|/(t−s)^α = |v|(t−s)^{1−α},
        // maximized at the full span.
        let v = 1.5;
        let p = PiecewiseLinearPath::line(&[0.0], &[2.0 * v], 0.0, 2.0, 16);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        let expect = v * 2.0f64.powf(1.0 - 0.30);
        assert!((rp.holder_norm(1) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn holder_norms_increase_under_refinement_within_band() {
        // Brownian-type sample: the discrete sup over a nested refined grid
        // can only grow, and empirically grows by a modest factor.
        let e = HolderExponents::relaxed(0.45, 0.40, 0.49);
        let mut growth = Vec::new();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 1024;
            let dt = 1.0 / n as f64;
            let mut val = vec![0.0f64];
            for _ in 0..n {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                val.push(val.last().unwrap() + z * dt.sqrt());
            }
            let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
            let values: Vec<Vec<f64>> = val.iter().map(|&x| vec![x]).collect();
            let p = PiecewiseLinearPath::new(times, values).unwrap();
            let fine = RoughPath::from_signature_path(&p, e).unwrap();
            let coarse = fine.coarsen(2).unwrap();
            let (nf, nc) = (fine.holder_norm(1), coarse.holder_norm(1));
            assert!(nf >= nc - 1e-12, "refinement must not shrink the sup");
            growth.push(nf / nc);
        }
        growth.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = growth[growth.len() / 2];
        assert!(median <= 1.15, "median refinement growth {median}");
    }

    #[test]
    fn dilation_identity_zero_and_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_path(&mut rng, 2, 12);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        // λ = 1: identical blocks.
        let same = rp.dilate(1.0);
        assert!(
            same.chen_reconstruct(0, 12)
                .unwrap()
                .sub(&rp.chen_reconstruct(0, 12).unwrap())
                .norm_inf()
                == 0.0
        );
        // λ = 0: all levels vanish.
        let zero = rp.dilate(0.0);
        assert_eq!(zero.chen_reconstruct(0, 12).unwrap().norm_inf(), 0.0);
        // dilate(S(x), c) = S(c·x).
        let c = -0.7;
        let scaled = RoughPath::from_signature_path(&p.scale(c), exps()).unwrap();
        let a = rp.dilate(c).chen_reconstruct(2, 9).unwrap();
        let b = scaled.chen_reconstruct(2, 9).unwrap();
        assert!(a.sub(&b).norm_inf() < 1e-12);
    }

    #[test]
    fn dilation_is_a_homomorphism_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p = random_path(&mut rng, 2, 6);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        // Dyadic scalars multiply exactly in binary floating point, so the
        // homomorphism holds bit-for-bit.
        let (a, b) = (0.5, -2.25);
        let lhs = rp.dilate(a).dilate(b);
        let rhs = rp.dilate(a * b);
        for k in 0..6 {
            assert_eq!(lhs.cell(k).sub(rhs.cell(k)).norm_inf(), 0.0);
        }
        // Generic scalars agree to the last ulp or so.
        let (a, b) = (0.6, -1.3);
        let lhs = rp.dilate(a).dilate(b);
        let rhs = rp.dilate(a * b);
        for k in 0..6 {
            assert!(lhs.cell(k).sub(rhs.cell(k)).norm_inf() < 1e-15);
        }
    }

    #[test]
    fn distance_axioms_on_random_lifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pa = random_path(&mut rng, 2, 10);
        let pb = random_path(&mut rng, 2, 10);
        let pc = random_path(&mut rng, 2, 10);
        let a = RoughPath::from_signature_path(&pa, exps()).unwrap();
        let b = RoughPath::from_signature_path(&pb, exps()).unwrap();
        let c = RoughPath::from_signature_path(&pc, exps()).unwrap();
        assert_eq!(a.distance(&a).unwrap(), 0.0);
        let ab = a.distance(&b).unwrap();
        let ba = b.distance(&a).unwrap();
        assert!((ab - ba).abs() < 1e-12 * ab.max(1.0));
        let ac = a.distance(&c).unwrap();
        let cb = c.distance(&b).unwrap();
        assert!(ab <= ac + cb + 1e-12, "triangle: {ab} vs {ac} + {cb}");
    }

    #[test]
    fn distance_rejects_mismatched_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = RoughPath::from_signature_path(&random_path(&mut rng, 2, 10), exps()).unwrap();
        let b = RoughPath::from_signature_path(&random_path(&mut rng, 2, 8), exps()).unwrap();
        assert!(a.distance(&b).is_err());
        let c = RoughPath::from_signature_path(&random_path(&mut rng, 3, 10), exps()).unwrap();
        assert!(a.distance(&c).is_err());
    }

    #[test]
    fn coarsening_preserves_signature_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = random_path(&mut rng, 2, 16);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        let c = rp.coarsen(4).unwrap();
        assert_eq!(c.len(), 5);
        for k in 0..4 {
            let fine = rp.chen_reconstruct(4 * k, 4 * (k + 1)).unwrap();
            assert!(c.cell(k).sub(&fine).norm_inf() < 1e-14);
        }
        assert!(rp.coarsen(3).is_err(), "stride must divide the cell count");
    }

    #[test]
    fn restriction_rebases_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = random_path(&mut rng, 2, 12);
        let rp = RoughPath::from_signature_path(&p, exps()).unwrap();
        let sub = rp.restrict(3, 9).unwrap();
        assert_eq!(sub.len(), 7);
        let a = sub.chen_reconstruct(0, 6).unwrap();
        let b = rp.chen_reconstruct(3, 9).unwrap();
        assert!(a.sub(&b).norm_inf() < 1e-13);
    }

    #[test]
    fn inconsistent_cells_are_rejected() {
        let times = vec![0.0, 1.0];
        let values = vec![vec![0.0], vec![1.0]];
        // Cell claims increment 2 while the node values step by 1.
        let cells = vec![TruncatedTensor::segment_signature(&[2.0])];
        let r = RoughPath::from_cells(times, values, cells, exps(), GeometricCheck::Record(1e-9));
        assert!(matches!(r, Err(RoughPathError::InconsistentCells(_))));
    }
}
