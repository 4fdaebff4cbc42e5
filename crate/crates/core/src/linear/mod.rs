//! Linear transition models `P = Φ Ψ` and their anchor structure.

mod anchors;
mod generate;
mod normalize;

pub use anchors::{
    build_anchor_set, solve_convex_coefficients, variance_mixing_slack, AnchorSet, ConvexSolver,
};
pub use generate::{perturb_model, random_simplex_model, SimplexModelSpec};
pub use normalize::{
    normalize_features, normalize_linear_mdp, FeatureNormalization, NormalizationKind,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{check_dim, TabularMdp};

/// Reproduction tolerance of `Φ Ψ` against the base kernel.
pub const FACTOR_TOL: f64 = 1e-10;

/// An MDP whose kernel factors as `P(s'|s,a) = Σ_k φ_k(s,a) ψ_k(s')`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMdp {
    base: TabularMdp,
    features: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl LinearMdp {
    /// Builds the MDP whose kernel is `features * factor`.
    ///
    /// Entries of the product within `1e-12` below zero are rounded to zero.
    pub fn from_factors(
        num_states: usize,
        num_actions: usize,
        features: DMatrix<f64>,
        factor: DMatrix<f64>,
        reward: DVector<f64>,
        discount: f64,
    ) -> Result<Self> {
        check_dim("feature rows", num_states * num_actions, features.nrows())?;
        check_dim("factor rows", features.ncols(), factor.nrows())?;
        check_dim("factor columns", num_states, factor.ncols())?;
        let mut transition = &features * &factor;
        for p in transition.iter_mut() {
            if *p < 0.0 && *p >= -1e-12 {
                *p = 0.0;
            }
        }
        let base = TabularMdp::new(num_states, num_actions, transition, reward, discount)?;
        Self::new(base, features, factor)
    }

    /// Wraps an existing MDP with a factorisation, checking `Φ Ψ ≈ P`.
    pub fn new(base: TabularMdp, features: DMatrix<f64>, factor: DMatrix<f64>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::Precondition(
                "feature dimension must be at least 1".into(),
            ));
        }
        check_dim("feature rows", base.num_pairs(), features.nrows())?;
        check_dim("factor rows", features.ncols(), factor.nrows())?;
        check_dim("factor columns", base.num_states(), factor.ncols())?;
        let gap = max_abs_diff(&(&features * &factor), base.transition());
        if gap > FACTOR_TOL {
            return Err(Error::InvalidMdp(format!(
                "features times factor misses the kernel by {gap:.3e}"
            )));
        }
        Ok(Self {
            base,
            features,
            factor,
        })
    }

    pub fn base(&self) -> &TabularMdp {
        &self.base
    }

    pub fn into_base(self) -> TabularMdp {
        self.base
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// `Φ`, one row per state-action pair.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// `Ψ`, one row per feature coordinate.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Largest row-wise ℓ1 norm of `a - b`.
pub(crate) fn max_row_l1(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut rows = vec![0.0_f64; a.nrows()];
    for j in 0..a.ncols() {
        for (i, acc) in rows.iter_mut().enumerate() {
            *acc += (a[(i, j)] - b[(i, j)]).abs();
        }
    }
    rows.into_iter().fold(0.0, f64::max)
}

/// A tabular MDP seen as a linear model with `φ(s,a) = e_(s,a)` and `Ψ = P`.
pub fn tabular_embedding(mdp: &TabularMdp) -> LinearMdp {
    let pairs = mdp.num_pairs();
    LinearMdp {
        base: mdp.clone(),
        features: DMatrix::identity(pairs, pairs),
        factor: mdp.transition().clone(),
    }
}

/// `‖P̃ - P‖₁`: the largest row-wise ℓ1 distance between two kernels.
pub fn misspecification_distance(p: &DMatrix<f64>, p_tilde: &DMatrix<f64>) -> Result<f64> {
    check_dim("kernel rows", p.nrows(), p_tilde.nrows())?;
    check_dim("kernel columns", p.ncols(), p_tilde.ncols())?;
    Ok(max_row_l1(p_tilde, p))
}

/// Solves `Φ_K θ = r_K` so that `r(s,a) = θᵀ φ(s,a)` on the anchors.
pub fn recover_reward_coefficients(
    rewards_at_anchors: &DVector<f64>,
    anchor_features: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = anchor_features.nrows();
    check_dim("anchor feature columns", k, anchor_features.ncols())?;
    check_dim("anchor rewards", k, rewards_at_anchors.len())?;
    anchors::check_invertible(anchor_features)?;
    let theta = anchor_features
        .clone()
        .lu()
        .solve(rewards_at_anchors)
        .ok_or(Error::AnchorsNotIndependent {
            smallest: 0.0,
            largest: 0.0,
        })?;
    let residual = (anchor_features * &theta - rewards_at_anchors).amax();
    if residual > 1e-10 {
        return Err(Error::Numerical(format!(
            "reward recovery residual {residual:.3e}"
        )));
    }
    Ok(theta)
}
