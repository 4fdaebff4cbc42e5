use nalgebra::Dyn;
use nalgebra::{DMatrix, DVector, LU};

use super::{max_abs_diff, max_row_l1, LinearMdp};
use crate::error::{Error, Result};

/// Tolerance below zero (and on the sum) accepted as rounding noise in `λ`.
pub const COEFF_TOL: f64 = 1e-9;
/// Reconstruction tolerance for `Λ Φ_K ≈ Φ` and `Λ P_K ≈ P`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Anchor pairs `𝒦`, their feature block `Φ_K` and the convex weights `Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pairs: Vec<usize>,
    anchor_features: DMatrix<f64>,
    coefficients: DMatrix<f64>,
}

impl AnchorSet {
    /// Flat state-action indices of the anchors, in anchor order.
    pub fn pairs(&self) -> &[usize] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `Φ_K`, row `i` is the feature vector of anchor `i`.
    pub fn anchor_features(&self) -> &DMatrix<f64> {
        &self.anchor_features
    }

    /// `Λ`, row `(s,a)` is `λ(s,a)`.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// `P_K`: the kernel rows of the anchors.
    pub fn anchor_rows(&self, transition: &DMatrix<f64>) -> DMatrix<f64> {
        transition.select_rows(self.pairs.iter())
    }
}

pub(crate) fn check_invertible(m: &DMatrix<f64>) -> Result<()> {
    let sv = m.clone().singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(smallest > 1e-10 * largest) {
        return Err(Error::AnchorsNotIndependent { smallest, largest });
    }
    Ok(())
}

/// Factorised `Φ_Kᵀ`, reused to compute `λ(s,a)` for many pairs.
pub struct ConvexSolver {
    anchor_features: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl ConvexSolver {
    pub fn new(anchor_features: &DMatrix<f64>) -> Result<Self> {
        if anchor_features.nrows() != anchor_features.ncols() {
            return Err(Error::Dimension {
                what: "anchor feature matrix (square)",
                expected: anchor_features.nrows(),
                got: anchor_features.ncols(),
            });
        }
        check_invertible(anchor_features)?;
        Ok(Self {
            anchor_features: anchor_features.clone(),
            lu: anchor_features.transpose().lu(),
        })
    }

    /// Solves `λᵀ Φ_K = φᵀ`, checks feasibility, clips noise and renormalises.
    pub fn solve(&self, phi: &DVector<f64>, pair: Option<usize>) -> Result<DVector<f64>> {
        let k = self.anchor_features.nrows();
        if phi.len() != k {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: k,
                got: phi.len(),
            });
        }
        let mut lambda = self
            .lu
            .solve(phi)
            .ok_or_else(|| Error::Numerical("anchor system is singular".into()))?;
        let residual = (self.anchor_features.tr_mul(&lambda) - phi).amax();
        if residual > RECONSTRUCTION_TOL {
            return Err(Error::Numerical(format!(
                "convex coefficient residual {residual:.3e}"
            )));
        }
        let most_negative = lambda.min().min(0.0);
        let sum_gap = (lambda.sum() - 1.0).abs();
        if most_negative < -COEFF_TOL || sum_gap > COEFF_TOL {
            return Err(Error::AnchorViolation {
                pair,
                violation: (-most_negative).max(sum_gap),
            });
        }
        lambda.iter_mut().for_each(|x| *x = x.max(0.0));
        let sum = lambda.sum();
        lambda /= sum;
        Ok(lambda)
    }
}

/// Convex weights `λ` with `λᵀ Φ_K = φᵀ`, `λ ≥ 0`, `Σ λ = 1`.
pub fn solve_convex_coefficients(
    phi: &DVector<f64>,
    anchor_features: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    ConvexSolver::new(anchor_features)?.solve(phi, None)
}

/// Validates the anchor assumption for `pairs` and computes `Λ`.
pub fn build_anchor_set(mdp: &LinearMdp, pairs: &[usize]) -> Result<AnchorSet> {
    let k = mdp.feature_dim();
    if pairs.len() != k {
        return Err(Error::Dimension {
            what: "anchor count (feature dimension)",
            expected: k,
            got: pairs.len(),
        });
    }
    let total = mdp.base().num_pairs();
    for (i, &p) in pairs.iter().enumerate() {
        if p >= total {
            return Err(Error::Precondition(format!("anchor pair {p} out of range")));
        }
        if pairs[..i].contains(&p) {
            return Err(Error::Precondition(format!("anchor pair {p} listed twice")));
        }
    }
    let features = mdp.features();
    let anchor_features = features.select_rows(pairs.iter());
    let solver = ConvexSolver::new(&anchor_features)?;

    let mut coefficients = DMatrix::<f64>::zeros(total, k);
    for sa in 0..total {
        let phi = features.row(sa).transpose();
        let lambda = solver.solve(&phi, Some(sa))?;
        coefficients.row_mut(sa).copy_from(&lambda.transpose());
    }

    let anchors = AnchorSet {
        pairs: pairs.to_vec(),
        anchor_features,
        coefficients,
    };
    let feature_gap = max_abs_diff(
        &(&anchors.coefficients * &anchors.anchor_features),
        features,
    );
    if feature_gap > RECONSTRUCTION_TOL {
        return Err(Error::Numerical(format!(
            "Λ Φ_K misses Φ by {feature_gap:.3e}"
        )));
    }
    let transition = mdp.base().transition();
    let kernel_gap = max_row_l1(
        &(&anchors.coefficients * anchors.anchor_rows(transition)),
        transition,
    );
    if kernel_gap > RECONSTRUCTION_TOL {
        return Err(Error::Numerical(format!(
            "Λ P_K misses P by {kernel_gap:.3e}"
        )));
    }
    Ok(anchors)
}

/// Slack of the mixing inequality
/// `Σ_i λ_i² Var_{P_K(i)}(V) ≤ Var_{λ P_K}(V)`; nonnegative when it holds.
pub fn variance_mixing_slack(
    lambda: &DVector<f64>,
    anchor_rows: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    crate::mdp::check_dim("mixing weights", anchor_rows.nrows(), lambda.len())?;
    crate::mdp::check_dim("value vector", anchor_rows.ncols(), v.len())?;
    let per_anchor = crate::mdp::row_variances(anchor_rows, v);
    let lhs: f64 = lambda
        .iter()
        .zip(per_anchor.iter())
        .map(|(l, var)| l * l * var)
        .sum();
    let mixed = DMatrix::from_row_slice(1, v.len(), anchor_rows.tr_mul(lambda).as_slice());
    let rhs = crate::mdp::row_variances(&mixed, v)[0];
    Ok(rhs - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_identity_features() {
        let lambda =
            solve_convex_coefficients(&DVector::from_vec(vec![0.3, 0.7]), &DMatrix::identity(2, 2))
                .unwrap();
        assert!((lambda[0] - 0.3).abs() < 1e-15);
        assert!((lambda[1] - 0.7).abs() < 1e-15);
    }

    fn simplex_block() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.15, 0.15, 0.7])
    }

    #[test]
    fn anchor_reproduces_itself() {
        let phi_k = simplex_block();
        for i in 0..3 {
            let lambda = solve_convex_coefficients(&phi_k.row(i).transpose(), &phi_k).unwrap();
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((lambda[j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constructed_mixture() {
        let phi_k = simplex_block();
        let w = [0.2, 0.5, 0.3];
        let phi = (phi_k.row(0) * w[0] + phi_k.row(1) * w[1] + phi_k.row(2) * w[2]).transpose();
        let lambda = solve_convex_coefficients(&phi, &phi_k).unwrap();
        for j in 0..3 {
            assert!((lambda[j] - w[j]).abs() < 1e-8);
        }
        assert!((phi_k.tr_mul(&lambda) - phi).amax() < 1e-8);
    }

    #[test]
    fn infeasible_point_is_rejected() {
        let err = solve_convex_coefficients(
            &DVector::from_vec(vec![1.2, -0.2]),
            &DMatrix::identity(2, 2),
        )
        .unwrap_err();
        match err {
            Error::AnchorViolation { violation, .. } => assert!((violation - 0.2).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
        // sum off by more than the tolerance
        assert!(solve_convex_coefficients(
            &DVector::from_vec(vec![0.5, 0.6]),
            &DMatrix::identity(2, 2)
        )
        .is_err());
    }

    #[test]
    fn rounding_noise_is_clipped() {
        let lambda = solve_convex_coefficients(
            &DVector::from_vec(vec![1.0 + 5e-10, -5e-10]),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(lambda[1], 0.0);
        assert!((lambda.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_anchor_block() {
        let phi_k = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            solve_convex_coefficients(&DVector::from_vec(vec![0.5, 0.5]), &phi_k),
            Err(Error::AnchorsNotIndependent { .. })
        ));
    }
}
