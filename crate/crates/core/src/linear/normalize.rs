//! Re-expressing features so the feature dimension equals the anchor count.
//!
//! With more feature coordinates than anchors, a maximal independent set of
//! coordinates is kept (column-pivoted QR on `Φ_K`) and the factor rows of
//! the dropped coordinates are folded into the kept ones. With fewer, the
//! anchor block is completed to an invertible square matrix with unit
//! directions and every other pair takes `λ(s,a)` times the completed block;
//! the factor gains zero rows.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;

use super::{build_anchor_set, max_abs_diff, AnchorSet, LinearMdp};
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum NormalizationKind {
    /// Feature dimension already equals the anchor count.
    Unchanged,
    /// Coordinates `dropped` equal `Φ[:, kept] · combination`.
    Reduced {
        kept: Vec<usize>,
        dropped: Vec<usize>,
        combination: DMatrix<f64>,
    },
    /// `added` extra coordinates were appended.
    Augmented { added: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNormalization {
    pub features: DMatrix<f64>,
    pub kind: NormalizationKind,
}

impl FeatureNormalization {
    /// Factor `Ψ'` such that `features · Ψ'` reproduces the original `Φ Ψ`.
    pub fn refit_factor(&self, factor: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            NormalizationKind::Unchanged => factor.clone(),
            NormalizationKind::Reduced {
                kept,
                dropped,
                combination,
            } => {
                let kept_rows = factor.select_rows(kept.iter());
                let dropped_rows = factor.select_rows(dropped.iter());
                kept_rows + combination * dropped_rows
            }
            NormalizationKind::Augmented { added } => {
                let mut out = DMatrix::zeros(factor.nrows() + added, factor.ncols());
                out.rows_mut(0, factor.nrows()).copy_from(factor);
                out
            }
        }
    }
}

/// Column order chosen by column-pivoted QR together with the numerical rank.
fn pivoted_rank(m: &DMatrix<f64>) -> (Vec<usize>, usize) {
    let qr = m.clone().col_piv_qr();
    let mut order = DMatrix::from_fn(1, m.ncols(), |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let r = qr.r();
    let diag = r.nrows().min(r.ncols());
    let lead = if diag > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..diag)
        .filter(|&i| lead > 0.0 && r[(i, i)].abs() > RANK_TOL * lead)
        .count();
    (order.iter().map(|&x| x as usize).collect(), rank)
}

fn rank(m: &DMatrix<f64>) -> usize {
    pivoted_rank(m).1
}

/// Maps `features` (`|S||A| × K_d`) to `|S||A| × K_n` where `K_n` is the
/// number of anchors.
pub fn normalize_features(
    features: &DMatrix<f64>,
    anchor_pairs: &[usize],
) -> Result<FeatureNormalization> {
    let k_d = features.ncols();
    let k_n = anchor_pairs.len();
    if k_n == 0 {
        return Err(Error::Precondition(
            "at least one anchor is required".into(),
        ));
    }
    if let Some(&p) = anchor_pairs.iter().find(|&&p| p >= features.nrows()) {
        return Err(Error::Precondition(format!("anchor pair {p} out of range")));
    }
    let anchor_block = features.select_rows(anchor_pairs.iter());
    let needed = k_d.min(k_n);
    let (order, found) = pivoted_rank(&anchor_block);
    if found < needed {
        return Err(Error::RankDeficient {
            rank: found,
            needed,
        });
    }

    if k_d == k_n {
        return Ok(FeatureNormalization {
            features: features.clone(),
            kind: NormalizationKind::Unchanged,
        });
    }

    if k_d > k_n {
        let mut kept = order[..k_n].to_vec();
        kept.sort_unstable();
        let dropped: Vec<usize> = (0..k_d).filter(|j| !kept.contains(j)).collect();
        let kept_block = anchor_block.select_columns(kept.iter());
        let dropped_block = anchor_block.select_columns(dropped.iter());
        let combination = kept_block
            .lu()
            .solve(&dropped_block)
            .ok_or(Error::RankDeficient {
                rank: found,
                needed,
            })?;
        return Ok(FeatureNormalization {
            features: features.select_columns(kept.iter()),
            kind: NormalizationKind::Reduced {
                kept,
                dropped,
                combination,
            },
        });
    }

    // Fewer coordinates than anchors: complete the anchor block.
    let mut completed = anchor_block.clone();
    let mut extra_dirs = Vec::new();
    for j in 0..k_n {
        if completed.ncols() == k_n {
            break;
        }
        let mut candidate = completed.clone().insert_column(completed.ncols(), 0.0);
        let last = candidate.ncols() - 1;
        candidate[(j, last)] = 1.0;
        if rank(&candidate) == candidate.ncols() {
            completed = candidate;
            extra_dirs.push(j);
        }
    }
    if completed.ncols() != k_n {
        return Err(Error::RankDeficient {
            rank: found,
            needed,
        });
    }

    let pairs = features.nrows();
    let added = k_n - k_d;
    let mut out = DMatrix::<f64>::zeros(pairs, k_n);
    out.columns_mut(0, k_d).copy_from(features);
    for sa in 0..pairs {
        let lambda = match anchor_pairs.iter().position(|&p| p == sa) {
            Some(i) => {
                let mut e = vec![0.0; k_n];
                e[i] = 1.0;
                e
            }
            None => convex_weights_lp(&anchor_block, features.row(sa).iter().copied(), sa)?,
        };
        for (c, &dir) in extra_dirs.iter().enumerate() {
            out[(sa, k_d + c)] = lambda[dir];
        }
    }
    Ok(FeatureNormalization {
        features: out,
        kind: NormalizationKind::Augmented { added },
    })
}

/// A feasible `λ ≥ 0`, `Σλ = 1`, `λᵀ Φ_K = φᵀ` for a non-square anchor block.
fn convex_weights_lp(
    anchor_block: &DMatrix<f64>,
    phi: impl Iterator<Item = f64>,
    pair: usize,
) -> Result<Vec<f64>> {
    let phi: Vec<f64> = phi.collect();
    let k_n = anchor_block.nrows();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..k_n)
        .map(|_| problem.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    for (j, &target) in phi.iter().enumerate() {
        let terms: Vec<_> = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, anchor_block[(i, j)]))
            .collect();
        problem.add_constraint(&terms, ComparisonOp::Eq, target);
    }
    let ones: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
    problem.add_constraint(&ones, ComparisonOp::Eq, 1.0);
    let solution = problem.solve().map_err(|_| Error::AnchorViolation {
        pair: Some(pair),
        violation: f64::NAN,
    })?;
    let lambda: Vec<f64> = vars.iter().map(|&v| solution[v].max(0.0)).collect();
    let worst = (0..phi.len())
        .map(|j| {
            let got: f64 = (0..k_n).map(|i| lambda[i] * anchor_block[(i, j)]).sum();
            (got - phi[j]).abs()
        })
        .fold((lambda.iter().sum::<f64>() - 1.0).abs(), f64::max);
    if worst > 1e-9 {
        return Err(Error::AnchorViolation {
            pair: Some(pair),
            violation: worst,
        });
    }
    Ok(lambda)
}

/// Normalises a whole model: new features, refitted factor and the anchor set.
pub fn normalize_linear_mdp(
    mdp: &LinearMdp,
    anchor_pairs: &[usize],
) -> Result<(LinearMdp, AnchorSet)> {
    let norm = normalize_features(mdp.features(), anchor_pairs)?;
    let factor = norm.refit_factor(mdp.factor());
    let rebuilt = &norm.features * &factor;
    let gap = max_abs_diff(&rebuilt, mdp.base().transition());
    if gap > super::FACTOR_TOL {
        return Err(Error::Numerical(format!(
            "normalised features miss the kernel by {gap:.3e}"
        )));
    }
    let out = LinearMdp::new(mdp.base().clone(), norm.features, factor)?;
    let anchors = build_anchor_set(&out, anchor_pairs)?;
    Ok((out, anchors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::random_simplex_model;

    #[test]
    fn equal_dimensions_is_identity() {
        let (mdp, anchors) = random_simplex_model(10, 2, 4, 3).unwrap();
        let norm = normalize_features(mdp.features(), anchors.pairs()).unwrap();
        assert_eq!(norm.kind, NormalizationKind::Unchanged);
        assert_eq!(&norm.features, mdp.features());
    }

    #[test]
    fn rank_deficient_anchors() {
        let (mdp, anchors) = random_simplex_model(10, 2, 4, 3).unwrap();
        let mut phi = mdp.features().clone();
        phi.column_mut(3).fill(0.0);
        assert!(matches!(
            normalize_features(&phi, anchors.pairs()),
            Err(Error::RankDeficient { rank: 3, needed: 4 })
        ));
    }
}
