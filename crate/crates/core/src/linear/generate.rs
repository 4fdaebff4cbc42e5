use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_anchor_set, AnchorSet, LinearMdp};
use crate::error::{Error, Result};
use crate::mdp::{dirichlet, TabularMdp};

/// Parameters of a random model with simplex features.
///
/// `K` random pairs are anchors with features `e_1..e_K`; every other pair
/// gets a uniform draw from the simplex. Rows of `Ψ` are
/// Dirichlet(`concentration`) distributions over states and rewards are
/// uniform on `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexModelSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub discount: f64,
    pub concentration: f64,
    pub seed: u64,
}

impl SimplexModelSpec {
    pub fn new(num_states: usize, num_actions: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            feature_dim,
            discount: 0.9,
            concentration: 1.0,
            seed,
        }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_concentration(mut self, concentration: f64) -> Self {
        self.concentration = concentration;
        self
    }

    pub fn build(&self) -> Result<(LinearMdp, AnchorSet)> {
        let pairs = self.num_states * self.num_actions;
        let k = self.feature_dim;
        if k == 0 || k > pairs {
            return Err(Error::Precondition(format!(
                "feature dimension {k} must lie in 1..={pairs}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut anchor_pairs = index::sample(&mut rng, pairs, k).into_vec();
        anchor_pairs.sort_unstable();
        let mut anchor_of = vec![None; pairs];
        for (i, &p) in anchor_pairs.iter().enumerate() {
            anchor_of[p] = Some(i);
        }

        let mut features = DMatrix::<f64>::zeros(pairs, k);
        for (sa, anchor) in anchor_of.iter().enumerate() {
            match anchor {
                Some(i) => features[(sa, *i)] = 1.0,
                None => {
                    let row = dirichlet(&mut rng, k, 1.0)?;
                    features.row_mut(sa).copy_from_slice(&row);
                }
            }
        }

        let mut factor = DMatrix::<f64>::zeros(k, self.num_states);
        for i in 0..k {
            let row = dirichlet(&mut rng, self.num_states, self.concentration)?;
            factor.row_mut(i).copy_from_slice(&row);
        }

        let reward = DVector::from_fn(pairs, |_, _| rng.random::<f64>());
        let mdp = LinearMdp::from_factors(
            self.num_states,
            self.num_actions,
            features,
            factor,
            reward,
            self.discount,
        )?;
        let anchors = build_anchor_set(&mdp, &anchor_pairs)?;
        Ok((mdp, anchors))
    }
}

/// Random simplex-feature model with default discount 0.9 and flat Dirichlet rows.
pub fn random_simplex_model(
    num_states: usize,
    num_actions: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<(LinearMdp, AnchorSet)> {
    SimplexModelSpec::new(num_states, num_actions, feature_dim, seed).build()
}

/// Moves probability mass inside rows of the linear kernel so that the
/// returned MDP sits at ℓ1 distance in `[xi/2, xi]` from it.
///
/// Each row is selected with probability one half; a selected row shifts
/// `min(xi/2, p_max)` from its largest entry to its second largest. If no
/// selected row reaches `xi/2`, the remaining rows are tried in order.
pub fn perturb_model(mdp: &LinearMdp, xi_target: f64, seed: u64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&xi_target) {
        return Err(Error::Precondition(format!(
            "target misspecification {xi_target} outside [0, 1]"
        )));
    }
    let base = mdp.base();
    if xi_target == 0.0 {
        return Ok(base.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = base.transition().clone();
    let rows = transition.nrows();
    let selected: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.5)).collect();

    let mut reached = false;
    for (row, _) in selected.iter().enumerate().filter(|(_, &s)| s) {
        reached |= shift_mass(&mut transition, row, xi_target) >= 0.5 * xi_target;
    }
    if !reached {
        for row in (0..rows).filter(|&r| !selected[r]) {
            if shift_mass(&mut transition, row, xi_target) >= 0.5 * xi_target {
                reached = true;
                break;
            }
        }
    }
    if !reached {
        return Err(Error::Unperturbable(xi_target));
    }
    base.with_transition(transition)
}

/// Returns the ℓ1 change applied to `row`.
fn shift_mass(p: &mut DMatrix<f64>, row: usize, xi: f64) -> f64 {
    if p.ncols() < 2 {
        return 0.0;
    }
    let (mut first, mut second) = (0, 1);
    if p[(row, 1)] > p[(row, 0)] {
        (first, second) = (1, 0);
    }
    for j in 2..p.ncols() {
        let v = p[(row, j)];
        if v > p[(row, first)] {
            second = first;
            first = j;
        } else if v > p[(row, second)] {
            second = j;
        }
    }
    let moved = (0.5 * xi).min(p[(row, first)]);
    p[(row, first)] -= moved;
    p[(row, second)] += moved;
    2.0 * moved
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::misspecification_distance;

    #[test]
    fn deterministic_in_seed() {
        let a = random_simplex_model(20, 2, 3, 42).unwrap();
        let b = random_simplex_model(20, 2, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = random_simplex_model(20, 2, 3, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn rows_are_distributions() {
        let (mdp, anchors) = random_simplex_model(20, 2, 3, 1).unwrap();
        let p = mdp.features() * mdp.factor();
        for i in 0..40 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
            assert!(p.row(i).min() >= -1e-12);
        }
        // anchor features are the unit vectors, so Λ = Φ
        assert_eq!(anchors.anchor_features(), &DMatrix::<f64>::identity(3, 3));
        assert!((anchors.coefficients() - mdp.features()).amax() < 1e-15);
    }

    #[test]
    fn full_dimension_is_a_permutation() {
        let (mdp, _) = random_simplex_model(3, 2, 6, 8).unwrap();
        let phi = mdp.features();
        for i in 0..6 {
            assert_eq!(phi.row(i).sum(), 1.0);
            assert_eq!(phi.row(i).iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(phi.column(i).sum(), 1.0);
        }
    }

    #[test]
    fn rejects_oversized_feature_dim() {
        assert!(random_simplex_model(2, 2, 5, 0).is_err());
        assert!(random_simplex_model(2, 2, 0, 0).is_err());
    }

    #[test]
    fn perturbation_hits_target_band() {
        let (mdp, _) = random_simplex_model(30, 3, 4, 5).unwrap();
        assert_eq!(&perturb_model(&mdp, 0.0, 1).unwrap(), mdp.base());
        for (xi, seed) in [(0.1, 2), (0.01, 3), (0.2, 4)] {
            let truth = perturb_model(&mdp, xi, seed).unwrap();
            let measured =
                misspecification_distance(mdp.base().transition(), truth.transition()).unwrap();
            assert!(
                measured >= 0.5 * xi && measured <= xi + 1e-15,
                "{xi}: {measured}"
            );
            for i in 0..90 {
                assert!((truth.transition().row(i).sum() - 1.0).abs() < 1e-12);
            }
        }
        assert!(perturb_model(&mdp, 1.5, 0).is_err());
    }

    #[test]
    fn single_state_cannot_be_perturbed() {
        let (mdp, _) = random_simplex_model(1, 2, 1, 0).unwrap();
        assert!(matches!(
            perturb_model(&mdp, 0.1, 0),
            Err(Error::Unperturbable(_))
        ));
    }
}
