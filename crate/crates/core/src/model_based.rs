//! Model-based planning on the empirical MDP `M̂ = (S, A, Λ P̂_K, r, γ)`.

use crate::error::{Error, Result};
use crate::linear::AnchorSet;
use crate::mdp::{
    exact_q_for_policy, greedy_policy, optimal_q, value_iteration, Policy, QFunction, TabularMdp,
};
use crate::sampling::{empirical_kernel, sample_anchor_transitions, EmpiricalKernel};

/// Tolerance used whenever `Q*` of the true MDP serves as an oracle.
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ModelBasedResult {
    /// `π̂`, greedy with respect to `empirical_q_star`.
    pub policy: Policy,
    /// Value-iteration estimate of `Q̂*`, within `eps_opt` of it.
    pub empirical_q_star: QFunction,
    pub planner_iterations: usize,
    /// A-posteriori bound on `‖empirical_q_star - Q̂*‖∞`.
    pub planner_certified_error: f64,
    /// Total generative-model draws, `N·K`.
    pub sample_count: u64,
}

/// Draws `n` samples per anchor, builds `M̂` and plans on it to `eps_opt`.
pub fn run_model_based(
    mdp: &TabularMdp,
    anchors: &AnchorSet,
    n: u64,
    eps_opt: f64,
    seed: u64,
) -> Result<ModelBasedResult> {
    let batch = sample_anchor_transitions(mdp, anchors, n, seed)?;
    let kernel = empirical_kernel(&batch, anchors)?;
    let mut result = plan_on_kernel(mdp, &kernel, eps_opt)?;
    result.sample_count = batch.sample_count();
    Ok(result)
}

/// Plans on a given empirical kernel; `sample_count` is left at zero.
///
/// Together with [`EmpiricalKernel::exact`] this is the exact-data test hook.
pub fn plan_on_kernel(
    mdp: &TabularMdp,
    kernel: &EmpiricalKernel,
    eps_opt: f64,
) -> Result<ModelBasedResult> {
    if !(eps_opt > 0.0) {
        return Err(Error::Precondition(format!(
            "eps_opt {eps_opt} must be positive"
        )));
    }
    let out = value_iteration(kernel, mdp.reward(), mdp.discount(), eps_opt)?;
    Ok(ModelBasedResult {
        policy: greedy_policy(&out.q),
        planner_certified_error: out.certified_error(),
        planner_iterations: out.iterations,
        empirical_q_star: out.q,
        sample_count: 0,
    })
}

/// `max_{s,a} Q*(s,a) - Q^π(s,a)` against a precomputed `Q*`.
pub fn evaluate_policy_error_with(
    mdp: &TabularMdp,
    q_star: &QFunction,
    policy: &Policy,
) -> Result<f64> {
    let q_pi = exact_q_for_policy(mdp, policy)?;
    Ok(q_star
        .values()
        .iter()
        .zip(q_pi.values().iter())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `Q*` for error measurement: value iteration to [`ORACLE_TOL`], then exact
/// evaluation of its greedy policy.
///
/// The second step removes the iteration residual, so a policy that matches
/// the oracle's greedy policy scores exactly zero.
pub fn oracle_q_star(mdp: &TabularMdp) -> Result<QFunction> {
    let q = optimal_q(mdp, ORACLE_TOL)?;
    exact_q_for_policy(mdp, &greedy_policy(&q))
}

/// `max_{s,a} Q*(s,a) - Q^π(s,a)`, both sides computed exactly.
pub fn evaluate_policy_error(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    evaluate_policy_error_with(mdp, &oracle_q_star(mdp)?, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_anchor_set, random_simplex_model, tabular_embedding};
    use crate::mdp::random_tabular_mdp;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn exact_kernel_recovers_optimal_policy() {
        let (lin, anchors) = random_simplex_model(40, 3, 5, 3).unwrap();
        let mdp = lin.base();
        let eps_opt = 1e-6;
        let kernel = EmpiricalKernel::exact(mdp, &anchors).unwrap();
        let res = plan_on_kernel(mdp, &kernel, eps_opt).unwrap();
        let err = evaluate_policy_error(mdp, &res.policy).unwrap();
        assert!(err <= 2.0 * 0.9 * eps_opt / 0.1 + 1e-8, "{err}");
        assert!(err >= -1e-9);
    }

    #[test]
    fn optimal_policy_has_no_error() {
        let mdp = random_tabular_mdp(12, 3, 0.9, 1.0, 8).unwrap();
        let pi = greedy_policy(&optimal_q(&mdp, 1e-12).unwrap());
        assert_eq!(evaluate_policy_error(&mdp, &pi).unwrap(), 0.0);
    }

    #[test]
    fn single_state_error_is_reward_gap() {
        let mdp = TabularMdp::new(
            1,
            3,
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_vec(vec![0.2, 0.9, 0.5]),
            0.8,
        )
        .unwrap();
        // the best action is optimal; any other loses γ(r* - r_a)/(1-γ)
        assert!(evaluate_policy_error(&mdp, &Policy(vec![1])).unwrap().abs() < 1e-9);
        for (a, r) in [(0, 0.2), (2, 0.5)] {
            let err = evaluate_policy_error(&mdp, &Policy(vec![a])).unwrap();
            assert!((err - 0.8 * (0.9 - r) / 0.2).abs() < 1e-9, "{err}");
        }
    }

    #[test]
    fn worst_action_gap_on_two_state_chain() {
        // action 0 moves to the rewarding absorbing state 1, action 1 stays put
        // with no reward; at state 1 both actions self-loop with reward 1.
        let gamma = 0.5;
        let p = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let mdp = TabularMdp::new(2, 2, p, r, gamma).unwrap();
        // Q*(0,1) = γ V*(0) = γ·(γ·2) = 0.5; Q^π(0,1) under "always stay" = 0.
        // Q*(0,0) = γ·2 = 1, Q^π(0,0) = γ V^π(1) = 1.
        let err = evaluate_policy_error(&mdp, &Policy(vec![1, 1])).unwrap();
        assert!((err - 0.5).abs() < 1e-9, "{err}");
    }

    #[test]
    fn tabular_embedding_uses_anchor_rows_directly() {
        let mdp = random_tabular_mdp(5, 2, 0.9, 1.0, 1).unwrap();
        let anchors =
            build_anchor_set(&tabular_embedding(&mdp), &(0..10).collect::<Vec<_>>()).unwrap();
        let res = run_model_based(&mdp, &anchors, 100, 1e-8, 4).unwrap();
        assert_eq!(res.sample_count, 1000);
        assert!(res.planner_certified_error <= 1e-8);
    }

    #[test]
    fn halving_eps_opt_tightens_certificate() {
        let (lin, anchors) = random_simplex_model(30, 2, 4, 6).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..8 {
            let eps = 1e-2 / 2f64.powi(k);
            let res = run_model_based(lin.base(), &anchors, 256, eps, 1).unwrap();
            assert!(res.planner_certified_error <= last);
            assert!(res.planner_certified_error <= eps);
            last = res.planner_certified_error;
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let (lin, anchors) = random_simplex_model(10, 2, 2, 6).unwrap();
        assert!(run_model_based(lin.base(), &anchors, 10, 0.0, 1).is_err());
    }
}
