//! Sample every anchor `N` times, plan on the empirical model and measure the
//! true suboptimality of the resulting policy.
//!
//! cargo run --release --example model_based_planning

use anchor_rl::linear::SimplexModelSpec;
use anchor_rl::model_based::{evaluate_policy_error_with, oracle_q_star, run_model_based};

fn main() -> anchor_rl::Result<()> {
    let (lin, anchors) = SimplexModelSpec::new(200, 5, 10, 0).build()?;
    let mdp = lin.base();
    let q_star = oracle_q_star(mdp)?;

    println!(
        "{:>6} {:>12} {:>12} {:>8}",
        "N", "|Q^ - Q*|", "policy err", "draws"
    );
    for exp in 6..=14 {
        let n = 1u64 << exp;
        let res = run_model_based(mdp, &anchors, n, 1e-6, 1)?;
        let policy_error = evaluate_policy_error_with(mdp, &q_star, &res.policy)?;
        println!(
            "{n:>6} {:>12.3e} {:>12.3e} {:>8}",
            res.empirical_q_star.sup_distance(&q_star),
            policy_error,
            res.sample_count
        );
    }
    Ok(())
}
