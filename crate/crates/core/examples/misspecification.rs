//! Planning on a model whose true kernel is only approximately linear.
//!
//! cargo run --release --example misspecification

use anchor_rl::linear::{misspecification_distance, perturb_model, SimplexModelSpec};
use anchor_rl::model_based::{evaluate_policy_error_with, oracle_q_star, run_model_based};

fn main() -> anchor_rl::Result<()> {
    let (lin, anchors) = SimplexModelSpec::new(100, 4, 8, 2).build()?;
    let n = 1 << 12;
    for xi in [0.0, 0.01, 0.05, 0.2] {
        let truth = perturb_model(&lin, xi, 5)?;
        let measured = misspecification_distance(lin.base().transition(), truth.transition())?;
        let q_star = oracle_q_star(&truth)?;
        let res = run_model_based(&truth, &anchors, n, 1e-6, 9)?;
        let err = evaluate_policy_error_with(&truth, &q_star, &res.policy)?;
        let bound = 22.0 * measured / (1.0 - truth.discount()).powi(2);
        println!(
            "target xi {xi:<5} measured {measured:.4}  |Q^ - Q*| {:.4}  policy error {:.2e}  (22 xi/(1-g)^2 = {bound:.1})",
            res.empirical_q_star.sup_distance(&q_star),
            err
        );
    }
    Ok(())
}
