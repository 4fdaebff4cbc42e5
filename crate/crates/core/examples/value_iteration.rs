//! Optimal Q-values of a random tabular MDP, checked against exact policy
//! evaluation of the greedy policy.
//!
//! cargo run --example value_iteration

use anchor_rl::mdp::{exact_q_for_policy, greedy_policy, random_tabular_mdp, value_iteration};

fn main() -> anchor_rl::Result<()> {
    let mdp = random_tabular_mdp(10, 3, 0.9, 1.0, 1)?;
    for tol in [1e-2, 1e-6, 1e-10] {
        let out = value_iteration(&mdp, mdp.reward(), mdp.discount(), tol)?;
        let policy = greedy_policy(&out.q);
        let exact = exact_q_for_policy(&mdp, &policy)?;
        println!(
            "tol {tol:>7.0e}: {:>4} sweeps, certified error {:.2e}, |Q - Q^pi| = {:.2e}",
            out.iterations,
            out.certified_error(),
            out.q.sup_distance(&exact)
        );
    }
    let q = value_iteration(&mdp, mdp.reward(), mdp.discount(), 1e-10)?.q;
    println!("greedy policy: {:?}", greedy_policy(&q).actions());
    Ok(())
}
