//! Anchor pairs and the convex weights that express every other pair's
//! transition as a mixture of anchor rows.
//!
//! cargo run --example anchor_coefficients

use anchor_rl::linear::{misspecification_distance, random_simplex_model};

fn main() -> anchor_rl::Result<()> {
    let (mdp, anchors) = random_simplex_model(20, 3, 4, 7)?;
    println!("anchor pairs: {:?}", anchors.pairs());

    let lambda = anchors.coefficients();
    for sa in 0..5 {
        let row: Vec<String> = lambda.row(sa).iter().map(|x| format!("{x:.3}")).collect();
        println!("lambda({sa}) = [{}]", row.join(", "));
    }

    let p = mdp.base().transition();
    let rebuilt = lambda * anchors.anchor_rows(p);
    println!(
        "max row l1 gap between Lambda P_K and P: {:.2e}",
        misspecification_distance(&rebuilt, p)?
    );
    Ok(())
}
