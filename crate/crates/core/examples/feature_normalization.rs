//! Making the feature dimension match the number of anchors, in both
//! directions.
//!
//! cargo run --example feature_normalization

use anchor_rl::linear::{normalize_linear_mdp, random_simplex_model, LinearMdp};
use nalgebra::DMatrix;

fn main() -> anchor_rl::Result<()> {
    let (mdp, anchors) = random_simplex_model(12, 2, 4, 3)?;

    // One redundant coordinate: append the sum of the first two columns.
    let phi = mdp.features();
    let mut wide = phi.clone().insert_column(4, 0.0);
    let extra = phi.column(0) + phi.column(1);
    wide.set_column(4, &extra);
    // Keep the kernel: the extra coordinate carries a zero factor row.
    let psi = mdp.factor().clone().insert_row(4, 0.0);
    let wide_mdp = LinearMdp::new(mdp.base().clone(), wide, psi)?;
    let (reduced, _) = normalize_linear_mdp(&wide_mdp, anchors.pairs())?;
    println!(
        "5 features, 4 anchors -> {} features",
        reduced.feature_dim()
    );

    // One anchor more than features: merge the last two coordinates.
    let mut merge = DMatrix::<f64>::identity(4, 3);
    merge[(3, 2)] = 1.0;
    let narrow = mdp.features() * &merge;
    let psi = mdp.factor().rows(0, 3).into_owned();
    let narrow_mdp = LinearMdp::from_factors(12, 2, narrow, psi, mdp.base().reward().clone(), 0.9)?;
    let pairs = pick_anchors(&narrow_mdp, 4);
    let (augmented, anchors) = normalize_linear_mdp(&narrow_mdp, &pairs)?;
    println!(
        "3 features, 4 anchors -> {} features; anchors {:?}",
        augmented.feature_dim(),
        anchors.pairs()
    );
    Ok(())
}

/// The three pure coordinate pairs plus one mixed pair.
fn pick_anchors(mdp: &LinearMdp, k: usize) -> Vec<usize> {
    let phi = mdp.features();
    let mut out: Vec<usize> = (0..phi.ncols())
        .filter_map(|j| (0..phi.nrows()).find(|&i| phi[(i, j)] == 1.0))
        .collect();
    let mixed = (0..phi.nrows()).find(|i| !out.contains(i) && phi.row(*i).iter().all(|&x| x > 0.0));
    out.extend(mixed);
    out.truncate(k);
    out.sort_unstable();
    out
}
