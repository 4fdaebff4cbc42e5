//! Invariant and property checks on a parsed model file.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linear::{misspecification_distance, variance_mixing_slack, FACTOR_TOL};
use crate::mdp::{
    bellman_operator, build_absorbing_mdp, exact_q_for_policy, greedy_policy, optimal_q, QFunction,
    ROW_SUM_TOL,
};
use crate::model_file::{ModelFile, RawModel};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name,
            passed,
            detail: detail.into(),
        });
    }
}

const PROPERTY_TRIALS: usize = 20;

/// Runs structural checks on the raw data, then (if those pass) the
/// dynamic properties of the built model. `seed` drives the random probes.
pub fn verify_model(raw: &RawModel, seed: u64) -> VerifyReport {
    let mut report = VerifyReport::default();
    structural(raw, &mut report);
    if !report.passed() {
        return report;
    }
    match raw.build() {
        Ok(model) => {
            report.push("model_construction", true, "");
            dynamic(&model, seed, &mut report);
        }
        Err(e) => report.push("model_construction", false, e.to_string()),
    }
    report
}

fn structural(raw: &RawModel, report: &mut VerifyReport) {
    report.push(
        "discount_in_unit_interval",
        raw.discount > 0.0 && raw.discount < 1.0,
        format!("γ = {}", raw.discount),
    );

    let bad_reward = raw.reward.iter().position(|r| !(0.0..=1.0).contains(r));
    report.push(
        "rewards_in_unit_interval",
        bad_reward.is_none(),
        bad_reward.map(|i| format!("pair {i}")).unwrap_or_default(),
    );

    let kernel = &raw.features * &raw.factor;
    let worst_sum = kernel
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    report.push(
        "kernel_rows_sum_to_one",
        worst_sum <= FACTOR_TOL,
        format!("worst deviation {worst_sum:.3e}"),
    );
    let most_negative = kernel.min();
    report.push(
        "kernel_nonnegative",
        most_negative >= -1e-12,
        format!("smallest entry {most_negative:.3e}"),
    );

    if let Some(p) = &raw.transition {
        let worst = p
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        report.push(
            "truth_rows_are_distributions",
            worst <= ROW_SUM_TOL && p.min() >= 0.0,
            format!(
                "worst row-sum deviation {worst:.3e}, smallest entry {:.3e}",
                p.min()
            ),
        );
    }

    let pairs = raw.num_states * raw.num_actions;
    let mut sorted = raw.anchors.clone();
    sorted.sort_unstable();
    sorted.dedup();
    report.push(
        "anchors_distinct_and_in_range",
        sorted.len() == raw.anchors.len() && sorted.last().is_some_and(|&a| a < pairs),
        format!("{} anchors over {pairs} pairs", raw.anchors.len()),
    );
    report.push(
        "anchor_count_matches_feature_dim",
        raw.anchors.len() == raw.feature_dim,
        format!(
            "K = {}, feature dim = {}",
            raw.anchors.len(),
            raw.feature_dim
        ),
    );
}

fn dynamic(model: &ModelFile, seed: u64, report: &mut VerifyReport) {
    let lin = model.linear();
    let anchors = model.anchors();
    let base = lin.base();
    let mdp = model.mdp();
    let gamma = mdp.discount();
    let upper = mdp.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let lambda = anchors.coefficients();
    let worst_neg = lambda.min();
    let worst_sum = lambda
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    report.push(
        "anchor_coefficients_convex",
        worst_neg >= 0.0 && worst_sum <= 1e-9,
        format!("min {worst_neg:.3e}, worst row-sum deviation {worst_sum:.3e}"),
    );

    let p_k = anchors.anchor_rows(base.transition());
    let rebuilt = lambda * &p_k;
    let gap = misspecification_distance(&rebuilt, base.transition()).unwrap_or(f64::INFINITY);
    report.push(
        "anchor_reconstruction",
        gap <= 1e-8,
        format!("max row ℓ1 gap {gap:.3e}"),
    );

    if let Some(truth) = model.truth() {
        let xi = misspecification_distance(base.transition(), truth.transition())
            .unwrap_or(f64::INFINITY);
        report.push(
            "misspecification_measured",
            xi.is_finite(),
            format!("ξ = {xi:.6e}"),
        );
    }

    let random_q = |rng: &mut ChaCha8Rng| {
        let v = DVector::from_fn(mdp.num_pairs(), |_, _| rng.random::<f64>() * upper);
        QFunction::new(v, mdp.num_actions()).expect("shape matches the model")
    };

    let mut worst = f64::NEG_INFINITY;
    let mut monotone = true;
    for _ in 0..PROPERTY_TRIALS {
        let q1 = random_q(&mut rng);
        let q2 = random_q(&mut rng);
        let (Ok(t1), Ok(t2)) = (bellman_operator(&q1, mdp), bellman_operator(&q2, mdp)) else {
            worst = f64::INFINITY;
            break;
        };
        worst = worst.max(t1.sup_distance(&t2) - gamma * q1.sup_distance(&q2));

        let lo = QFunction::new(q1.values().inf(q2.values()), mdp.num_actions()).unwrap();
        let t_lo = bellman_operator(&lo, mdp).unwrap();
        monotone &= t_lo
            .values()
            .iter()
            .zip(t1.values().iter())
            .all(|(a, b)| a <= &(b + 1e-12));
    }
    report.push(
        "bellman_contraction",
        worst <= 1e-12,
        format!("worst excess {worst:.3e}"),
    );
    report.push("bellman_monotone", monotone, "");

    match optimal_q(mdp, 1e-10) {
        Ok(q_star) => {
            let residual = bellman_operator(&q_star, mdp)
                .map(|t| t.sup_distance(&q_star))
                .unwrap_or(f64::INFINITY);
            report.push(
                "optimal_q_fixed_point",
                residual <= 1e-10 * (1.0 - gamma) + 1e-12,
                format!("residual {residual:.3e}"),
            );
            let in_range = q_star
                .values()
                .iter()
                .all(|&x| x >= 0.0 && x <= upper + 1e-9);
            report.push("optimal_q_bounded", in_range, format!("bound {upper}"));

            let policy = greedy_policy(&q_star);
            let gap = exact_q_for_policy(mdp, &policy)
                .map(|q_pi| q_pi.sup_distance(&q_star))
                .unwrap_or(f64::INFINITY);
            let tol = 2.0 * gamma * 1e-10 / (1.0 - gamma) + 1e-8;
            report.push(
                "greedy_policy_matches_oracle",
                gap <= tol,
                format!("gap {gap:.3e}, tolerance {tol:.3e}"),
            );

            let v = q_star.state_values().0;
            let mut worst = f64::INFINITY;
            for row in 0..lambda.nrows() {
                let l = lambda.row(row).transpose();
                let slack = variance_mixing_slack(&l, &p_k, &v).unwrap_or(f64::NEG_INFINITY);
                worst = worst.min(slack);
            }
            report.push(
                "variance_mixing_inequality",
                worst >= -1e-10,
                format!("smallest slack {worst:.3e}"),
            );
        }
        Err(e) => report.push("optimal_q_fixed_point", false, e.to_string()),
    }

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..PROPERTY_TRIALS.min(mdp.num_states() * 2) {
        let s = rng.random_range(0..mdp.num_states());
        let u1 = rng.random::<f64>() * upper;
        let u2 = rng.random::<f64>() * upper;
        let values = |u: f64| {
            build_absorbing_mdp(mdp, s, u)
                .and_then(|m| optimal_q(&m, 1e-11))
                .map(|q| q.state_values())
        };
        match (values(u1), values(u2)) {
            (Ok(a), Ok(b)) => worst = worst.max(a.sup_distance(&b) - (u1 - u2).abs()),
            _ => worst = f64::INFINITY,
        }
    }
    report.push(
        "absorbing_value_lipschitz",
        worst <= 1e-8,
        format!("worst excess {worst:.3e}"),
    );
}
