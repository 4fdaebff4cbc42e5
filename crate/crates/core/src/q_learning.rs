//! Vanilla Q-learning driven by one generative-model draw per anchor per
//! iteration.
//!
//! The update is `Q_t = (1 - η_t) Q_{t-1} + η_t T_K^(t)(Q_{t-1})`, where the
//! empirical operator `T_K^(t)(Q)(s,a) = r(s,a) + γ λ(s,a)·Q_K^(t)` and
//! `Q_K^(t)(i) = max_a' Q(s_t(i), a')` at the fresh next state of anchor `i`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linear::AnchorSet;
use crate::mdp::{greedy_policy, Policy, QFunction, TabularMdp};
use crate::sampling::{AnchorSampler, EmpiricalKernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `η_t = 1 / (1 + c2 (1-γ) t / ln²T)`.
    LinearlyRescaled,
    /// `η_t = 1 / (1 + c1 (1-γ) T / ln²T)` for every `t`.
    Constant,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescaled" | "linearly_rescaled" => Ok(Self::LinearlyRescaled),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LinearlyRescaled => "rescaled",
            Self::Constant => "constant",
        })
    }
}

/// Step sizes over a horizon of `T` iterations. The log is natural.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateSchedule {
    kind: ScheduleKind,
    c1: f64,
    c2: f64,
    horizon: u64,
    discount: f64,
}

impl LearningRateSchedule {
    /// Requires `c1 ≥ c2 > 0`, `T ≥ 2` and `0 < γ < 1`.
    pub fn new(kind: ScheduleKind, c1: f64, c2: f64, horizon: u64, discount: f64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::Precondition(format!(
                "horizon {horizon} must be at least 2"
            )));
        }
        if !(c2 > 0.0 && c1 >= c2) {
            return Err(Error::Precondition(format!(
                "schedule constants need c1 >= c2 > 0, got c1 = {c1}, c2 = {c2}"
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Precondition(format!(
                "discount {discount} outside (0, 1)"
            )));
        }
        Ok(Self {
            kind,
            c1,
            c2,
            horizon,
            discount,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Same constants over a different horizon.
    pub fn with_horizon(&self, horizon: u64) -> Result<Self> {
        Self::new(self.kind, self.c1, self.c2, horizon, self.discount)
    }

    fn scale(&self) -> f64 {
        let log_t = (self.horizon as f64).ln();
        (1.0 - self.discount) / (log_t * log_t)
    }

    /// The admissible band `[1/(1 + c1(1-γ)T/ln²T), 1/(1 + c2(1-γ)t/ln²T)]`.
    pub fn bounds(&self, t: u64) -> (f64, f64) {
        let k = self.scale();
        let lo = 1.0 / (1.0 + self.c1 * k * self.horizon as f64);
        let hi = 1.0 / (1.0 + self.c2 * k * t as f64);
        (lo, hi)
    }

    pub fn rate(&self, t: u64) -> Result<f64> {
        if t == 0 || t > self.horizon {
            return Err(Error::Precondition(format!(
                "iteration {t} outside 1..={}",
                self.horizon
            )));
        }
        let k = self.scale();
        Ok(match self.kind {
            ScheduleKind::LinearlyRescaled => 1.0 / (1.0 + self.c2 * k * t as f64),
            ScheduleKind::Constant => 1.0 / (1.0 + self.c1 * k * self.horizon as f64),
        })
    }
}

pub fn learning_rate(t: u64, schedule: &LearningRateSchedule) -> Result<f64> {
    schedule.rate(t)
}

#[derive(Clone, Debug)]
pub struct QLearningResult {
    /// `Q_T`.
    pub q_final: QFunction,
    /// `π_T`, greedy in `Q_T`.
    pub policy: Policy,
    /// `(t, ‖Q_t - Q*‖∞)` at the checkpoints, when an oracle was supplied.
    pub error_trace: Option<Vec<(u64, f64)>>,
}

/// Powers of two up to `T`, followed by `T` itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |&t| t.checked_mul(2))
        .take_while(|&t| t <= horizon)
        .collect();
    if out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn target_into(
    q: &DVector<f64>,
    next_states: &[usize],
    anchors: &AnchorSet,
    reward: &DVector<f64>,
    discount: f64,
    num_actions: usize,
    q_k: &mut DVector<f64>,
    out: &mut DVector<f64>,
) {
    for (slot, &s) in q_k.iter_mut().zip(next_states) {
        *slot = q
            .rows(s * num_actions, num_actions)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
    }
    out.gemv(discount, anchors.coefficients(), q_k, 0.0);
    *out += reward;
}

/// `T_K^(t)(Q)` for a one-hot empirical kernel.
pub fn empirical_bellman_apply(
    q: &QFunction,
    one_hot: &EmpiricalKernel,
    anchors: &AnchorSet,
    reward: &DVector<f64>,
    discount: f64,
) -> Result<QFunction> {
    let next = one_hot
        .one_hot_states()
        .ok_or_else(|| Error::Precondition("kernel rows are not one-hot".into()))?;
    if next.len() != anchors.len() {
        return Err(Error::Dimension {
            what: "one-hot anchor rows",
            expected: anchors.len(),
            got: next.len(),
        });
    }
    if reward.len() != q.values().len() || anchors.coefficients().nrows() != q.values().len() {
        return Err(Error::Dimension {
            what: "Q-function length",
            expected: reward.len(),
            got: q.values().len(),
        });
    }
    let mut q_k = DVector::zeros(anchors.len());
    let mut out = DVector::zeros(reward.len());
    target_into(
        q.values(),
        &next,
        anchors,
        reward,
        discount,
        q.num_actions(),
        &mut q_k,
        &mut out,
    );
    QFunction::new(out, q.num_actions())
}

/// Runs `T = schedule.horizon()` iterations from `q0`.
pub fn run_q_learning(
    mdp: &TabularMdp,
    anchors: &AnchorSet,
    schedule: &LearningRateSchedule,
    q0: QFunction,
    seed: u64,
    oracle_q_star: Option<&QFunction>,
) -> Result<QLearningResult> {
    let checkpoints = default_checkpoints(schedule.horizon());
    run_q_learning_at(
        mdp,
        anchors,
        schedule,
        q0,
        seed,
        oracle_q_star,
        &checkpoints,
    )
}

/// As [`run_q_learning`] with explicit checkpoints for the error trace.
pub fn run_q_learning_at(
    mdp: &TabularMdp,
    anchors: &AnchorSet,
    schedule: &LearningRateSchedule,
    q0: QFunction,
    seed: u64,
    oracle_q_star: Option<&QFunction>,
    checkpoints: &[u64],
) -> Result<QLearningResult> {
    let pairs = mdp.num_pairs();
    let num_actions = mdp.num_actions();
    if q0.values().len() != pairs || q0.num_actions() != num_actions {
        return Err(Error::Dimension {
            what: "initial Q-function",
            expected: pairs,
            got: q0.values().len(),
        });
    }
    if let Some(oracle) = oracle_q_star {
        if oracle.values().len() != pairs {
            return Err(Error::Dimension {
                what: "oracle Q-function",
                expected: pairs,
                got: oracle.values().len(),
            });
        }
    }
    if anchors.coefficients().nrows() != pairs {
        return Err(Error::Dimension {
            what: "anchor coefficient rows",
            expected: pairs,
            got: anchors.coefficients().nrows(),
        });
    }
    let upper = mdp.horizon();
    if q0.values().iter().any(|&x| !(0.0..=upper).contains(&x)) {
        return Err(Error::Precondition(format!(
            "initial Q-values must lie in [0, {upper}]"
        )));
    }

    let horizon = schedule.horizon();
    let discount = mdp.discount();
    let reward = mdp.reward();
    let mut sampler = AnchorSampler::new(mdp, anchors, seed)?;
    let mut next_states = vec![0usize; anchors.len()];
    let mut q_k = DVector::zeros(anchors.len());
    let mut target = DVector::zeros(pairs);
    let mut q = q0.into_values();
    let mut trace = oracle_q_star.map(|_| Vec::new());
    let mut marks = checkpoints.iter().copied().peekable();

    for t in 1..=horizon {
        let eta = schedule.rate(t)?;
        sampler.draw_next(&mut next_states);
        target_into(
            &q,
            &next_states,
            anchors,
            reward,
            discount,
            num_actions,
            &mut q_k,
            &mut target,
        );
        for (x, &y) in q.iter_mut().zip(target.iter()) {
            // convex combination of values in [0, 1/(1-γ)]; clamp only absorbs rounding
            *x = ((1.0 - eta) * *x + eta * y).clamp(0.0, upper);
        }
        while marks.peek().is_some_and(|&m| m < t) {
            marks.next();
        }
        if marks.peek() == Some(&t) {
            marks.next();
            if let (Some(trace), Some(oracle)) = (trace.as_mut(), oracle_q_star) {
                trace.push((t, crate::mdp::sup_distance(&q, oracle.values())));
            }
        }
    }

    let q_final = QFunction::new(q, num_actions)?;
    Ok(QLearningResult {
        policy: greedy_policy(&q_final),
        q_final,
        error_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_anchor_set, random_simplex_model, tabular_embedding};
    use crate::mdp::{bellman_operator, optimal_q};
    use crate::sampling::one_hot_batch;
    use nalgebra::DMatrix;

    #[test]
    fn constant_schedule_value() {
        let s = LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 1.0, 1000, 0.9).unwrap();
        // 1 / (1 + 0.1 * 1000 / ln(1000)^2), evaluated independently
        let expected = 0.32303022796723546;
        for t in [1, 17, 500, 1000] {
            assert!((s.rate(t).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rescaled_starts_near_one() {
        let s = LearningRateSchedule::new(ScheduleKind::LinearlyRescaled, 1e-6, 1e-6, 1000, 0.9)
            .unwrap();
        assert!((s.rate(1).unwrap() - 1.0).abs() < 1e-7);
        let s =
            LearningRateSchedule::new(ScheduleKind::LinearlyRescaled, 1.0, 1.0, 1000, 0.9).unwrap();
        assert!(s.rate(2).unwrap() < s.rate(1).unwrap());
    }

    #[test]
    fn schedule_preconditions() {
        assert!(LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 1.0, 1, 0.9).is_err());
        assert!(LearningRateSchedule::new(ScheduleKind::Constant, 0.5, 1.0, 10, 0.9).is_err());
        assert!(LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 0.0, 10, 0.9).is_err());
        let s = LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 1.0, 10, 0.9).unwrap();
        assert!(s.rate(0).is_err());
        assert!(s.rate(11).is_err());
    }

    #[test]
    fn rates_sit_inside_band() {
        for kind in [ScheduleKind::Constant, ScheduleKind::LinearlyRescaled] {
            let s = LearningRateSchedule::new(kind, 2.0, 0.5, 5000, 0.95).unwrap();
            for t in (1..=5000).step_by(37) {
                let (lo, hi) = s.bounds(t);
                let eta = s.rate(t).unwrap();
                assert!(lo <= eta && eta <= hi && eta > 0.0 && eta <= 1.0);
            }
        }
    }

    #[test]
    fn checkpoints_layout() {
        assert_eq!(default_checkpoints(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(default_checkpoints(8), vec![1, 2, 4, 8]);
    }

    fn one_state(gamma: f64) -> (TabularMdp, AnchorSet) {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            gamma,
        )
        .unwrap();
        let anchors = build_anchor_set(&tabular_embedding(&mdp), &[0]).unwrap();
        (mdp, anchors)
    }

    #[test]
    fn one_state_follows_deterministic_recursion() {
        let (mdp, anchors) = one_state(0.9);
        let s = LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 1.0, 500, 0.9).unwrap();
        let eta = s.rate(1).unwrap();
        let res = run_q_learning(&mdp, &anchors, &s, QFunction::zeros(1, 1), 3, None).unwrap();
        let mut x = 0.0;
        for _ in 0..500 {
            x = (1.0 - eta) * x + eta * (1.0 + 0.9 * x);
        }
        assert!((res.q_final.values()[0] - x).abs() < 1e-12);
        assert!((x - 10.0).abs() < 1e-3);
        assert!(res.error_trace.is_none());
    }

    #[test]
    fn fixed_point_is_preserved_on_deterministic_mdp() {
        // deterministic cycle over three states, two actions
        let mut p = DMatrix::zeros(6, 3);
        for s in 0..3 {
            p[(2 * s, (s + 1) % 3)] = 1.0;
            p[(2 * s + 1, s)] = 1.0;
        }
        let r = DVector::from_vec(vec![0.1, 0.5, 0.9, 0.2, 0.3, 0.7]);
        let mdp = TabularMdp::new(3, 2, p, r, 0.8).unwrap();
        let anchors =
            build_anchor_set(&tabular_embedding(&mdp), &(0..6).collect::<Vec<_>>()).unwrap();
        let q_star = optimal_q(&mdp, 1e-13).unwrap();
        let s =
            LearningRateSchedule::new(ScheduleKind::LinearlyRescaled, 1.0, 1.0, 200, 0.8).unwrap();
        let res = run_q_learning(&mdp, &anchors, &s, q_star.clone(), 1, Some(&q_star)).unwrap();
        assert!(res.q_final.sup_distance(&q_star) < 1e-11);
        let trace = res.error_trace.unwrap();
        assert!(trace.iter().all(|&(_, e)| e < 1e-11));
        assert_eq!(trace.last().unwrap().0, 200);
    }

    #[test]
    fn deterministic_empirical_operator_is_exact() {
        let mut p = DMatrix::zeros(4, 2);
        p[(0, 1)] = 1.0;
        p[(1, 0)] = 1.0;
        p[(2, 1)] = 1.0;
        p[(3, 0)] = 1.0;
        let mdp =
            TabularMdp::new(2, 2, p, DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]), 0.9).unwrap();
        let anchors = build_anchor_set(&tabular_embedding(&mdp), &[0, 1, 2, 3]).unwrap();
        let q = QFunction::new(DVector::from_vec(vec![1.0, 4.0, 2.0, 3.0]), 2).unwrap();
        let kernel = one_hot_batch(&mdp, &anchors, 9, 0).unwrap();
        let got = empirical_bellman_apply(&q, &kernel, &anchors, mdp.reward(), 0.9).unwrap();
        let want = bellman_operator(&q, &mdp).unwrap();
        assert!(got.sup_distance(&want) < 1e-15);

        let zero = QFunction::zeros(2, 2);
        let got = empirical_bellman_apply(&zero, &kernel, &anchors, mdp.reward(), 0.9).unwrap();
        assert_eq!(got.values(), mdp.reward());
    }

    #[test]
    fn non_one_hot_kernel_rejected() {
        let (lin, anchors) = random_simplex_model(10, 2, 3, 1).unwrap();
        let kernel = EmpiricalKernel::exact(lin.base(), &anchors).unwrap();
        let q = QFunction::zeros(10, 2);
        assert!(matches!(
            empirical_bellman_apply(&q, &kernel, &anchors, lin.base().reward(), 0.9),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn invalid_initialisation_rejected() {
        let (lin, anchors) = random_simplex_model(10, 2, 3, 1).unwrap();
        let s = LearningRateSchedule::new(ScheduleKind::Constant, 1.0, 1.0, 10, 0.9).unwrap();
        let q0 = QFunction::new(DVector::from_element(20, 11.0), 2).unwrap();
        assert!(run_q_learning(lin.base(), &anchors, &s, q0, 0, None).is_err());
        let q0 = QFunction::new(DVector::from_element(20, -0.5), 2).unwrap();
        assert!(run_q_learning(lin.base(), &anchors, &s, q0, 0, None).is_err());
    }

    #[test]
    fn seeded_runs_repeat() {
        let (lin, anchors) = random_simplex_model(20, 3, 4, 2).unwrap();
        let s =
            LearningRateSchedule::new(ScheduleKind::LinearlyRescaled, 1.0, 1.0, 2000, 0.9).unwrap();
        let a = run_q_learning(lin.base(), &anchors, &s, QFunction::zeros(20, 3), 5, None).unwrap();
        let b = run_q_learning(lin.base(), &anchors, &s, QFunction::zeros(20, 3), 5, None).unwrap();
        assert_eq!(a.q_final, b.q_final);
    }
}
