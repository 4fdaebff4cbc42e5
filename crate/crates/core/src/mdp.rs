//! Finite discounted MDPs: containers, Bellman operators, exact policy
//! evaluation and value iteration.
//!
//! State-action pairs are flattened as `s * num_actions + a`. Every dense
//! table in the crate follows that layout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, P, r, γ)` with a dense kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    discount: f64,
}

impl TabularMdp {
    /// Builds a validated MDP. `transition` has one row per state-action pair.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp(
                "state and action counts must be positive".into(),
            ));
        }
        let pairs = num_states * num_actions;
        check_dim("transition rows", pairs, transition.nrows())?;
        check_dim("transition columns", num_states, transition.ncols())?;
        check_dim("reward", pairs, reward.len())?;
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidMdp(format!(
                "discount {discount} outside (0, 1)"
            )));
        }
        for (i, &r) in reward.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidMdp(format!(
                    "reward {r} at pair {i} outside [0, 1]"
                )));
            }
        }
        for i in 0..pairs {
            let row = transition.row(i);
            let mut sum = 0.0;
            for &p in row.iter() {
                if !(p >= 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "negative probability {p} in row {i}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Upper end of the value range, `1 / (1 - γ)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn pair(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    /// Same MDP with a different kernel; the new kernel is validated.
    pub fn with_transition(&self, transition: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            transition,
            self.reward.clone(),
            self.discount,
        )
    }
}

/// Expected next-state values `P·v` for every state-action pair.
///
/// Implemented by the dense kernel of [`TabularMdp`] and by the factored
/// empirical kernel used in model-based planning.
pub trait Dynamics {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn expect(&self, values: &DVector<f64>) -> DVector<f64>;
}

impl Dynamics for TabularMdp {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn expect(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.transition * values
    }
}

/// Action-value table over `S × A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    values: DVector<f64>,
    num_actions: usize,
}

impl QFunction {
    pub fn new(values: DVector<f64>, num_actions: usize) -> Result<Self> {
        if num_actions == 0 || !values.len().is_multiple_of(num_actions) {
            return Err(Error::Dimension {
                what: "Q-function length (multiple of action count)",
                expected: num_actions.max(1) * (values.len() / num_actions.max(1)),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            num_actions,
        })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            values: DVector::zeros(num_states * num_actions),
            num_actions,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn state_values(&self) -> ValueFunction {
        ValueFunction(max_per_state(&self.values, self.num_actions))
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &QFunction) -> f64 {
        sup_distance(&self.values, &other.values)
    }

    fn check_shape(&self, num_states: usize, num_actions: usize) -> Result<()> {
        check_dim("Q-function actions", num_actions, self.num_actions)?;
        check_dim(
            "Q-function length",
            num_states * num_actions,
            self.values.len(),
        )
    }
}

/// State-value vector over `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub DVector<f64>);

impl ValueFunction {
    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.0, &other.0)
    }
}

/// Deterministic policy: one action index per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some((s, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= num_actions) {
            return Err(Error::Precondition(format!(
                "policy picks action {a} at state {s}, only {num_actions} actions exist"
            )));
        }
        Ok(Self(actions))
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        check_dim("policy length", mdp.num_states, self.0.len())?;
        Policy::new(self.0.clone(), mdp.num_actions).map(|_| ())
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub fn sup_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub(crate) fn max_per_state(q: &DVector<f64>, num_actions: usize) -> DVector<f64> {
    let num_states = q.len() / num_actions;
    DVector::from_iterator(
        num_states,
        (0..num_states).map(|s| {
            q.rows(s * num_actions, num_actions)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        }),
    )
}

/// Applies `r + γ·E[max_a' Q(s', a')]` through any [`Dynamics`].
pub fn bellman_apply<D: Dynamics + ?Sized>(
    q: &DVector<f64>,
    dynamics: &D,
    reward: &DVector<f64>,
    discount: f64,
) -> DVector<f64> {
    let v = max_per_state(q, dynamics.num_actions());
    let mut next = dynamics.expect(&v);
    next *= discount;
    next += reward;
    next
}

/// The Bellman optimality operator of `mdp`, computed exactly from its kernel.
pub fn bellman_operator(q: &QFunction, mdp: &TabularMdp) -> Result<QFunction> {
    q.check_shape(mdp.num_states, mdp.num_actions)?;
    Ok(QFunction {
        values: bellman_apply(&q.values, mdp, &mdp.reward, mdp.discount),
        num_actions: mdp.num_actions,
    })
}

/// Greedy policy of `q`, ties broken towards the lowest action index.
pub fn greedy_policy(q: &QFunction) -> Policy {
    let a_count = q.num_actions;
    let actions = (0..q.num_states())
        .map(|s| {
            let row = q.values.rows(s * a_count, a_count);
            let mut best = 0;
            for a in 1..a_count {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy(actions)
}

/// `V^π(s) = Q(s, π(s))`.
pub fn policy_values(q: &QFunction, policy: &Policy) -> ValueFunction {
    ValueFunction(DVector::from_iterator(
        policy.0.len(),
        policy.0.iter().enumerate().map(|(s, &a)| q.get(s, a)),
    ))
}

/// Solves `Q^π = r + γ P^π Q^π` exactly.
///
/// The `|S|`-sized system `(I - γ P_π) V = r_π` is solved by LU and lifted to
/// `Q = r + γ P V`.
pub fn exact_q_for_policy(mdp: &TabularMdp, policy: &Policy) -> Result<QFunction> {
    policy.check(mdp)?;
    let n = mdp.num_states;
    let gamma = mdp.discount;
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        let sa = mdp.pair(s, policy.0[s]);
        rhs[s] = mdp.reward[sa];
        for t in 0..n {
            system[(s, t)] -= gamma * mdp.transition[(sa, t)];
        }
    }
    let v = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    let mut values = mdp.expect(&v);
    values *= gamma;
    values += &mdp.reward;
    let q = QFunction {
        values,
        num_actions: mdp.num_actions,
    };

    let v_q = policy_values(&q, policy);
    let mut check = mdp.expect(&v_q.0);
    check *= gamma;
    check += &mdp.reward;
    let residual = sup_distance(&check, &q.values);
    if residual > 1e-10 * mdp.horizon() {
        return Err(Error::Numerical(format!(
            "policy evaluation residual {residual:.3e} too large"
        )));
    }
    Ok(q)
}

/// Output of value iteration.
#[derive(Clone, Debug)]
pub struct PlannerOutput {
    pub q: QFunction,
    pub iterations: usize,
    /// Last successive difference `‖Q_k - Q_{k-1}‖∞`.
    pub residual: f64,
    discount: f64,
}

impl PlannerOutput {
    /// A-posteriori bound on `‖Q_k - Q*‖∞`.
    pub fn certified_error(&self) -> f64 {
        let g = self.discount;
        let a_posteriori = g * self.residual / (1.0 - g);
        let a_priori = g.powi(self.iterations as i32) / (1.0 - g);
        a_posteriori.min(a_priori)
    }
}

/// Number of sweeps after which `γ^k / (1-γ)` drops below the stopping threshold.
pub fn iteration_cap(discount: f64, tol: f64) -> usize {
    let threshold = tol * (1.0 - discount) / (2.0 * discount);
    let ratio = (1.0 / (1.0 - discount)) / threshold;
    (ratio.ln() / (1.0 / discount).ln()).ceil().max(0.0) as usize + 1
}

/// Q-value iteration from `Q_0 = 0` until `‖Q_{k+1} - Q_k‖∞ ≤ tol(1-γ)/(2γ)`.
///
/// The sweep count is also capped by [`iteration_cap`], where the a-priori
/// bound alone already certifies `tol`.
pub fn value_iteration<D: Dynamics + ?Sized>(
    dynamics: &D,
    reward: &DVector<f64>,
    discount: f64,
    tol: f64,
) -> Result<PlannerOutput> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let pairs = dynamics.num_states() * dynamics.num_actions();
    check_dim("reward", pairs, reward.len())?;
    let threshold = tol * (1.0 - discount) / (2.0 * discount);
    let cap = iteration_cap(discount, tol);

    let mut q = DVector::<f64>::zeros(pairs);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < cap {
        let next = bellman_apply(&q, dynamics, reward, discount);
        residual = sup_distance(&next, &q);
        q = next;
        iterations += 1;
        if residual <= threshold {
            break;
        }
    }
    Ok(PlannerOutput {
        q: QFunction {
            values: q,
            num_actions: dynamics.num_actions(),
        },
        iterations,
        residual,
        discount,
    })
}

/// `Q*` of `mdp` to within `tol` in sup norm.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> Result<QFunction> {
    Ok(value_iteration(mdp, &mdp.reward, mdp.discount, tol)?.q)
}

/// Per-pair variance of `V` under `P(·|s,a)`: `P(V∘V) - (PV)∘(PV)`.
///
/// Evaluated in centred form `Σ p (V - PV)²`, which is nonnegative by
/// construction.
pub fn variance_of_value(mdp: &TabularMdp, v: &ValueFunction) -> Result<DVector<f64>> {
    check_dim("value function", mdp.num_states, v.0.len())?;
    Ok(row_variances(&mdp.transition, &v.0))
}

pub(crate) fn row_variances(p: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mean = p * v;
    let mut out = DVector::<f64>::zeros(p.nrows());
    for j in 0..p.ncols() {
        let col = p.column(j);
        for i in 0..p.nrows() {
            let d = v[j] - mean[i];
            out[i] += col[i] * d * d;
        }
    }
    out
}

/// The `s`-absorbing MDP: every action at `state` self-loops with reward `(1-γ)u`.
pub fn build_absorbing_mdp(mdp: &TabularMdp, state: usize, u: f64) -> Result<TabularMdp> {
    if state >= mdp.num_states {
        return Err(Error::Precondition(format!("state {state} out of range")));
    }
    let r_abs = (1.0 - mdp.discount) * u;
    if !(0.0..=1.0).contains(&r_abs) {
        return Err(Error::Precondition(format!(
            "absorbing value {u} gives reward {r_abs} outside [0, 1]"
        )));
    }
    let mut transition = mdp.transition.clone();
    let mut reward = mdp.reward.clone();
    for a in 0..mdp.num_actions {
        let sa = mdp.pair(state, a);
        transition.row_mut(sa).fill(0.0);
        transition[(sa, state)] = 1.0;
        reward[sa] = r_abs;
    }
    TabularMdp::new(
        mdp.num_states,
        mdp.num_actions,
        transition,
        reward,
        mdp.discount,
    )
}

/// Random MDP with Dirichlet(`concentration`) rows and uniform rewards.
pub fn random_tabular_mdp(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    concentration: f64,
    seed: u64,
) -> Result<TabularMdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = num_states * num_actions;
    let mut transition = DMatrix::<f64>::zeros(pairs, num_states);
    for sa in 0..pairs {
        let row = dirichlet(&mut rng, num_states, concentration)?;
        transition.row_mut(sa).copy_from_slice(&row);
    }
    let reward = DVector::from_fn(pairs, |_, _| rng.random::<f64>());
    TabularMdp::new(num_states, num_actions, transition, reward, discount)
}

/// Symmetric Dirichlet draw via normalised Gamma variates.
pub(crate) fn dirichlet<R: Rng>(rng: &mut R, len: usize, concentration: f64) -> Result<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::Precondition(format!("concentration {concentration}: {e}")))?;
    loop {
        let mut row: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            row.iter_mut().for_each(|x| *x /= sum);
            return Ok(row);
        }
    }
}
