//! Generative-model access at the anchor pairs and the empirical kernel
//! `P̂ = Λ P̂_K`.
//!
//! Randomness comes from ChaCha8 keyed by the base seed. Anchor `i` reads
//! the ChaCha stream with id `i`, and its `j`-th draw is the `j`-th 64-bit
//! word of that stream. A draw is therefore addressed by
//! `(seed, anchor, j)` alone, independent of how anchors are scheduled
//! across threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linear::AnchorSet;
use crate::mdp::{Dynamics, TabularMdp, ROW_SUM_TOL};

/// Keyed source of per-anchor sample streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleStream {
    seed: u64,
}

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for anchor `anchor`, positioned before draw `draw_index`.
    pub fn anchor_rng(&self, anchor: usize, draw_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(anchor as u64);
        // one draw consumes two 32-bit words
        rng.set_word_pos(2 * draw_index as u128);
        rng
    }
}

/// Maps 64 random bits to `[0, 1)` using the top 53 bits.
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF sampler over the support of one kernel row.
#[derive(Clone, Debug)]
pub struct Categorical {
    support: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn from_row<I: IntoIterator<Item = f64>>(row: I) -> Result<Self> {
        let mut support = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (s, p) in row.into_iter().enumerate() {
            if p > 0.0 && acc + p > acc {
                acc += p;
                support.push(s);
                cumulative.push(acc);
            }
        }
        match cumulative.last_mut() {
            Some(last) => *last = 1.0,
            None => return Err(Error::InvalidMdp("kernel row has no support".into())),
        }
        Ok(Self {
            support,
            cumulative,
        })
    }

    /// Outcome for a uniform `u ∈ [0, 1)`.
    pub fn draw(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)]
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> usize {
        self.draw(unit_interval(rng.next_u64()))
    }
}

fn anchor_samplers(mdp: &TabularMdp, anchors: &AnchorSet) -> Result<Vec<Categorical>> {
    anchors
        .pairs()
        .iter()
        .map(|&pair| {
            if pair >= mdp.num_pairs() {
                return Err(Error::Precondition(format!(
                    "anchor pair {pair} out of range"
                )));
            }
            Categorical::from_row(mdp.transition().row(pair).iter().copied())
        })
        .collect()
}

/// One next state per anchor per call, drawn sequentially from each anchor's stream.
pub struct AnchorSampler {
    rows: Vec<Categorical>,
    rngs: Vec<ChaCha8Rng>,
}

impl AnchorSampler {
    pub fn new(mdp: &TabularMdp, anchors: &AnchorSet, seed: u64) -> Result<Self> {
        Self::starting_at(mdp, anchors, seed, 0)
    }

    pub fn starting_at(
        mdp: &TabularMdp,
        anchors: &AnchorSet,
        seed: u64,
        draw_index: u64,
    ) -> Result<Self> {
        let rows = anchor_samplers(mdp, anchors)?;
        let stream = SampleStream::new(seed);
        let rngs = (0..rows.len())
            .map(|i| stream.anchor_rng(i, draw_index))
            .collect();
        Ok(Self { rows, rngs })
    }

    pub fn num_anchors(&self) -> usize {
        self.rows.len()
    }

    /// Writes the next draw of every anchor into `out`.
    pub fn draw_next(&mut self, out: &mut [usize]) {
        for ((row, rng), slot) in self
            .rows
            .iter()
            .zip(self.rngs.iter_mut())
            .zip(out.iter_mut())
        {
            *slot = row.sample(rng);
        }
    }
}

/// Next-state counts from `N` generative-model draws at each anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    counts: Vec<u64>,
    num_states: usize,
    per_anchor: u64,
    seed: u64,
}

impl SampleBatch {
    /// Wraps raw counts without checking row sums; [`empirical_kernel`] checks them.
    pub fn from_counts(rows: Vec<Vec<u64>>, per_anchor: u64, seed: u64) -> Result<Self> {
        let num_states = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != num_states) {
            return Err(Error::Dimension {
                what: "count row",
                expected: num_states,
                got: bad.len(),
            });
        }
        Ok(Self {
            counts: rows.into_iter().flatten().collect(),
            num_states,
            per_anchor,
            seed,
        })
    }

    pub fn num_anchors(&self) -> usize {
        self.counts.len().checked_div(self.num_states).unwrap_or(0)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn per_anchor(&self) -> u64 {
        self.per_anchor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self, anchor: usize) -> &[u64] {
        &self.counts[anchor * self.num_states..(anchor + 1) * self.num_states]
    }

    /// Total draws, `N·K`.
    pub fn sample_count(&self) -> u64 {
        self.per_anchor * self.num_anchors() as u64
    }

    /// Writes `anchor_index,state,count` rows for every nonzero count.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["anchor_index", "state", "count"])?;
        for i in 0..self.num_anchors() {
            for (s, &c) in self.counts(i).iter().enumerate().filter(|(_, &c)| c > 0) {
                out.write_record(&[i.to_string(), s.to_string(), c.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Draws `n` next states at every anchor.
pub fn sample_anchor_transitions(
    mdp: &TabularMdp,
    anchors: &AnchorSet,
    n: u64,
    seed: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Precondition(
            "at least one sample per anchor is required".into(),
        ));
    }
    let rows = anchor_samplers(mdp, anchors)?;
    let stream = SampleStream::new(seed);
    let num_states = mdp.num_states();
    let counts: Vec<Vec<u64>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = stream.anchor_rng(i, 0);
            let mut counts = vec![0u64; num_states];
            for _ in 0..n {
                counts[row.sample(&mut rng)] += 1;
            }
            counts
        })
        .collect();
    SampleBatch::from_counts(counts, n, seed)
}

/// `P̂_K` together with `Λ`; `P̂ = Λ P̂_K` is applied lazily.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalKernel {
    anchor_rows: DMatrix<f64>,
    coefficients: DMatrix<f64>,
    num_actions: usize,
}

impl EmpiricalKernel {
    /// Builds the kernel from explicit anchor rows, which must be distributions.
    pub fn from_anchor_rows(anchor_rows: DMatrix<f64>, anchors: &AnchorSet) -> Result<Self> {
        if anchor_rows.nrows() != anchors.len() {
            return Err(Error::Dimension {
                what: "anchor rows",
                expected: anchors.len(),
                got: anchor_rows.nrows(),
            });
        }
        let num_states = anchor_rows.ncols();
        let pairs = anchors.coefficients().nrows();
        if num_states == 0 || !pairs.is_multiple_of(num_states) {
            return Err(Error::Dimension {
                what: "state count dividing the pair count",
                expected: num_states,
                got: pairs,
            });
        }
        for i in 0..anchor_rows.nrows() {
            let row = anchor_rows.row(i);
            if row.min() < 0.0 || (row.sum() - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!(
                    "empirical row {i} is not a distribution"
                )));
            }
        }
        Ok(Self {
            anchor_rows,
            coefficients: anchors.coefficients().clone(),
            num_actions: pairs / num_states,
        })
    }

    /// The exact anchor rows `P_K`, standing in for infinitely many samples.
    /// Test hook: `P̂` then equals `Λ P_K = P`.
    pub fn exact(mdp: &TabularMdp, anchors: &AnchorSet) -> Result<Self> {
        Self::from_anchor_rows(anchors.anchor_rows(mdp.transition()), anchors)
    }

    /// `P̂_K`.
    pub fn anchor_rows(&self) -> &DMatrix<f64> {
        &self.anchor_rows
    }

    /// Materialises `P̂ = Λ P̂_K`.
    pub fn full(&self) -> DMatrix<f64> {
        &self.coefficients * &self.anchor_rows
    }

    /// The sampled next state of each anchor when every row is one-hot.
    pub fn one_hot_states(&self) -> Option<Vec<usize>> {
        (0..self.anchor_rows.nrows())
            .map(|i| {
                let row = self.anchor_rows.row(i);
                let mut hit = None;
                for (s, &p) in row.iter().enumerate() {
                    match p {
                        0.0 => {}
                        1.0 if hit.is_none() => hit = Some(s),
                        _ => return None,
                    }
                }
                hit
            })
            .collect()
    }
}

impl Dynamics for EmpiricalKernel {
    fn num_states(&self) -> usize {
        self.anchor_rows.ncols()
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn expect(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.coefficients * (&self.anchor_rows * values)
    }
}

/// `P̂_K = counts / N` mixed through `Λ`.
pub fn empirical_kernel(batch: &SampleBatch, anchors: &AnchorSet) -> Result<EmpiricalKernel> {
    if batch.num_anchors() != anchors.len() {
        return Err(Error::Dimension {
            what: "batch anchors",
            expected: anchors.len(),
            got: batch.num_anchors(),
        });
    }
    let n = batch.per_anchor();
    if n == 0 {
        return Err(Error::Precondition(
            "batch holds zero samples per anchor".into(),
        ));
    }
    let mut rows = DMatrix::<f64>::zeros(batch.num_anchors(), batch.num_states());
    for i in 0..batch.num_anchors() {
        let counts = batch.counts(i);
        let total: u64 = counts.iter().sum();
        if total != n {
            return Err(Error::CorruptedBatch {
                anchor: i,
                got: total,
                expected: n,
            });
        }
        for (s, &c) in counts.iter().enumerate() {
            rows[(i, s)] = c as f64 / n as f64;
        }
    }
    EmpiricalKernel::from_anchor_rows(rows, anchors)
}

/// One fresh draw per anchor, as one-hot rows `P̂_K^(t)`.
///
/// `draw_index` addresses the draw within each anchor stream; iteration `t`
/// of Q-learning uses `draw_index = t - 1`.
pub fn one_hot_batch(
    mdp: &TabularMdp,
    anchors: &AnchorSet,
    seed: u64,
    draw_index: u64,
) -> Result<EmpiricalKernel> {
    let mut sampler = AnchorSampler::starting_at(mdp, anchors, seed, draw_index)?;
    let mut next = vec![0; anchors.len()];
    sampler.draw_next(&mut next);
    let mut rows = DMatrix::<f64>::zeros(anchors.len(), mdp.num_states());
    for (i, &s) in next.iter().enumerate() {
        rows[(i, s)] = 1.0;
    }
    EmpiricalKernel::from_anchor_rows(rows, anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_anchor_set, random_simplex_model, tabular_embedding};
    use crate::mdp::random_tabular_mdp;

    fn coin_mdp() -> (TabularMdp, AnchorSet) {
        // state 0: fair coin; state 1: point mass at state 1
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let mdp = TabularMdp::new(2, 1, p, DVector::zeros(2), 0.9).unwrap();
        let anchors = build_anchor_set(&tabular_embedding(&mdp), &[0, 1]).unwrap();
        (mdp, anchors)
    }

    #[test]
    fn categorical_edges() {
        let c = Categorical::from_row([0.0, 0.25, 0.0, 0.75]).unwrap();
        assert_eq!(c.draw(0.0), 1);
        assert_eq!(c.draw(0.2499), 1);
        assert_eq!(c.draw(0.25), 3);
        assert_eq!(c.draw(1.0 - f64::EPSILON), 3);
        assert!(Categorical::from_row([0.0, 0.0]).is_err());
        assert!(unit_interval(u64::MAX) < 1.0);
    }

    #[test]
    fn point_mass_concentrates() {
        let (mdp, anchors) = coin_mdp();
        for seed in 0..5 {
            let batch = sample_anchor_transitions(&mdp, &anchors, 37, seed).unwrap();
            assert_eq!(batch.counts(1), &[0, 37]);
            assert_eq!(batch.counts(0).iter().sum::<u64>(), 37);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let (mdp, anchors) = coin_mdp();
        assert!(matches!(
            sample_anchor_transitions(&mdp, &anchors, 0, 1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn fair_coin_frequency() {
        let (mdp, anchors) = coin_mdp();
        let n = 1_000_000;
        let batch = sample_anchor_transitions(&mdp, &anchors, n, 2024).unwrap();
        let freq = batch.counts(0)[0] as f64 / n as f64;
        // 4σ with σ = 0.5/√N = 5e-4
        assert!((freq - 0.5).abs() <= 0.002, "{freq}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let (lin, anchors) = random_simplex_model(30, 3, 5, 9).unwrap();
        let a = sample_anchor_transitions(lin.base(), &anchors, 500, 77).unwrap();
        let b = sample_anchor_transitions(lin.base(), &anchors, 500, 77).unwrap();
        assert_eq!(a, b);
        let c = sample_anchor_transitions(lin.base(), &anchors, 500, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequential_and_addressed_draws_agree() {
        let (lin, anchors) = random_simplex_model(30, 3, 5, 9).unwrap();
        let mut seq = AnchorSampler::new(lin.base(), &anchors, 5).unwrap();
        let mut draws = vec![0; 5];
        for t in 0..20u64 {
            seq.draw_next(&mut draws);
            let kernel = one_hot_batch(lin.base(), &anchors, 5, t).unwrap();
            assert_eq!(kernel.one_hot_states().unwrap(), draws);
        }
    }

    #[test]
    fn identity_coefficients_give_anchor_rows() {
        let mdp = random_tabular_mdp(4, 2, 0.9, 1.0, 1).unwrap();
        let anchors =
            build_anchor_set(&tabular_embedding(&mdp), &(0..8).collect::<Vec<_>>()).unwrap();
        let batch = sample_anchor_transitions(&mdp, &anchors, 64, 3).unwrap();
        let kernel = empirical_kernel(&batch, &anchors).unwrap();
        assert_eq!(&kernel.full(), kernel.anchor_rows());
    }

    #[test]
    fn exact_counts_recover_kernel() {
        // rows with quarter probabilities are representable with N = 4
        let p = DMatrix::from_row_slice(4, 2, &[0.25, 0.75, 0.5, 0.5, 0.375, 0.625, 0.25, 0.75]);
        let phi = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 0.0]);
        let psi = p.rows(0, 2).into_owned();
        let mdp = TabularMdp::new(2, 2, p.clone(), DVector::zeros(4), 0.9).unwrap();
        let lin = crate::linear::LinearMdp::new(mdp, phi, psi).unwrap();
        let anchors = build_anchor_set(&lin, &[0, 1]).unwrap();
        let batch = SampleBatch::from_counts(vec![vec![1, 3], vec![2, 2]], 4, 0).unwrap();
        let kernel = empirical_kernel(&batch, &anchors).unwrap();
        assert!((kernel.full() - p).amax() < 1e-15);
    }

    #[test]
    fn two_anchor_mixture() {
        let phi = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.4, 0.6, 0.5, 0.5]);
        let psi = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let lin =
            crate::linear::LinearMdp::from_factors(2, 2, phi, psi, DVector::zeros(4), 0.9).unwrap();
        let anchors = build_anchor_set(&lin, &[0, 1]).unwrap();
        let kernel = EmpiricalKernel::from_anchor_rows(DMatrix::identity(2, 2), &anchors).unwrap();
        let full = kernel.full();
        assert!((full[(2, 0)] - 0.4).abs() < 1e-15);
        assert!((full[(2, 1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn corrupted_batch_rejected() {
        let (_, anchors) = coin_mdp();
        let batch = SampleBatch::from_counts(vec![vec![3, 1], vec![0, 3]], 4, 0).unwrap();
        assert!(matches!(
            empirical_kernel(&batch, &anchors),
            Err(Error::CorruptedBatch {
                anchor: 1,
                got: 3,
                expected: 4
            })
        ));
    }

    #[test]
    fn one_hot_rows() {
        let (lin, anchors) = random_simplex_model(25, 2, 4, 2).unwrap();
        for t in 0..10 {
            let k = one_hot_batch(lin.base(), &anchors, 11, t).unwrap();
            for i in 0..4 {
                let row = k.anchor_rows().row(i);
                assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
                assert_eq!(row.sum(), 1.0);
            }
            let full = k.full();
            for sa in 0..50 {
                assert!((full.row(sa).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_dump() {
        let (mdp, anchors) = coin_mdp();
        let batch = sample_anchor_transitions(&mdp, &anchors, 10, 4).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("anchor_index,state,count\n"));
        assert!(text.contains("1,1,10\n"));
    }
}
