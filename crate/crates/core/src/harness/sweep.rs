use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::{Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::linear::{perturb_model, SimplexModelSpec};
use crate::mdp::QFunction;
use crate::model_based::{evaluate_policy_error_with, oracle_q_star, run_model_based};
use crate::q_learning::{run_q_learning, LearningRateSchedule};

pub const CSV_HEADER: [&str; 11] = [
    "algo", "S", "A", "K", "gamma", "xi", "param", "seed", "error", "samples", "wall_ms",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub algo: Algorithm,
    pub states: usize,
    pub actions: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    pub xi: f64,
    /// `N` for model-based runs, `T` for Q-learning.
    pub param: u64,
    pub seed: u64,
    /// Policy suboptimality (model-based) or `‖Q_T - Q*‖∞` (Q-learning).
    pub error: f64,
    pub samples: u64,
    pub wall_ms: f64,
}

/// Seed of trial `index` under base seed `base` (SplitMix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every (grid value, trial) cell. Records are sorted by `(param, seed)`
/// and written to `config.output` when set.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let (lin, anchors) = SimplexModelSpec::new(
        config.states,
        config.actions,
        config.feature_dim,
        config.seed,
    )
    .with_discount(config.gamma)
    .with_concentration(config.concentration)
    .build()?;
    let xi = config.xi.unwrap_or(0.0);
    let mdp = perturb_model(&lin, xi, derive_seed(config.seed, u64::MAX))?;
    let q_star = oracle_q_star(&mdp)?;
    let k = anchors.len() as u64;

    let cells: Vec<(u64, u64)> = config
        .grid
        .iter()
        .flat_map(|&p| (0..config.trials as u64).map(move |t| (p, derive_seed(config.seed, t))))
        .collect();

    let run_cell = |&(param, seed): &(u64, u64)| -> Result<RunRecord> {
        let start = Instant::now();
        let error = match config.algo {
            Algorithm::ModelBased => {
                let res = run_model_based(&mdp, &anchors, param, config.eps_opt, seed)?;
                evaluate_policy_error_with(&mdp, &q_star, &res.policy)?
            }
            Algorithm::QLearning => {
                let schedule = LearningRateSchedule::new(
                    config.schedule,
                    config.c1,
                    config.c2,
                    param,
                    config.gamma,
                )?;
                let q0 = QFunction::zeros(config.states, config.actions);
                let res = run_q_learning(&mdp, &anchors, &schedule, q0, seed, None)?;
                res.q_final.sup_distance(&q_star)
            }
        };
        Ok(RunRecord {
            algo: config.algo,
            states: config.states,
            actions: config.actions,
            feature_dim: config.feature_dim,
            gamma: config.gamma,
            xi,
            param,
            seed,
            error,
            samples: param * k,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    };

    let mut records = match config.workers {
        Some(1) => cells.iter().map(run_cell).collect::<Result<Vec<_>>>()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?,
        None => cells.par_iter().map(run_cell).collect::<Result<Vec<_>>>()?,
    };
    records.sort_by_key(|r| (r.param, r.seed));

    if let Some(path) = &config.output {
        write_records_csv(std::fs::File::create(path)?, &records)?;
    }
    Ok(records)
}

pub fn write_records_csv<W: Write>(writer: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.algo.to_string(),
            r.states.to_string(),
            r.actions.to_string(),
            r.feature_dim.to_string(),
            r.gamma.to_string(),
            r.xi.to_string(),
            r.param.to_string(),
            r.seed.to_string(),
            format!("{:e}", r.error),
            r.samples.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Config(format!(
            "unexpected CSV header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |j: usize| -> Result<&str> {
            row.get(j).ok_or_else(|| {
                Error::Config(format!(
                    "CSV row {}: missing column {}",
                    i + 2,
                    CSV_HEADER[j]
                ))
            })
        };
        let bad = |j: usize| Error::Config(format!("CSV row {}: bad {}", i + 2, CSV_HEADER[j]));
        macro_rules! num {
            ($j:expr) => {
                field($j)?.parse().map_err(|_| bad($j))?
            };
        }
        out.push(RunRecord {
            algo: field(0)?.parse()?,
            states: num!(1),
            actions: num!(2),
            feature_dim: num!(3),
            gamma: num!(4),
            xi: num!(5),
            param: num!(6),
            seed: num!(7),
            error: num!(8),
            samples: num!(9),
            wall_ms: num!(10),
        });
    }
    Ok(out)
}

impl RunRecord {
    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        read_records_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algo: Algorithm, grid: Vec<u64>) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(8, 2, 3, algo, grid);
        c.trials = 3;
        c.seed = 4;
        c
    }

    #[test]
    fn one_record_per_cell() {
        let mut c = small(Algorithm::ModelBased, vec![64]);
        c.trials = 1;
        assert_eq!(sweep(&c).unwrap().len(), 1);
        let c = small(Algorithm::ModelBased, vec![16, 64, 256]);
        let recs = sweep(&c).unwrap();
        assert_eq!(recs.len(), 9);
        assert!(recs
            .windows(2)
            .all(|w| (w[0].param, w[0].seed) <= (w[1].param, w[1].seed)));
        assert!(recs
            .iter()
            .all(|r| r.error >= -1e-9 && r.samples == r.param * 3));
    }

    #[test]
    fn serial_and_parallel_agree() {
        let mut c = small(Algorithm::QLearning, vec![50, 200]);
        c.workers = Some(1);
        let serial = sweep(&c).unwrap();
        c.workers = Some(3);
        let parallel = sweep(&c).unwrap();
        let strip = |v: &[RunRecord]| {
            v.iter()
                .map(|r| (r.param, r.seed, r.error))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&serial), strip(&parallel));
    }

    #[test]
    fn csv_round_trip() {
        let recs = sweep(&small(Algorithm::ModelBased, vec![32, 64])).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("algo,S,A,K,gamma,xi,param,seed,error,samples,wall_ms\n"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!((a.param, a.seed, a.error), (b.param, b.seed, b.error));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<_> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
    }
}
