use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::q_learning::ScheduleKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    ModelBased,
    QLearning,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model_based" => Ok(Self::ModelBased),
            "q_learning" => Ok(Self::QLearning),
            other => Err(Error::Config(format!("unknown algo `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ModelBased => "model_based",
            Self::QLearning => "q_learning",
        })
    }
}

/// One sweep: a random simplex model (optionally perturbed by `xi`) and a
/// grid of sample sizes `N` (model-based) or horizons `T` (Q-learning).
///
/// The text form is one `key = value` per line, keys named as the fields;
/// `grid` is a comma-separated list.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub states: usize,
    pub actions: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    /// Seeds the model; per-trial seeds are derived from it.
    pub seed: u64,
    pub xi: Option<f64>,
    pub concentration: f64,
    pub algo: Algorithm,
    pub grid: Vec<u64>,
    pub trials: usize,
    pub eps_opt: f64,
    pub schedule: ScheduleKind,
    pub c1: f64,
    pub c2: f64,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(
        states: usize,
        actions: usize,
        feature_dim: usize,
        algo: Algorithm,
        grid: Vec<u64>,
    ) -> Self {
        Self {
            states,
            actions,
            feature_dim,
            gamma: 0.9,
            seed: 0,
            xi: None,
            concentration: 1.0,
            algo,
            grid,
            trials: 1,
            eps_opt: 1e-6,
            schedule: ScheduleKind::LinearlyRescaled,
            c1: 1.0,
            c2: 1.0,
            output: None,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.states == 0 || self.actions == 0 {
            return fail("states and actions must be positive".into());
        }
        if self.feature_dim == 0 || self.feature_dim > self.states * self.actions {
            return fail(format!("feature_dim {} out of range", self.feature_dim));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if let Some(xi) = self.xi {
            if !(0.0..=1.0).contains(&xi) {
                return fail(format!("xi {xi} outside [0, 1]"));
            }
        }
        if !(self.concentration > 0.0) {
            return fail("concentration must be positive".into());
        }
        if self.grid.is_empty() {
            return fail("grid is empty".into());
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return fail("grid must be strictly increasing".into());
        }
        if self.grid[0] == 0 {
            return fail("grid values must be positive".into());
        }
        if self.algo == Algorithm::QLearning && self.grid[0] < 2 {
            return fail("horizons must be at least 2".into());
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(self.eps_opt > 0.0) {
            return fail("eps_opt must be positive".into());
        }
        if !(self.c2 > 0.0 && self.c1 >= self.c2) {
            return fail("schedule constants need c1 >= c2 > 0".into());
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut states = None;
        let mut actions = None;
        let mut feature_dim = None;
        let mut algo = None;
        let mut grid = None;
        let mut cfg = Self::new(0, 0, 0, Algorithm::ModelBased, Vec::new());

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let bad =
                |what: &str| Error::Config(format!("line {}: invalid {what} `{value}`", i + 1));
            match key {
                "states" => states = Some(value.parse().map_err(|_| bad(key))?),
                "actions" => actions = Some(value.parse().map_err(|_| bad(key))?),
                "feature_dim" => feature_dim = Some(value.parse().map_err(|_| bad(key))?),
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "xi" => cfg.xi = Some(value.parse().map_err(|_| bad(key))?),
                "concentration" => cfg.concentration = value.parse().map_err(|_| bad(key))?,
                "algo" => algo = Some(value.parse()?),
                "grid" => {
                    grid = Some(
                        value
                            .split(',')
                            .map(|v| v.trim().parse::<u64>().map_err(|_| bad(key)))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "trials" => cfg.trials = value.parse().map_err(|_| bad(key))?,
                "eps_opt" => cfg.eps_opt = value.parse().map_err(|_| bad(key))?,
                "schedule" => cfg.schedule = value.parse()?,
                "c1" => cfg.c1 = value.parse().map_err(|_| bad(key))?,
                "c2" => cfg.c2 = value.parse().map_err(|_| bad(key))?,
                "output" => cfg.output = Some(PathBuf::from(value)),
                "workers" => cfg.workers = Some(value.parse().map_err(|_| bad(key))?),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{other}`",
                        i + 1
                    )))
                }
            }
        }

        let missing = |k: &str| Error::Config(format!("missing required key `{k}`"));
        cfg.states = states.ok_or_else(|| missing("states"))?;
        cfg.actions = actions.ok_or_else(|| missing("actions"))?;
        cfg.feature_dim = feature_dim.ok_or_else(|| missing("feature_dim"))?;
        cfg.algo = algo.ok_or_else(|| missing("algo"))?;
        cfg.grid = grid.ok_or_else(|| missing("grid"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# model-based rate check
states = 50
actions = 3
feature_dim = 5
gamma = 0.9
seed = 7
algo = model_based
grid = 256, 512, 1024
trials = 4   # per cell
";

    #[test]
    fn parses_sample() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.states, 50);
        assert_eq!(c.grid, vec![256, 512, 1024]);
        assert_eq!(c.trials, 4);
        assert_eq!(c.algo, Algorithm::ModelBased);
        assert_eq!(c.xi, None);
        assert_eq!(c.schedule, ScheduleKind::LinearlyRescaled);
    }

    #[test]
    fn rejects_unsorted_grid() {
        let text = SAMPLE.replace("256, 512, 1024", "512, 256");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(Error::Config(_))
        ));
        let text = SAMPLE.replace("256, 512, 1024", "256, 256");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn rejects_zero_trials_and_unknown_keys() {
        assert!(ExperimentConfig::parse(&SAMPLE.replace("trials = 4", "trials = 0")).is_err());
        assert!(ExperimentConfig::parse(&format!("{SAMPLE}\ncolour = blue\n")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("states = 50", "")).is_err());
    }

    #[test]
    fn q_learning_keys() {
        let text = SAMPLE.replace("model_based", "q_learning").replace(
            "trials = 4",
            "schedule = constant\nc1 = 2\nc2 = 1\nworkers = 2",
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.schedule, ScheduleKind::Constant);
        assert_eq!(c.c1, 2.0);
        assert_eq!(c.workers, Some(2));
    }
}
