//! A configured sweep over N with CSV output and a log-log slope fit.
//!
//! cargo run --release --example sample_complexity_sweep [out.csv]

use anchor_rl::harness::{fit_loglog_slope, median, sweep, Aggregate, Algorithm, ExperimentConfig};

const CONFIG: &str = "
states = 100
actions = 4
feature_dim = 8
gamma = 0.9
seed = 1
algo = q_learning
grid = 1000, 4000, 16000, 64000
trials = 5
schedule = rescaled
";

fn main() -> anchor_rl::Result<()> {
    let mut config = ExperimentConfig::parse(CONFIG)?;
    config.output = std::env::args().nth(1).map(Into::into);
    assert_eq!(config.algo, Algorithm::QLearning);

    let records = sweep(&config)?;
    for &t in &config.grid {
        let errors: Vec<f64> = records
            .iter()
            .filter(|r| r.param == t)
            .map(|r| r.error)
            .collect();
        println!("T = {t:>6}: median |Q_T - Q*| = {:.4}", median(&errors));
    }
    println!(
        "slope: {:.3}",
        fit_loglog_slope(&records, Aggregate::Median)?
    );
    Ok(())
}
