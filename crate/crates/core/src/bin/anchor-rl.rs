use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anchor_rl::harness::{fit_loglog_slope, sweep, write_records_csv, Aggregate, ExperimentConfig};
use anchor_rl::linear::{build_anchor_set, perturb_model, tabular_embedding, SimplexModelSpec};
use anchor_rl::mdp::{random_tabular_mdp, Policy, QFunction};
use anchor_rl::model_based::{
    evaluate_policy_error_with, oracle_q_star, plan_on_kernel, run_model_based,
};
use anchor_rl::model_file::{ModelFile, RawModel};
use anchor_rl::q_learning::{run_q_learning, LearningRateSchedule, ScheduleKind};
use anchor_rl::sampling::EmpiricalKernel;
use anchor_rl::verify::verify_model;
use anchor_rl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "anchor-rl",
    version,
    about = "Anchor-based model-based planning and Q-learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random model file.
    Gen {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        /// Number of anchors; ignored with --tabular.
        #[arg(long, required_unless_present = "tabular")]
        feature_dim: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        seed: u64,
        /// Dirichlet concentration of the next-state distributions.
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        /// Store a perturbed truth at this misspecification level.
        #[arg(long)]
        xi: Option<f64>,
        /// Random tabular MDP embedded with one anchor per pair.
        #[arg(long)]
        tabular: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample anchors, plan on the empirical model and report policy error.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps_opt: f64,
        #[arg(long)]
        seed: u64,
        /// Plan on the exact anchor rows instead of sampled ones (test hook).
        #[arg(long)]
        inject_exact_counts: bool,
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Run anchor-sampled Q-learning and report the final sup error.
    Qlearn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: u64,
        #[arg(long, default_value = "rescaled")]
        schedule: ScheduleKind,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 1.0)]
        c2: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Run a sweep described by a config file and print the fitted slope.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check model invariants; exits nonzero naming any failure.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact suboptimality of a policy file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
}

fn write_policy(path: &Path, policy: &Policy) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for a in policy.actions() {
        writeln!(f, "{a}")?;
    }
    f.flush()?;
    Ok(())
}

fn read_policy(path: &Path, num_actions: usize) -> Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    let actions = text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad action `{t}` in policy file")))
        })
        .collect::<Result<Vec<_>>>()?;
    Policy::new(actions, num_actions)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            states,
            actions,
            feature_dim,
            gamma,
            seed,
            concentration,
            xi,
            tabular,
            out,
        } => {
            let (linear, anchors) = if tabular {
                let mdp = random_tabular_mdp(states, actions, gamma, concentration, seed)?;
                let linear = tabular_embedding(&mdp);
                let pairs: Vec<usize> = (0..mdp.num_pairs()).collect();
                let anchors = build_anchor_set(&linear, &pairs)?;
                (linear, anchors)
            } else {
                let k = feature_dim.expect("required by clap");
                SimplexModelSpec::new(states, actions, k, seed)
                    .with_discount(gamma)
                    .with_concentration(concentration)
                    .build()?
            };
            let truth = match xi {
                Some(xi) if xi > 0.0 => Some(perturb_model(&linear, xi, seed)?),
                _ => None,
            };
            let model = ModelFile::new(linear, anchors, truth)?;
            match out {
                Some(path) => model.save(path)?,
                None => model.write(std::io::stdout().lock())?,
            }
        }
        Command::Plan {
            model,
            samples,
            eps_opt,
            seed,
            inject_exact_counts,
            policy_out,
        } => {
            let model = ModelFile::load(model)?;
            let mdp = model.mdp();
            let res = if inject_exact_counts {
                let kernel = EmpiricalKernel::exact(mdp, model.anchors())?;
                plan_on_kernel(mdp, &kernel, eps_opt)?
            } else {
                run_model_based(mdp, model.anchors(), samples, eps_opt, seed)?
            };
            let q_star = oracle_q_star(mdp)?;
            let error = evaluate_policy_error_with(mdp, &q_star, &res.policy)?;
            println!("error {error:e}");
            println!("samples {}", res.sample_count);
            println!("planner_iterations {}", res.planner_iterations);
            println!("planner_certified_error {:e}", res.planner_certified_error);
            if let Some(path) = policy_out {
                write_policy(&path, &res.policy)?;
            }
        }
        Command::Qlearn {
            model,
            horizon,
            schedule,
            c1,
            c2,
            seed,
            policy_out,
        } => {
            let model = ModelFile::load(model)?;
            let mdp = model.mdp();
            let schedule = LearningRateSchedule::new(schedule, c1, c2, horizon, mdp.discount())?;
            let q_star = oracle_q_star(mdp)?;
            let q0 = QFunction::zeros(mdp.num_states(), mdp.num_actions());
            let res = run_q_learning(mdp, model.anchors(), &schedule, q0, seed, Some(&q_star))?;
            for (t, e) in res.error_trace.as_deref().unwrap_or_default() {
                println!("checkpoint {t} error {e:e}");
            }
            println!("error {:e}", res.q_final.sup_distance(&q_star));
            println!(
                "policy_error {:e}",
                evaluate_policy_error_with(mdp, &q_star, &res.policy)?
            );
            if let Some(path) = policy_out {
                write_policy(&path, &res.policy)?;
            }
        }
        Command::Sweep {
            config,
            workers,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            if output.is_some() {
                cfg.output = output;
            }
            cfg.validate()?;
            let records = sweep(&cfg)?;
            if cfg.output.is_none() {
                write_records_csv(std::io::stdout().lock(), &records)?;
            }
            match fit_loglog_slope(&records, Aggregate::Median) {
                Ok(slope) => eprintln!("log-log slope of median error: {slope:.4}"),
                Err(e) => eprintln!("no slope: {e}"),
            }
        }
        Command::Verify { model, seed } => {
            let raw = RawModel::read(std::fs::File::open(model)?)?;
            let report = verify_model(&raw, seed);
            for c in &report.checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                println!("{tag} {} {}", c.name, c.detail);
            }
            if !report.passed() {
                let names: Vec<_> = report.failures().map(|c| c.name).collect();
                eprintln!("invariant violated: {}", names.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval { model, policy } => {
            let model = ModelFile::load(model)?;
            let mdp = model.mdp();
            let policy = read_policy(&policy, mdp.num_actions())?;
            if policy.actions().len() != mdp.num_states() {
                return Err(Error::Dimension {
                    what: "policy length",
                    expected: mdp.num_states(),
                    got: policy.actions().len(),
                });
            }
            let q_star = oracle_q_star(mdp)?;
            println!(
                "error {:e}",
                evaluate_policy_error_with(mdp, &q_star, &policy)?
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
