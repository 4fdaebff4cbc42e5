//! Anchor-sampled Q-learning under both step-size schedules.
//!
//! cargo run --release --example q_learning

use anchor_rl::linear::SimplexModelSpec;
use anchor_rl::mdp::{optimal_q, QFunction};
use anchor_rl::q_learning::{run_q_learning, LearningRateSchedule, ScheduleKind};

fn main() -> anchor_rl::Result<()> {
    let (lin, anchors) = SimplexModelSpec::new(100, 4, 8, 0).build()?;
    let mdp = lin.base();
    let q_star = optimal_q(mdp, 1e-10)?;
    let horizon = 50_000;

    for kind in [ScheduleKind::LinearlyRescaled, ScheduleKind::Constant] {
        let schedule = LearningRateSchedule::new(kind, 1.0, 1.0, horizon, mdp.discount())?;
        let q0 = QFunction::zeros(mdp.num_states(), mdp.num_actions());
        let res = run_q_learning(mdp, &anchors, &schedule, q0, 3, Some(&q_star))?;
        println!(
            "{kind} schedule (eta_1 = {:.4}, eta_T = {:.4})",
            schedule.rate(1)?,
            schedule.rate(horizon)?
        );
        for (t, err) in res.error_trace.unwrap_or_default() {
            println!("  t = {t:>6}  |Q_t - Q*| = {err:.4}");
        }
    }
    Ok(())
}
