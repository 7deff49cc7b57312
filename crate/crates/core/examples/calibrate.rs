//! Runs one desk sweep and prints the quantities the acceptance checks use.
//!
//! Usage: `cargo run --release -p quanta-core --example calibrate -- params|data [steps]`

use std::time::Instant;

use quanta_core::harness::{
    convergence_law, count_learned_subtasks, polygenicity_score, run_sweep, track_step_scaling, SweepAxis, SweepConfig,
};

fn main() -> quanta_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let axis = match args.get(1).map(String::as_str) {
        Some("data") => SweepAxis::Data,
        _ => SweepAxis::Params,
    };
    let mut config = SweepConfig::desk(axis);
    if let Some(steps) = args.get(2) {
        config.total_steps = steps.parse().expect("steps");
    }
    let start = Instant::now();
    let (record, _) = run_sweep(&config)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    let threshold = config.threshold_nats();
    for p in &record.points {
        println!(
            "scale {:>10} width {:>4} diverged {} final {:.4} best {:.4}@{}",
            p.scale, p.width, p.diverged, p.final_eval.mean_loss, p.best_eval.mean_loss, p.best_eval.step
        );
    }
    println!("fit {:?}", record.fit());
    println!("learned {:?}", count_learned_subtasks(&record, threshold, false));
    println!("learned incl. post-stop {:?}", count_learned_subtasks(&record, threshold, true));
    let curves = record.subtask_curves();
    let learned: Vec<_> = curves.iter().filter(|c| c.losses.last().unwrap().1 < threshold).collect();
    let step_like = learned.iter().filter(|c| polygenicity_score(&c.loss_values(), 0.2) == 1).count();
    println!("step-like {step_like}/{}", learned.len());
    if axis == SweepAxis::Params {
        let series = track_step_scaling(record.points.last().unwrap(), &record.frequencies)?;
        println!("convergence {:?}", convergence_law(&series, threshold).map(|l| (l.spearman, l.beta, l.points.len())));
    }
    for (i, c) in curves.iter().enumerate().take(100).step_by(5) {
        println!("subtask {i:>3} p {:.4} losses {:?}", c.frequency, c.loss_values().iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    Ok(())
}
