//! Prints the desk toy-model alpha-recovery table.

use std::time::Instant;

use quanta_core::cluster::{alpha_recovery_sweep, recovery_summary, ToyModelConfig};

fn main() -> quanta_core::Result<()> {
    let alphas = [0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5];
    let start = Instant::now();
    let rows = alpha_recovery_sweep(&alphas, &ToyModelConfig::desk())?;
    for r in &rows {
        println!("alpha {:.1} slope {:.3} error {:+.3} r2 {:.3} sizes {:?}", r.alpha, r.slope, r.error, r.r_squared, r.curves.iter().map(|c| c.sizes.len()).collect::<Vec<_>>());
    }
    println!("summary {:?} in {:.1}s", recovery_summary(&rows)?, start.elapsed().as_secs_f64());
    Ok(())
}
