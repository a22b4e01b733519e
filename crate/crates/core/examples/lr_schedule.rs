//! Learning-rate traces of both phases for a validation loss that stops
//! improving after five epochs.

use sparseg::optim::{lr_trace, Phase, ScheduleConfig};

fn main() -> sparseg::Result<()> {
    let config = ScheduleConfig::default();
    let metrics: Vec<f64> = (0..130).map(|e| 1.0 - 0.01 * (e.min(4)) as f64).collect();
    for phase in [Phase::Plateau, Phase::PlateauWithRestarts] {
        let trace = lr_trace(config, phase, &metrics)?;
        println!("phase {}:", phase.number());
        let mut last = config.initial_lr;
        println!("  from epoch   1: lr {last:.4e}");
        for (e, lr) in trace.iter().enumerate() {
            if *lr != last {
                println!("  from epoch {:3}: lr {lr:.4e}", e + 2);
                last = *lr;
            }
        }
    }
    Ok(())
}
