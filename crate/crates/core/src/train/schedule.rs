use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Step at which the one-cycle schedule reaches `max_lr`.
///
/// `floor(warmup_fraction * total_steps)`, kept inside `1..=total_steps-2` so
/// both the warmup and the decay phase have at least one step. With two total
/// steps there is no room for a peak and this returns 0.
pub fn warmup_peak(total_steps: usize, warmup_fraction: f64) -> usize {
    if total_steps < 3 {
        return 0;
    }
    ((warmup_fraction * total_steps as f64).floor() as usize).clamp(1, total_steps - 2)
}

/// One-cycle learning rate: linear from `base_lr` at step 0 to `max_lr` at the
/// warmup peak, then cosine annealing to `final_lr` at the last step.
pub fn onecycle_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps < 2 {
        return Err(Error::Config(format!(
            "one-cycle schedule needs at least 2 steps, got {total_steps}"
        )));
    }
    if step >= total_steps {
        return Err(Error::Config(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let last = total_steps - 1;
    let peak = warmup_peak(total_steps, cfg.warmup_fraction);
    if peak == 0 {
        return Ok(if step == 0 { cfg.base_lr } else { cfg.final_lr });
    }
    if step <= peak {
        let t = step as f64 / peak as f64;
        return Ok(cfg.base_lr * (1.0 - t) + cfg.max_lr * t);
    }
    let progress = (step - peak) as f64 / (last - peak) as f64;
    let w = (1.0 + (PI * progress).cos()) / 2.0;
    Ok(cfg.final_lr * (1.0 - w) + cfg.max_lr * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let cfg = TrainConfig::default();
        let total = 1000;
        let peak = warmup_peak(total, cfg.warmup_fraction);
        assert_eq!(peak, 100);
        assert_eq!(onecycle_lr(0, total, &cfg).unwrap(), 1e-4);
        assert_eq!(onecycle_lr(peak, total, &cfg).unwrap(), 1e-3);
        assert_eq!(onecycle_lr(total - 1, total, &cfg).unwrap(), cfg.final_lr);
    }

    #[test]
    fn decay_midpoint() {
        let cfg = TrainConfig::default();
        // peak 10, last 100: midpoint of decay at 55.
        let lr = onecycle_lr(55, 101, &cfg).unwrap();
        let expected = cfg.final_lr + (cfg.max_lr - cfg.final_lr) / 2.0;
        assert!((lr - expected).abs() < 1e-15);
    }

    #[test]
    fn degenerate_lengths() {
        let cfg = TrainConfig::default();
        assert!(onecycle_lr(0, 1, &cfg).is_err());
        assert!(onecycle_lr(5, 5, &cfg).is_err());
        assert_eq!(onecycle_lr(0, 2, &cfg).unwrap(), cfg.base_lr);
        assert_eq!(onecycle_lr(1, 2, &cfg).unwrap(), cfg.final_lr);
        assert_eq!(warmup_peak(3, 0.1), 1);
        assert_eq!(onecycle_lr(1, 3, &cfg).unwrap(), cfg.max_lr);
    }
}
