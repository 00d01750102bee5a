use super::TrainConfig;

/// Learning rate at optimizer step `step`: a linear ramp from 0 to
/// `base_lr` over the warmup epochs, then cosine decay to `min_lr` at the
/// end of the last epoch.
pub fn cosine_warmup_lr(step: u64, steps_per_epoch: u64, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs as u64 * steps_per_epoch;
    let total = (cfg.epochs as u64 * steps_per_epoch).max(warmup + 1);
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    if progress >= 1.0 {
        return cfg.min_lr;
    }
    cfg.base_lr - 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 - (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(epochs: usize, warmup: usize) -> TrainConfig {
        TrainConfig { epochs, warmup_epochs: warmup, ..TrainConfig::default() }
    }

    #[test]
    fn landmarks() {
        let c = cfg(300, 5);
        assert_eq!(cosine_warmup_lr(0, 391, &c), 0.0);
        assert_eq!(cosine_warmup_lr(5 * 391, 391, &c), 5e-4);
        let mid = 5 * 100 + 295 * 100 / 2;
        assert!((cosine_warmup_lr(mid, 100, &c) - (5e-4 + 1e-5) / 2.0).abs() < 1e-15);
        assert_eq!(cosine_warmup_lr(300 * 391, 391, &c), 1e-5);
        assert_eq!(cosine_warmup_lr(400 * 391, 391, &c), 1e-5);
        // No warmup starts at the peak.
        assert_eq!(cosine_warmup_lr(0, 10, &cfg(2, 0)), 5e-4);
    }

    proptest! {
        #[test]
        fn continuous_and_nonnegative(spe in 1u64..50, epochs in 2usize..20, warmup in 0usize..5, step in 0u64..2000) {
            prop_assume!(warmup < epochs);
            let c = cfg(epochs, warmup);
            let lr = cosine_warmup_lr(step, spe, &c);
            prop_assert!(lr >= 0.0 && lr <= c.base_lr);
            // Neighbouring steps never jump by more than one ramp increment
            // or one cosine slope step.
            let next = cosine_warmup_lr(step + 1, spe, &c);
            let w = (warmup as u64 * spe).max(1) as f64;
            let bound = c.base_lr / w + c.base_lr * std::f64::consts::PI / ((epochs - warmup) as u64 * spe) as f64;
            prop_assert!((next - lr).abs() <= bound + 1e-15);
        }
    }
}
