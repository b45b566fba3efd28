use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Linear warmup followed by cosine annealing to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self { base_lr, warmup_steps, total_steps }
    }

    /// Learning rate used for optimizer update number `step` (0-based).
    ///
    /// Warmup gives `base_lr * (step + 1) / warmup_steps`, reaching `base_lr`
    /// at `step = warmup_steps`; afterwards the rate follows a half cosine
    /// that hits zero at `total_steps`. Steps past the end clamp.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.base_lr;
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.base_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reaches_base_rate_at_end_of_warmup() {
        let s = LrSchedule::new(5e-4, 1500, 10_000);
        assert_eq!(s.lr_at(1500), 5e-4);
        assert!((s.lr_at(0) - 5e-4 / 1500.0).abs() < 1e-18);
    }

    #[test]
    fn cosine_tail() {
        let s = LrSchedule::new(5e-4, 1500, 3500);
        assert!(s.lr_at(3500).abs() < 1e-20);
        assert!((s.lr_at(2500) - 2.5e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(9999), s.lr_at(3500));
    }

    #[test]
    fn ramp_is_linear_and_tail_non_increasing() {
        let s = LrSchedule::new(1.0, 10, 50);
        for k in 0..10 {
            assert!((s.lr_at(k) - (k + 1) as f64 / 10.0).abs() < 1e-15);
        }
        for k in 10..50 {
            assert!(s.lr_at(k + 1) <= s.lr_at(k));
        }
    }
}
