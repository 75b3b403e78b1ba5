use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub warmup_ratio: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Gradients are rescaled to at most this global L2 norm.
    pub clip_norm: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            max_lr: 1e-3,
            warmup_ratio: 0.05,
            total_epochs: 60,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: 5.0,
        }
    }
}

impl ScheduleConfig {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            bad.push(format!("{prefix}.max_lr: must be positive"));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            bad.push(format!("{prefix}.warmup_ratio: must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            bad.push(format!("{prefix}.batch_size: must be >= 1"));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad.push(format!("{prefix}.{key}: must lie in [0, 1)"));
            }
        }
        if !(self.clip_norm > 0.0) {
            bad.push(format!("{prefix}.clip_norm: must be positive"));
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    /// Epochs over which `tau` decays; it stays at `tau_end` afterwards.
    pub total_epochs: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule { tau_start: 10.0, tau_end: 0.1, total_epochs: 5 }
    }
}

impl TemperatureSchedule {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.tau_start > self.tau_end && self.tau_end > 0.0 && self.tau_start.is_finite()) {
            bad.push(format!("{prefix}.tau_start: need tau_start > tau_end > 0"));
        }
        if self.total_epochs == 0 {
            bad.push(format!("{prefix}.total_epochs: must be >= 1"));
        }
        bad
    }
}

/// Linear warmup from 0 to `max_lr` over `warmup_ratio * total_steps`, then cosine decay to 0.
pub fn lr_at(step: usize, total_steps: usize, s: &ScheduleConfig) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = (s.warmup_ratio * total).max(f64::MIN_POSITIVE);
    if step < warm {
        s.max_lr * step / warm
    } else {
        let p = ((step - warm) / (total - warm)).clamp(0.0, 1.0);
        0.5 * s.max_lr * (1.0 + (PI * p).cos())
    }
}

/// Geometric decay `tau_start * (tau_end / tau_start)^(epoch / total_epochs)`, clamped at the ends.
pub fn tau_at(epoch: f64, s: &TemperatureSchedule) -> f64 {
    let e = (epoch / s.total_epochs as f64).clamp(0.0, 1.0);
    s.tau_start * (s.tau_end / s.tau_start).powf(e)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn lr_endpoints() {
        let s = ScheduleConfig { max_lr: 0.01, warmup_ratio: 0.1, ..Default::default() };
        assert_eq!(lr_at(0, 1000, &s), 0.0);
        assert!((lr_at(100, 1000, &s) - 0.01).abs() < 1e-15);
        assert!(lr_at(1000, 1000, &s).abs() < 1e-9 * 0.01);
        assert!((lr_at(50, 1000, &s) - 0.005).abs() < 1e-15);
        assert!((lr_at(550, 1000, &s) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn tau_endpoints_and_midpoint() {
        let t = TemperatureSchedule { total_epochs: 40, ..Default::default() };
        assert!((tau_at(0.0, &t) - 10.0).abs() < 1e-12);
        assert!((tau_at(40.0, &t) - 0.1).abs() < 1e-12);
        assert!((tau_at(20.0, &t) - 1.0).abs() < 1e-12);
        assert!((tau_at(100.0, &t) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_schedules_name_keys() {
        let s = ScheduleConfig { warmup_ratio: 1.0, batch_size: 0, ..Default::default() };
        let bad = s.problems("train.schedule");
        assert!(bad.iter().any(|k| k.starts_with("train.schedule.warmup_ratio")));
        assert!(bad.iter().any(|k| k.starts_with("train.schedule.batch_size")));
        let t = TemperatureSchedule { tau_start: 0.1, tau_end: 1.0, total_epochs: 3 };
        assert_eq!(t.problems("t").len(), 1);
    }

    proptest! {
        #[test]
        fn lr_stays_in_range(step in 0usize..500, total in 1usize..500, ratio in 0.01f64..0.9) {
            let s = ScheduleConfig { warmup_ratio: ratio, ..Default::default() };
            let lr = lr_at(step, total, &s);
            prop_assert!((0.0..=s.max_lr + 1e-15).contains(&lr));
        }

        #[test]
        fn tau_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let t = TemperatureSchedule { total_epochs: 10, ..Default::default() };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(tau_at(hi, &t) <= tau_at(lo, &t) + 1e-12);
        }
    }
}
