//! Contrastive temperature schedules.
//!
//! The cosine kind is `τ_t = τ⁻ + 0.5·(1 + cos(2πt / (T·m)))·(τ⁺ − τ⁻)` with
//! period multiplier `m`. The other kinds are comparison shapes that live in
//! the same `[τ⁻, τ⁺]` band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Fixed,
    Step,
    Random,
    Oscillating,
}

/// Everything except the horizon, which comes from the training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub period_multiplier: f64,
    pub seed: u64,
    pub step_count: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Cosine, tau_minus: 0.1, tau_plus: 1.0, period_multiplier: 1.0, seed: 0, step_count: 4 }
    }
}

impl ScheduleConfig {
    pub fn fixed(tau: f64) -> Self {
        Self { kind: ScheduleKind::Fixed, tau_minus: tau, tau_plus: tau, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_minus > 0.0 && self.tau_minus <= self.tau_plus && self.tau_plus.is_finite()) {
            return Err(Error::Config(format!(
                "temperature bounds must satisfy 0 < tau_minus <= tau_plus, got [{}, {}]",
                self.tau_minus, self.tau_plus
            )));
        }
        if !(self.period_multiplier > 0.0 && self.period_multiplier.is_finite()) {
            return Err(Error::Config(format!("period_multiplier must be positive, got {}", self.period_multiplier)));
        }
        if self.step_count == 0 {
            return Err(Error::Config("step_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub config: ScheduleConfig,
    pub total_iters: u64,
}

impl TemperatureSchedule {
    pub fn new(config: ScheduleConfig, total_iters: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, total_iters })
    }

    pub fn tau_minus(&self) -> f64 {
        self.config.tau_minus
    }

    pub fn tau_plus(&self) -> f64 {
        self.config.tau_plus
    }

    /// `τ_t` for `t ∈ [0, T]`.
    pub fn temperature_at(&self, t: u64) -> Result<f64> {
        if t > self.total_iters {
            return Err(Error::OutOfRange { t, total: self.total_iters });
        }
        let c = &self.config;
        let span = c.tau_plus - c.tau_minus;
        let period = self.total_iters as f64 * c.period_multiplier;
        let phase = if period > 0.0 { (t as f64 / period).fract() } else { 0.0 };
        let tau = match c.kind {
            ScheduleKind::Fixed => c.tau_plus,
            ScheduleKind::Cosine => {
                let raw = if period > 0.0 { t as f64 / period } else { 0.0 };
                c.tau_minus + 0.5 * (1.0 + (2.0 * std::f64::consts::PI * raw).cos()) * span
            }
            ScheduleKind::Step => {
                if c.step_count == 1 || self.total_iters == 0 {
                    c.tau_plus
                } else {
                    let level = ((t as u128 * c.step_count as u128) / self.total_iters as u128)
                        .min(c.step_count as u128 - 1) as f64;
                    c.tau_plus - level / (c.step_count - 1) as f64 * span
                }
            }
            ScheduleKind::Random => c.tau_minus + RngStream::derive(c.seed, &[t]).uniform() * span,
            ScheduleKind::Oscillating => c.tau_minus + (1.0 - 2.0 * phase).abs() * span,
        };
        Ok(tau.clamp(c.tau_minus, c.tau_plus))
    }

    /// Temperature of the teacher-side distribution: `τ⁺` unless it is
    /// configured to follow the student schedule.
    pub fn teacher_temperature_at(&self, t: u64, follows_schedule: bool) -> Result<f64> {
        if follows_schedule {
            self.temperature_at(t)
        } else if t > self.total_iters {
            Err(Error::OutOfRange { t, total: self.total_iters })
        } else {
            Ok(self.config.tau_plus)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule(kind: ScheduleKind, total: u64) -> TemperatureSchedule {
        TemperatureSchedule::new(ScheduleConfig { kind, seed: 17, ..ScheduleConfig::default() }, total).unwrap()
    }

    const KINDS: [ScheduleKind; 5] =
        [ScheduleKind::Cosine, ScheduleKind::Fixed, ScheduleKind::Step, ScheduleKind::Random, ScheduleKind::Oscillating];

    #[test]
    fn cosine_landmarks() {
        let s = schedule(ScheduleKind::Cosine, 1000);
        assert!((s.temperature_at(0).unwrap() - 1.0).abs() < 1e-12);
        assert!((s.temperature_at(250).unwrap() - 0.55).abs() < 1e-12);
        assert!((s.temperature_at(500).unwrap() - 0.1).abs() < 1e-12);
        assert!((s.temperature_at(1000).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range() {
        let s = schedule(ScheduleKind::Cosine, 10);
        assert!(matches!(s.temperature_at(11), Err(Error::OutOfRange { t: 11, total: 10 })));
        assert!(s.teacher_temperature_at(11, false).is_err());
    }

    #[test]
    fn step_is_descending_staircase() {
        let s = schedule(ScheduleKind::Step, 100);
        let values: Vec<f64> = (0..=100).map(|t| s.temperature_at(t).unwrap()).collect();
        assert_eq!(values[0], 1.0);
        assert!((values[100] - 0.1).abs() < 1e-12);
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
        let mut distinct = values.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn oscillating_triangle() {
        let s = schedule(ScheduleKind::Oscillating, 100);
        assert_eq!(s.temperature_at(0).unwrap(), 1.0);
        assert!((s.temperature_at(50).unwrap() - 0.1).abs() < 1e-12);
        assert!((s.temperature_at(25).unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(s.temperature_at(100).unwrap(), 1.0);
    }

    #[test]
    fn random_is_reproducible_and_varies() {
        let a: Vec<f64> = (0..50).map(|t| schedule(ScheduleKind::Random, 50).temperature_at(t).unwrap()).collect();
        let b: Vec<f64> = (0..50).map(|t| schedule(ScheduleKind::Random, 50).temperature_at(t).unwrap()).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|&x| (x - a[0]).abs() > 1e-3));
    }

    #[test]
    fn teacher_fixed_by_default() {
        let s = schedule(ScheduleKind::Cosine, 100);
        assert_eq!(s.teacher_temperature_at(50, false).unwrap(), 1.0);
        assert_eq!(s.teacher_temperature_at(50, true).unwrap(), s.temperature_at(50).unwrap());
    }

    #[test]
    fn invalid_bounds_rejected() {
        let bad = ScheduleConfig { tau_minus: 1.0, tau_plus: 0.5, ..ScheduleConfig::default() };
        assert!(TemperatureSchedule::new(bad, 10).is_err());
        let zero = ScheduleConfig { tau_minus: 0.0, ..ScheduleConfig::default() };
        assert!(TemperatureSchedule::new(zero, 10).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ScheduleConfig>(r#"{"kind":"cosine","tau_min":0.1}"#).is_err());
        let c: ScheduleConfig = serde_json::from_str(r#"{"kind":"step","step_count":3}"#).unwrap();
        assert_eq!(c.kind, ScheduleKind::Step);
        assert_eq!(c.tau_plus, 1.0);
    }

    proptest! {
        #[test]
        fn range_holds(kind in 0usize..5, lo in 0.01f64..2.0, width in 0.0f64..2.0, m in 0.1f64..3.0,
                       total in 1u64..5000, frac in 0.0f64..=1.0, steps in 1usize..10) {
            let cfg = ScheduleConfig { kind: KINDS[kind], tau_minus: lo, tau_plus: lo + width,
                                       period_multiplier: m, seed: 3, step_count: steps };
            let s = TemperatureSchedule::new(cfg, total).unwrap();
            let t = (frac * total as f64) as u64;
            let tau = s.temperature_at(t).unwrap();
            prop_assert!(tau >= lo && tau <= lo + width);
        }

        #[test]
        fn degenerate_bounds_constant(kind in 0usize..5, tau in 0.01f64..2.0, t in 0u64..=200) {
            let cfg = ScheduleConfig { kind: KINDS[kind], tau_minus: tau, tau_plus: tau, ..ScheduleConfig::default() };
            let s = TemperatureSchedule::new(cfg, 200).unwrap();
            prop_assert_eq!(s.temperature_at(t).unwrap(), tau);
        }
    }
}
