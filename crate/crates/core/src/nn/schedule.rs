//! Cyclical triangular learning rate: linear rise from `lr_min` to `lr_max`
//! over half a cycle, linear fall back, starting at `lr_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclicLrSpec {
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_epochs: f64,
}

impl Default for CyclicLrSpec {
    fn default() -> Self {
        CyclicLrSpec {
            lr_min: 1e-4,
            lr_max: 0.01,
            cycle_epochs: 60.0,
        }
    }
}

impl CyclicLrSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr_min <= lr_max, got {} / {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.cycle_epochs <= 0.0 {
            return Err(Error::Config("cycle_epochs must be positive".into()));
        }
        Ok(())
    }

    /// `epoch_progress` is in units of epochs; fractional values are
    /// evaluated per batch.
    pub fn lr_at(&self, epoch_progress: f64) -> f64 {
        let frac = (epoch_progress / self.cycle_epochs).fract();
        self.lr_min + (self.lr_max - self.lr_min) * (1.0 - (2.0 * frac - 1.0).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_keypoints() {
        let spec = CyclicLrSpec {
            lr_min: 1e-4,
            lr_max: 0.01,
            cycle_epochs: 60.0,
        };
        assert_eq!(spec.lr_at(0.0), 1e-4);
        assert_eq!(spec.lr_at(30.0), 0.01);
        assert_eq!(spec.lr_at(60.0), 1e-4);
        let mid = (1e-4 + 0.01) / 2.0;
        assert!((spec.lr_at(45.0) - mid).abs() < 1e-15);
        assert!((spec.lr_at(15.0) - mid).abs() < 1e-15);
    }

    #[test]
    fn periodic_and_bounded() {
        let spec = CyclicLrSpec::default();
        for i in 0..2000 {
            let p = i as f64 * 0.37;
            let lr = spec.lr_at(p);
            assert!(lr >= spec.lr_min - 1e-18 && lr <= spec.lr_max + 1e-18);
            assert!((lr - spec.lr_at(p + spec.cycle_epochs)).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_guards() {
        let mut s = CyclicLrSpec::default();
        s.lr_min = 0.0;
        assert!(s.validate().is_err());
        s.lr_min = 0.02; // above max
        assert!(s.validate().is_err());
    }
}
