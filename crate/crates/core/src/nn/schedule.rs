use crate::error::{Error, Result};

/// Linear decay from `initial_lr` to zero over `total_steps` updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, total_steps: u64) -> Result<Self> {
        if !(initial_lr >= 0.0) || !initial_lr.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {initial_lr}")));
        }
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(LrSchedule {
            initial_lr,
            total_steps,
        })
    }

    /// `initial_lr * max(0, 1 - step / total_steps)`; steps past the end give 0.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        self.initial_lr * (1.0 - step as f64 / self.total_steps as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = LrSchedule::new(1e-3, 100).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(100), 0.0);
        assert_eq!(s.lr_at(250), 0.0);
        let s = LrSchedule::new(3e-4, 200).unwrap();
        assert!((s.lr_at(50) - 2.25e-4).abs() < 1e-18);
    }

    #[test]
    fn rejects_empty_schedule() {
        assert!(LrSchedule::new(1e-3, 0).is_err());
        assert!(LrSchedule::new(f64::NAN, 10).is_err());
    }
}
