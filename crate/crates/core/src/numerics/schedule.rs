/// Exponential halving schedule: the rate halves every `decay_epochs` epochs,
/// with fractional exponents in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            decay_epochs: 15,
        }
    }
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: u32) -> f64 {
        0.5f64.powf(f64::from(epoch) / f64::from(self.decay_epochs)) * self.initial
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_every_decay_period() {
        let s = LrSchedule::default();
        assert_eq!(s.at_epoch(0), 0.001);
        assert_eq!(s.at_epoch(15), 0.0005);
        assert_eq!(s.at_epoch(30), 0.00025);
    }

    #[test]
    fn strictly_decreasing() {
        let s = LrSchedule::default();
        for t in 0..200 {
            assert!(s.at_epoch(t + 1) < s.at_epoch(t));
        }
    }

    #[test]
    fn fractional_epochs_interpolate() {
        let s = LrSchedule {
            initial: 1.0,
            decay_epochs: 2,
        };
        assert!((s.at_epoch(1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }
}
