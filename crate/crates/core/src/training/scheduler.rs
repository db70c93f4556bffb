use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning-rate schedule in min mode with a relative
/// improvement threshold and no cooldown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub best: f64,
    pub num_bad: usize,
}

pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_MIN_LR: f64 = 1e-8;

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            threshold: DEFAULT_THRESHOLD,
            min_lr: DEFAULT_MIN_LR,
            best: f64::INFINITY,
            num_bad: 0,
        }
    }

    /// Records one epoch's loss; returns `true` if the learning rate was
    /// reduced. An epoch is bad unless `loss < best·(1 − threshold)`; once
    /// `patience` bad epochs accumulate the rate is multiplied by `factor`
    /// (never below `min_lr`) and the count restarts.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best * (1.0 - self.threshold) {
            self.best = loss;
            self.num_bad = 0;
        } else {
            self.num_bad += 1;
        }
        if self.num_bad >= self.patience {
            self.num_bad = 0;
            let next = (self.lr * self.factor).max(self.min_lr);
            if next < self.lr {
                self.lr = next;
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trace_reduces_once_after_eleventh_value() {
        let mut s = PlateauScheduler::new(0.001, 0.1, 10);
        let reductions: Vec<bool> = (0..12).map(|_| s.step(1.0)).collect();
        assert_eq!(reductions.iter().filter(|&&r| r).count(), 1);
        assert!(reductions[10]);
        assert_eq!(s.lr, 0.0001);
    }

    #[test]
    fn decreasing_losses_keep_rate() {
        let mut s = PlateauScheduler::new(0.001, 0.1, 10);
        for e in 0..100 {
            assert!(!s.step(1.0 / (e as f64 + 1.0)));
        }
        assert_eq!(s.lr, 0.001);
    }

    #[test]
    fn sub_threshold_gains_are_bad_epochs() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2);
        s.step(1.0);
        s.step(0.99999);
        assert_eq!(s.num_bad, 1);
        assert!(s.step(0.99998));
        assert_eq!(s.lr, 0.5);
    }

    #[test]
    fn floor_holds() {
        let mut s = PlateauScheduler::new(2e-8, 0.1, 1);
        s.step(1.0);
        assert!(s.step(1.0));
        assert_eq!(s.lr, 1e-8);
        assert!(!s.step(1.0));
        assert_eq!(s.lr, 1e-8);
    }
}
