use serde::{Deserialize, Serialize};

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without improving on the best value by more
/// than `min_delta`. A reduction resets the counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: Option<f64>,
    stale_epochs: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_delta,
            best: None,
            stale_epochs: 0,
            reductions: 0,
        }
    }

    /// Feeds one epoch's loss and returns the learning rate to use next.
    pub fn step(&mut self, loss: f64) -> f64 {
        let improved = match self.best {
            None => !loss.is_nan(),
            Some(best) => loss < best - self.min_delta,
        };
        if improved {
            self.best = Some(loss);
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr *= self.factor;
                self.reductions += 1;
                self.stale_epochs = 0;
            }
        }
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(losses: &[f64]) -> Vec<f64> {
        let mut s = PlateauScheduler::new(0.01, 0.1, 2, 1e-5);
        losses.iter().map(|&l| s.step(l)).collect()
    }

    #[test]
    fn improving_losses_keep_rate() {
        assert_eq!(trace(&[1.0, 0.9, 0.8]), vec![0.01; 3]);
    }

    #[test]
    fn flat_losses_reduce_after_two_epochs() {
        let lrs = trace(&[1.0, 1.0, 1.0]);
        assert_eq!(&lrs[..2], &[0.01, 0.01]);
        assert!((lrs[2] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn reduction_fires_once_after_final_two() {
        let lrs = trace(&[1.0, 1.1, 0.9, 0.95, 0.96]);
        assert_eq!(&lrs[..4], &[0.01; 4]);
        assert!((lrs[4] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn improvement_below_min_delta_does_not_count() {
        let mut s = PlateauScheduler::new(0.01, 0.1, 2, 1e-5);
        s.step(1.0);
        s.step(1.0 - 5e-6);
        s.step(1.0 - 8e-6);
        assert_eq!(s.reductions(), 1);
        assert_eq!(s.best(), Some(1.0));
    }
}
