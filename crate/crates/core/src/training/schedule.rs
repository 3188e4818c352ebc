/// What the plateau controller decided after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    /// The validation loss set a new strict minimum.
    pub improved: bool,
    /// The learning rate was multiplied by the decay factor.
    pub decayed: bool,
    /// Training should stop.
    pub stop: bool,
    /// Learning rate for the next epoch.
    pub lr: f64,
}

/// Reduce-on-plateau learning-rate decay plus early stopping.
///
/// Both counters count epochs whose validation loss is not strictly below
/// the best so far. The decay counter resets on decay and on improvement;
/// the stop counter only on improvement.
#[derive(Clone, Debug)]
pub struct PlateauController {
    lr: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_decay: usize,
    since_best: usize,
    epoch: usize,
}

impl PlateauController {
    pub fn new(lr: f64, factor: f64, lr_patience: usize, stop_patience: usize) -> Self {
        PlateauController {
            lr,
            factor,
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_decay: 0,
            since_best: 0,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// 1-based epoch of the best validation loss so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Feeds the validation loss of the next epoch. A NaN loss never counts
    /// as an improvement.
    pub fn observe(&mut self, val_loss: f64) -> EpochDecision {
        self.epoch += 1;
        let improved = val_loss < self.best;
        let mut decayed = false;
        if improved {
            self.best = val_loss;
            self.best_epoch = Some(self.epoch);
            self.since_decay = 0;
            self.since_best = 0;
        } else {
            self.since_decay += 1;
            self.since_best += 1;
            if self.since_decay >= self.lr_patience {
                self.lr *= self.factor;
                self.since_decay = 0;
                decayed = true;
            }
        }
        EpochDecision {
            improved,
            decayed,
            stop: self.since_best >= self.stop_patience,
            lr: self.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_example() {
        let mut c = PlateauController::new(0.001, 0.9, 4, 7);
        let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        let decisions: Vec<_> = losses.iter().map(|&l| c.observe(l)).collect();
        let stop = decisions.iter().position(|d| d.stop).map(|i| i + 1);
        assert_eq!(stop, Some(9));
        let decays: Vec<usize> = (0..9).filter(|&i| decisions[i].decayed).map(|i| i + 1).collect();
        assert_eq!(decays, vec![6]);
        assert!((decisions[5].lr - 0.0009).abs() < 1e-15);
        // Had training continued, the reset counter would fire again four epochs later.
        assert!(decisions[9].decayed);
        assert_eq!(c.best_epoch(), Some(2));
    }

    #[test]
    fn nan_is_not_an_improvement() {
        let mut c = PlateauController::new(1.0, 0.5, 1, 2);
        c.observe(1.0);
        let d = c.observe(f64::NAN);
        assert!(!d.improved && d.decayed);
    }
}
