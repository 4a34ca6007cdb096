/// What the schedule decided after observing one epoch's dev loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleStep {
    pub epoch: usize,
    /// Learning rate used for the epoch just observed.
    pub lr: f64,
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

/// Divide-on-plateau learning rate with early termination.
///
/// The rate is divided by `factor` once the dev loss has failed to improve
/// by more than `min_delta` for `patience` consecutive epochs, after which
/// the counter restarts. Training stops at `max_epochs` or once the rate
/// falls below `lr_min`.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    lr_min: f64,
    max_epochs: usize,
    min_delta: f64,
    best: f64,
    since_improvement: usize,
    epoch: usize,
}

impl PlateauSchedule {
    pub fn new(
        lr0: f64,
        factor: f64,
        patience: usize,
        lr_min: f64,
        max_epochs: usize,
        min_delta: f64,
    ) -> Self {
        PlateauSchedule {
            lr: lr0,
            factor,
            patience,
            lr_min,
            max_epochs,
            min_delta,
            best: f64::INFINITY,
            since_improvement: 0,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn observe(&mut self, dev_loss: f64) -> ScheduleStep {
        self.epoch += 1;
        let lr = self.lr;
        let improved = dev_loss < self.best - self.min_delta;
        let mut lr_reduced = false;
        if improved {
            self.best = dev_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr /= self.factor;
                self.since_improvement = 0;
                lr_reduced = true;
            }
        }
        ScheduleStep {
            epoch: self.epoch,
            lr,
            improved,
            lr_reduced,
            stop: self.epoch >= self.max_epochs || self.lr < self.lr_min,
        }
    }
}
