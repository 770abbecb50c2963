/// Validation-loss early stopping. An epoch counts as an improvement when
/// its loss is below `reference - min_delta`; `reference` only moves on
/// improvements, and `patience` consecutive non-improving epochs stop the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if loss < self.reference - self.min_delta {
            self.reference = loss;
            self.wait = 0;
            return Verdict::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    /// Consecutive epochs without improvement so far.
    pub fn wait(&self) -> usize {
        self.wait
    }
}
