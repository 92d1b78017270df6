use serde::{Deserialize, Serialize};

/// Linear annealing from `start` to `end` over `horizon` episodes, constant
/// afterwards.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anneal {
    pub start: f64,
    pub end: f64,
    pub horizon: usize,
}

impl Anneal {
    pub fn new(start: f64, end: f64, horizon: usize) -> Self {
        Anneal { start, end, horizon }
    }

    pub fn value_at(&self, episode: usize) -> f64 {
        if self.horizon == 0 || episode >= self.horizon {
            return self.end;
        }
        let frac = episode as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}
