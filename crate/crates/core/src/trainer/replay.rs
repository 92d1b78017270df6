use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::diffcore::Tensor;
use crate::error::Result;

/// One transition `(s, u, r, s', terminal)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

impl Experience {
    pub fn is_valid(&self) -> bool {
        self.state.iter().chain(&self.next_state).all(|v| v.is_finite())
            && self.reward.is_finite()
            && self.action.iter().all(|a| a.is_finite() && (-1.0..=1.0).contains(a))
    }
}

pub(crate) fn states(batch: &[Experience]) -> Result<Tensor> {
    Tensor::from_rows(&batch.iter().map(|e| &e.state[..]).collect::<Vec<_>>())
}

pub(crate) fn next_states(batch: &[Experience]) -> Result<Tensor> {
    Tensor::from_rows(&batch.iter().map(|e| &e.next_state[..]).collect::<Vec<_>>())
}

pub(crate) fn actions(batch: &[Experience]) -> Result<Tensor> {
    Tensor::from_rows(&batch.iter().map(|e| &e.action[..]).collect::<Vec<_>>())
}

/// Bounded FIFO of experiences with uniform sampling with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `n` uniform draws with replacement; empty when the buffer is empty.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Experience> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect()
    }
}
