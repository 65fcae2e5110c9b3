use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use super::{Action, SearchState};

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: SearchState,
    pub next_state: SearchState,
    pub action: Action,
    pub reward: f64,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, entries: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Up to `batch` distinct transitions, uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let n = batch.min(self.entries.len());
        index::sample(rng, self.entries.len(), n).into_iter().map(|i| &self.entries[i]).collect()
    }
}
