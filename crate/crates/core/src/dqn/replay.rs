use std::collections::VecDeque;

use rand::Rng;

/// One stored step. `next` carries the successor features and mask, or
/// `None` for the terminal step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
    pub next: Option<(Vec<f64>, Vec<bool>)>,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.next.is_none()
    }
}

/// Bounded FIFO experience store.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// `n` distinct entries drawn uniformly; `None` when fewer are stored.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Option<Vec<&Transition>> {
        if n > self.entries.len() {
            return None;
        }
        Some(
            rand::seq::index::sample(rng, self.entries.len(), n)
                .into_iter()
                .map(|i| &self.entries[i])
                .collect(),
        )
    }
}
