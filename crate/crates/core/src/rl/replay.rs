use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Encoded observation shared between consecutive transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedState {
    pub feature: Vec<f64>,
    pub aff_bins: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Arc<EncodedState>,
    pub a: usize,
    pub r: f64,
    pub s_next: Arc<EncodedState>,
    pub done: bool,
}

/// Fixed-capacity FIFO replay memory.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform batch without replacement; `None` when fewer items are stored.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || batch > self.items.len() {
            return None;
        }
        let mut picks = index::sample(rng, self.items.len(), batch).into_vec();
        picks.sort_unstable();
        Some(picks.into_iter().map(|i| &self.items[i]).collect())
    }
}
