use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::Transition;
use crate::error::{contract, Result};

/// Bounded FIFO of transitions with its own seeded sampler.
#[derive(Clone, Debug)]
pub struct ReplayPool {
    items: VecDeque<Transition>,
    capacity: usize,
    rng: ChaCha8Rng,
    /// Transitions ever inserted.
    inserted: u64,
}

impl ReplayPool {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Result<Self> {
        contract!(capacity >= 1, "replay capacity must be positive");
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            rng,
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Positions of `n` uniform draws with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        contract!(!self.items.is_empty(), "cannot sample from an empty pool");
        let len = self.items.len();
        Ok((0..n).map(|_| self.rng.random_range(0..len)).collect())
    }

    pub fn sample(&mut self, n: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(n)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Restores a pool from persisted contents.
    pub fn restore(capacity: usize, rng: ChaCha8Rng, items: Vec<Transition>, inserted: u64) -> Result<Self> {
        contract!(
            items.len() <= capacity,
            "{} stored transitions exceed capacity {capacity}",
            items.len()
        );
        Ok(Self {
            items: items.into(),
            capacity,
            rng,
            inserted,
        })
    }
}
