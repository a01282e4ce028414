//! Uniform experience replay with FIFO eviction.

use rand::Rng;

/// One stored environment transition (state vectors are the normalized
/// features fed to the networks).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<TransitionSample>,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 20)),
            write: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Inserts a transition, evicting the oldest once at capacity.
    pub fn push(&mut self, sample: TransitionSample) {
        if self.data.len() < self.capacity {
            self.data.push(sample);
        } else {
            self.data[self.write] = sample;
            self.write = (self.write + 1) % self.capacity;
        }
    }

    pub fn get(&self, idx: usize) -> &TransitionSample {
        &self.data[idx]
    }

    /// Uniform sample of distinct indices (without replacement within the
    /// batch).
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        let amount = batch.min(self.data.len());
        rand::seq::index::sample(rng, self.data.len(), amount).into_vec()
    }
}
