//! Fixed-capacity experience replay.

use rand::Rng;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    /// Adds an item, overwriting the oldest once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
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

    /// `count` items drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect()
    }
}
