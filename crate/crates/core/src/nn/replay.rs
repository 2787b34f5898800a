use rand::Rng;

use super::NnError;
use crate::rng::StreamRng;

/// Fixed-capacity ring buffer; pushing into a full buffer overwrites the
/// oldest item.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<I> {
    capacity: usize,
    items: Vec<I>,
    cursor: usize,
}

impl<I> ReplayBuffer<I> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
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

    pub fn push(&mut self, item: I) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Items in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &I> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut StreamRng, batch: usize) -> Result<Vec<usize>, NnError> {
        if self.items.is_empty() {
            return Err(NnError::EmptyBuffer);
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, rng: &mut StreamRng, batch: usize) -> Result<Vec<&I>, NnError> {
        Ok(self.sample_indices(rng, batch)?.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, i: usize) -> &I {
        &self.items[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2);
        for i in 1..=3 {
            b.push(i);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn single_item_sampled_with_replacement() {
        let mut b = ReplayBuffer::new(5);
        b.push("x");
        let mut r = rng::stream(0, &[]);
        assert_eq!(b.sample(&mut r, 4).unwrap(), vec![&"x"; 4]);
    }

    #[test]
    fn empty_buffer_errors() {
        let b: ReplayBuffer<u8> = ReplayBuffer::new(5);
        let mut r = rng::stream(0, &[]);
        assert_eq!(b.sample(&mut r, 1).unwrap_err(), NnError::EmptyBuffer);
    }
}
