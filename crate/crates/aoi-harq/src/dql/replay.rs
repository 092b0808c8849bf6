//! Uniform experience replay with FIFO eviction.

use std::collections::VecDeque;

use rand::Rng;

use super::network::Transition;

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(transition);
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

    pub fn oldest(&self) -> Option<&Transition> {
        self.entries.front()
    }

    /// Uniform sample without replacement within the batch.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        assert!(
            batch_size <= self.entries.len(),
            "batch size exceeds buffer fill level"
        );
        rand::seq::index::sample(rng, self.entries.len(), batch_size)
            .iter()
            .map(|i| &self.entries[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: f64) -> Transition {
        Transition {
            features: vec![tag],
            action_code: 0,
            reward: tag,
            next_features: vec![tag],
            next_mask: vec![true],
        }
    }

    #[test]
    fn evicts_oldest_at_capacity() {
        let mut buffer = ReplayBuffer::new(3);
        for i in 0..5 {
            buffer.push(transition(i as f64));
        }
        assert_eq!(buffer.len(), 3);
        assert_eq!(buffer.oldest().unwrap().reward, 2.0);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut buffer = ReplayBuffer::new(16);
        for i in 0..16 {
            buffer.push(transition(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let batch = buffer.sample(8, &mut rng);
            let mut tags: Vec<i64> = batch.iter().map(|t| t.reward as i64).collect();
            tags.sort_unstable();
            tags.dedup();
            assert_eq!(tags.len(), 8);
        }
    }

    #[test]
    #[should_panic(expected = "batch size exceeds buffer fill level")]
    fn oversized_batch_panics() {
        let mut buffer = ReplayBuffer::new(4);
        buffer.push(transition(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let _ = buffer.sample(2, &mut rng);
    }
}
