//! Fixed-capacity experience pool with uniform sampling.

use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Ring buffer: once full, each push overwrites the oldest transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), head: 0 }
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
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items[self.head..].iter().chain(self.items[..self.head].iter())
    }

    /// `batch` distinct transitions drawn uniformly; `None` when the pool holds
    /// fewer than `batch`.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(index::sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition { state: vec![i as f64], action: i, reward: 0.0, next_state: vec![], terminal: false }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..4 {
            buf.push(t(i));
        }
        assert_eq!(buf.len(), 3);
        let order: Vec<usize> = buf.iter().map(|x| x.action).collect();
        assert_eq!(order, vec![1, 2, 3]);
        for i in 4..10 {
            buf.push(t(i));
            assert!(buf.len() <= 3);
        }
        let order: Vec<usize> = buf.iter().map(|x| x.action).collect();
        assert_eq!(order, vec![7, 8, 9]);
    }

    #[test]
    fn sampling_without_replacement() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..50 {
            buf.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(51, &mut rng).is_none());
        for _ in 0..20 {
            let mut got: Vec<usize> = buf.sample(50, &mut rng).unwrap().iter().map(|x| x.action).collect();
            got.sort_unstable();
            assert_eq!(got, (0..50).collect::<Vec<_>>());
        }
    }
}
