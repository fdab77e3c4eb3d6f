use rand::Rng;

/// Fixed-capacity ring buffer with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity),
            capacity,
            next: 0,
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

    /// Inserts an item, overwriting the oldest once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Indices of a uniform minibatch drawn with replacement, or `None` while
    /// fewer than `batch` items are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&T>> {
        self.sample_indices(batch, rng)
            .map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn never_exceeds_capacity() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..10 {
            b.push(k);
            assert!(b.len() <= 3);
        }
        let mut kept: Vec<_> = b.iter().copied().collect();
        kept.sort();
        assert_eq!(kept, vec![7, 8, 9]);
    }

    #[test]
    fn no_sample_below_batch_size() {
        let mut b = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.push(1);
        assert!(b.sample(2, &mut rng).is_none());
        b.push(2);
        assert_eq!(b.sample(2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 20;
        let mut b = ReplayBuffer::new(n);
        for k in 0..n {
            b.push(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 200_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws / n {
            for i in b.sample_indices(n, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "count {c} vs mean {mean}");
        }
    }
}
