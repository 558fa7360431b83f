use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::active::Batch;

/// SplitMix64 finaliser, used to derive independent per-call seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform mini-batches without replacement, reproducible from a root seed.
///
/// Call `i` draws from a generator seeded with `mix(root ⊕ mix(i))`, so the
/// batch sequence depends only on the root seed and the call count. A batch
/// as large as the data set is the whole data set in index order.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n_data: usize,
    batch_size: usize,
    root_seed: u64,
    calls: u64,
    data_read: u64,
}

impl BatchSampler {
    pub fn new(n_data: usize, batch_size: usize, root_seed: u64) -> Self {
        Self {
            n_data,
            batch_size: batch_size.min(n_data).max(1),
            root_seed,
            calls: 0,
            data_read: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn data_read(&self) -> u64 {
        self.data_read
    }

    pub fn is_full_batch(&self) -> bool {
        self.batch_size >= self.n_data
    }

    pub fn sample(&mut self) -> Batch {
        let call = self.calls;
        self.calls += 1;
        self.data_read += self.batch_size as u64;
        if self.is_full_batch() {
            return Batch::new((0..self.n_data).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.root_seed ^ mix_seed(call)));
        let mut idx = rand::seq::index::sample(&mut rng, self.n_data, self.batch_size).into_vec();
        // summation order only; keeps memory access sequential
        idx.sort_unstable();
        Batch::new(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_distinct_and_reproducible() {
        let mut a = BatchSampler::new(100, 10, 7);
        let mut b = BatchSampler::new(100, 10, 7);
        let first = a.sample();
        assert_eq!(first, b.sample());
        let mut sorted = first.indices.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert_ne!(a.sample(), first);
        assert_eq!(a.data_read(), 20);
    }

    #[test]
    fn full_batch_is_whole_dataset() {
        let mut s = BatchSampler::new(5, 50, 1);
        assert_eq!(s.sample().indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.data_read(), 5);
    }
}
