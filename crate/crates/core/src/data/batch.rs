use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

/// Row-index batches for one epoch over `n` aligned samples: a permutation
/// seeded with `base_seed + epoch`, cut into `batch_size` chunks with the
/// final partial batch kept. Both parties call this with the same arguments.
pub fn batch_iter(n: usize, batch_size: usize, epoch: u32, base_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(epoch as u64)));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let b = batch_iter(5, 2, 0, 7).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b, batch_iter(5, 2, 0, 7).unwrap());
        assert!(batch_iter(0, 4, 0, 0).unwrap().is_empty());
        assert!(batch_iter(3, 0, 0, 0).is_err());
    }
}
