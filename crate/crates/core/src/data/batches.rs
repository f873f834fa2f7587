use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index batches for one epoch: a shuffle keyed by `(seed, epoch)`, cut
/// into `batch_size` chunks with the incomplete tail dropped.
pub fn batch_iter(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > len {
        return Err(Error::Config(format!("batch size {batch_size} must be in 1..={len}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::seeds::derive(seed, epoch)));
    Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}

/// Endless batch stream over a subset of indices, reshuffling each epoch.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pool: Vec<usize>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream {
    pub fn new(pool: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        batch_iter(pool.len(), batch_size, seed, 0)?;
        Ok(BatchStream { pool, batch_size, seed, epoch: 0, pending: Vec::new().into_iter() })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        loop {
            if let Some(b) = self.pending.next() {
                return b.into_iter().map(|i| self.pool[i]).collect();
            }
            let batches =
                batch_iter(self.pool.len(), self.batch_size, self.seed, self.epoch).expect("validated batch size");
            self.epoch += 1;
            self.pending = batches.into_iter();
        }
    }
}

/// Stacks `images[indices]` into a `[B, C, H, W]` batch.
pub fn gather<T: Real, U: Real>(images: &[Tensor<U>], indices: &[usize]) -> Result<Tensor<T>> {
    let first = images
        .get(*indices.first().ok_or_else(|| Error::Config("empty batch".into()))?)
        .ok_or_else(|| Error::Config("batch index out of range".into()))?;
    let per = first.numel();
    let mut data = Vec::with_capacity(per * indices.len());
    for &i in indices {
        let img = images.get(i).ok_or_else(|| Error::Config("batch index out of range".into()))?;
        if img.shape() != first.shape() {
            return Err(Error::shape("gather", img.shape(), first.shape()));
        }
        data.extend(img.data().iter().map(|v| T::from_f64(v.to_f64())));
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(&shape, data)
}
