use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{preprocess, AugmentConfig, ImageRecord};
use crate::error::{arg_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index lists of the batches of one epoch. With a seed the order is a
/// permutation derived from `(seed, epoch)`; without one it is file order.
/// The final batch may be short.
pub fn batch_order(len: usize, batch_size: usize, shuffle: Option<u64>, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(arg_err("batch_order", "batch size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(seed) = shuffle {
        idx.shuffle(&mut epoch_rng(seed, epoch));
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub(crate) fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Images `[B, 3, side, side]` and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

pub fn make_batch<T: Scalar>(
    records: &[ImageRecord],
    indices: &[usize],
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Batch<T> {
    let side = aug.output_side();
    let mut data = Vec::with_capacity(indices.len() * 3 * side * side);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend(preprocess::<T>(&records[i], aug, rng).into_vec());
        labels.push(records[i].label);
    }
    let images = Tensor::from_vec(&[indices.len(), 3, side, side], data).expect("batch shape");
    Batch { images, labels }
}

/// One epoch of preprocessed batches. Augmentation randomness comes from
/// a stream separate from the shuffle, so both are reproducible.
pub struct BatchIter<'a, T: Scalar> {
    records: &'a [ImageRecord],
    aug: &'a AugmentConfig,
    order: std::vec::IntoIter<Vec<usize>>,
    rng: ChaCha8Rng,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        let idx = self.order.next()?;
        Some(make_batch(self.records, &idx, self.aug, &mut self.rng))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

impl<T: Scalar> ExactSizeIterator for BatchIter<'_, T> {}

pub fn batch_iter<'a, T: Scalar>(
    records: &'a [ImageRecord],
    batch_size: usize,
    aug: &'a AugmentConfig,
    shuffle: Option<u64>,
    epoch: u64,
) -> Result<BatchIter<'a, T>> {
    aug.validate()?;
    let order = batch_order(records.len(), batch_size, shuffle, epoch)?;
    let rng = epoch_rng(shuffle.unwrap_or(0) ^ 0xa06, epoch);
    Ok(BatchIter { records, aug, order: order.into_iter(), rng, _t: std::marker::PhantomData })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn batch_counts() {
        let b = batch_order(50_000, 128, Some(1), 0).unwrap();
        assert_eq!(b.len(), 391);
        assert_eq!(b.iter().filter(|x| x.len() == 128).count(), 390);
        assert_eq!(b.last().unwrap().len(), 80);
        assert_eq!(batch_order(50_000, 1, None, 0).unwrap().len(), 50_000);
        assert!(matches!(batch_order(0, 4, None, 0), Err(Error::EmptyDataset)));
        assert!(batch_order(3, 0, None, 0).is_err());
    }

    #[test]
    fn seeded_order_is_reproducible_and_epoch_dependent() {
        let a = batch_order(1000, 7, Some(3), 2).unwrap();
        assert_eq!(a, batch_order(1000, 7, Some(3), 2).unwrap());
        assert_ne!(a, batch_order(1000, 7, Some(3), 3).unwrap());
        assert_ne!(a, batch_order(1000, 7, Some(4), 2).unwrap());
    }

    #[test]
    fn iterator_yields_preprocessed_batches() {
        let recs = synth_dataset(3, 5, 0).unwrap();
        let aug = AugmentConfig::train(None);
        let batches: Vec<Batch<f32>> = batch_iter(&recs, 4, &aug, Some(9), 0).unwrap().collect();
        assert_eq!(batches.len(), 4);
        assert_eq!(batches[0].images.shape(), &[4, 3, 32, 32]);
        assert_eq!(batches[3].images.shape(), &[3, 3, 32, 32]);
        let again: Vec<Batch<f32>> = batch_iter(&recs, 4, &aug, Some(9), 0).unwrap().collect();
        assert_eq!(batches, again);
        let mut labels: Vec<usize> = batches.iter().flat_map(|b| b.labels.clone()).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
    }
}
