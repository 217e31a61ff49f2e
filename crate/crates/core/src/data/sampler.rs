//! Epoch-shuffled mini-batches.
//!
//! The batch at iteration `t` is a pure function of `(seed, t)`: epoch
//! permutations and augmentation noise come from RNG streams keyed by the
//! epoch and iteration numbers. Resuming a run at iteration `t` therefore
//! needs no sampler state.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, streams, Augmenter, DomainPair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub weak: Tensor,
    pub strong: Tensor,
    /// Index of each row's sample in the target dataset.
    pub origin: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BatchSampler {
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchSampler {
    pub fn new(n_source: usize, n_target: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        if n_source == 0 || n_target == 0 {
            return Err(Error::config("data", "empty dataset"));
        }
        for (n, name) in [(n_source, "source"), (n_target, "target")] {
            if n < batch_size {
                log::warn!(
                    "{name} set has {n} samples, fewer than batch size {batch_size}; sampling with replacement"
                );
            }
        }
        Ok(BatchSampler {
            n_source,
            n_target,
            batch_size,
            seed,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn indices(&self, n: usize, epoch_stream: u64, iter: usize) -> Vec<usize> {
        let b = self.batch_size;
        if n < b {
            let mut rng = stream_rng(self.seed, streams::REPLACEMENT + epoch_stream + iter as u64);
            return (0..b).map(|_| rng.random_range(0..n)).collect();
        }
        // Each epoch is one permutation; leftover samples that do not fill a
        // batch are dropped so batches never straddle epochs.
        let per_epoch = n / b;
        let epoch = iter / per_epoch;
        let offset = (iter % per_epoch) * b;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream_rng(self.seed, epoch_stream + epoch as u64));
        perm[offset..offset + b].to_vec()
    }

    pub fn source_indices(&self, iter: usize) -> Vec<usize> {
        self.indices(self.n_source, streams::SOURCE_EPOCH, iter)
    }

    pub fn target_indices(&self, iter: usize) -> Vec<usize> {
        self.indices(self.n_target, streams::TARGET_EPOCH, iter)
    }

    /// Source batch with labels and target batch with both views for iteration `iter`.
    pub fn batch_at(
        &self,
        pair: &DomainPair,
        augmenter: &Augmenter,
        iter: usize,
    ) -> Result<(SourceBatch, TargetBatch)> {
        let si = self.source_indices(iter);
        let x = pair.source.features.select_rows(&si);
        let labels = si.iter().map(|&i| pair.source.labels[i] as usize).collect();

        let ti = self.target_indices(iter);
        let mut rng = stream_rng(self.seed, streams::AUGMENT + iter as u64);
        let dim = pair.target_train.dim();
        let mut weak = Vec::with_capacity(ti.len() * dim);
        let mut strong = Vec::with_capacity(ti.len() * dim);
        for &i in &ti {
            let p = augmenter.pair(pair.target_train.features.row_slice(i), i, &mut rng);
            weak.extend(p.weak);
            strong.extend(p.strong);
        }
        let n = ti.len();
        Ok((
            SourceBatch {
                x,
                labels,
                indices: si,
            },
            TargetBatch {
                weak: Tensor::new(vec![n, dim], weak)?,
                strong: Tensor::new(vec![n, dim], strong)?,
                origin: ti,
            },
        ))
    }
}

/// Endless stream of `(source, target)` batches starting at iteration 0.
pub fn sample_batches<'a>(
    pair: &'a DomainPair,
    augmenter: Augmenter,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Result<(SourceBatch, TargetBatch)>> + 'a> {
    let sampler = BatchSampler::new(pair.source.len(), pair.target_train.len(), batch_size, seed)?;
    Ok((0..).map(move |t| sampler.batch_at(pair, &augmenter, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_pair, ShiftSpec, SplitSpec, SyntheticSpec};

    fn pair(samples: usize) -> DomainPair {
        gen_synthetic_pair(&SyntheticSpec {
            split: SplitSpec::new(2, 1, 1).unwrap(),
            dim: 4,
            samples_per_class: samples,
            shift: ShiftSpec::none(0.1),
            class_radius: 1.0,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn epoch_covers_every_sample_once() {
        let s = BatchSampler::new(12, 9, 4, 7).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|t| s.source_indices(t)).collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        // second epoch is a different permutation
        assert_ne!(s.source_indices(0), s.source_indices(3));
    }

    #[test]
    fn small_dataset_samples_with_replacement() {
        let s = BatchSampler::new(3, 3, 8, 1).unwrap();
        let idx = s.source_indices(0);
        assert_eq!(idx.len(), 8);
        assert!(idx.iter().all(|&i| i < 3));
    }

    #[test]
    fn same_seed_same_batches() {
        let p = pair(6);
        let aug = Augmenter::identity();
        let a: Vec<_> = sample_batches(&p, aug, 4, 5).unwrap().take(5).map(Result::unwrap).collect();
        let b: Vec<_> = sample_batches(&p, aug, 4, 5).unwrap().take(5).map(Result::unwrap).collect();
        assert_eq!(a, b);
        let (src, tgt) = &a[0];
        assert_eq!(src.x.rows(), 4);
        assert_eq!(tgt.weak.rows(), 4);
        // identity augmentation: both views equal the stored sample
        assert_eq!(tgt.weak, tgt.strong);
        assert_eq!(tgt.weak.row_slice(0), p.target_train.features.row_slice(tgt.origin[0]));
    }

    #[test]
    fn batch_size_one_rejected() {
        assert!(BatchSampler::new(10, 10, 1, 0).is_err());
    }
}
