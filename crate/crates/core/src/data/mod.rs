//! Domain pairs: labeled source, unlabeled target, and held-out target labels.

mod augment;
mod csv;
mod sampler;
mod synthetic;

pub use augment::{AugmentConfig, AugmentedPair, Augmenter};
pub use csv::{load_embeddings_csv, write_embeddings_csv};
pub use sampler::{sample_batches, BatchSampler, SourceBatch, TargetBatch};
pub use synthetic::{gen_synthetic_pair, ShiftSpec, SyntheticSpec};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label value carried by unlabeled samples.
pub const UNLABELED: i64 = -1;

/// Category split between source and target label sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// `|L_s ∩ L_t|`
    pub n_common: usize,
    /// `|L_s − L_t|`
    pub n_src_private: usize,
    /// `|L_t − L_s|`
    pub n_tgt_private: usize,
}

impl SplitSpec {
    pub fn new(n_common: usize, n_src_private: usize, n_tgt_private: usize) -> Result<Self> {
        let s = SplitSpec {
            n_common,
            n_src_private,
            n_tgt_private,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_common == 0 {
            return Err(Error::config("data.n_common", "need at least one common class"));
        }
        Ok(())
    }

    /// Number of known classes `K = |L_s|`.
    pub fn num_known(&self) -> usize {
        self.n_common + self.n_src_private
    }

    pub fn num_total(&self) -> usize {
        self.num_known() + self.n_tgt_private
    }

    /// Class ids present in the source domain.
    pub fn source_classes(&self) -> std::ops::Range<usize> {
        0..self.num_known()
    }

    /// Class ids present in the target domain: common ids then target-private ids.
    pub fn target_classes(&self) -> Vec<usize> {
        (0..self.n_common)
            .chain(self.num_known()..self.num_total())
            .collect()
    }

    pub fn is_common(&self, class: usize) -> bool {
        class < self.n_common
    }

    pub fn is_target_private(&self, class: usize) -> bool {
        class >= self.num_known() && class < self.num_total()
    }

    /// Label a perfect model would predict: the class itself if known,
    /// otherwise the unknown sentinel `K`.
    pub fn expected_prediction(&self, class: usize) -> usize {
        if class < self.num_known() {
            class
        } else {
            self.num_known()
        }
    }
}

/// One sample as seen by callers that iterate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: i64,
}

/// Samples stored as an `N × D` matrix plus parallel ids and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Tensor,
    pub labels: Vec<i64>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, features: Tensor, labels: Vec<i64>) -> Result<Self> {
        if ids.len() != features.rows() || labels.len() != features.rows() {
            return Err(Error::shape(
                "Dataset",
                format!(
                    "{} ids, {} labels, {} feature rows",
                    ids.len(),
                    labels.len(),
                    features.rows()
                ),
            ));
        }
        if labels.iter().any(|&l| l < UNLABELED) {
            return Err(Error::config("label", "labels must be ≥ -1"));
        }
        Ok(Dataset {
            ids,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            id: self.ids[i].clone(),
            features: self.features.row_slice(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Copy with every label replaced by [`UNLABELED`].
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            ids: self.ids.clone(),
            features: self.features.clone(),
            labels: vec![UNLABELED; self.len()],
        }
    }

    /// Mean over coordinates of the per-coordinate standard deviation.
    pub fn feature_std(&self) -> f64 {
        let (n, d) = (self.len(), self.dim());
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..d {
            let col = (0..n).map(|i| self.features.get(i, j));
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            total += var.sqrt();
        }
        total / d as f64
    }

    pub fn class_counts(&self) -> std::collections::BTreeMap<i64, usize> {
        let mut m = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }
}

/// Source data, unlabeled target data, and target labels held out for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
    pub spec: SplitSpec,
    pub meta: DataMeta,
}

/// Sidecar metadata written next to dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataMeta {
    pub split: SplitSpec,
    /// Present when the pair was produced by the synthetic generator.
    #[serde(default)]
    pub generator: Option<SyntheticSpec>,
    /// Target class id → expected prediction (`K` marks unknown).
    pub class_table: Vec<(usize, usize)>,
}

impl DataMeta {
    pub fn new(split: SplitSpec, generator: Option<SyntheticSpec>) -> Self {
        let class_table = split
            .target_classes()
            .into_iter()
            .map(|c| (c, split.expected_prediction(c)))
            .collect();
        DataMeta {
            split,
            generator,
            class_table,
        }
    }
}

pub const SOURCE_FILE: &str = "source.csv";
pub const TARGET_TRAIN_FILE: &str = "target_train.csv";
pub const TARGET_EVAL_FILE: &str = "target_eval.csv";
pub const META_FILE: &str = "meta.json";

impl DomainPair {
    pub fn new(source: Dataset, target_eval: Dataset, spec: SplitSpec, meta: DataMeta) -> Result<Self> {
        spec.validate()?;
        if source.is_empty() || target_eval.is_empty() {
            return Err(Error::config("data", "source and target must each hold at least one sample"));
        }
        if source.dim() != target_eval.dim() {
            return Err(Error::shape(
                "DomainPair",
                format!("source dim {} vs target dim {}", source.dim(), target_eval.dim()),
            ));
        }
        let k = spec.num_known() as i64;
        if let Some(&bad) = source.labels.iter().find(|&&l| l < 0 || l >= k) {
            return Err(Error::config(
                "data.source",
                format!("source label {bad} outside the {k} known classes"),
            ));
        }
        let total = spec.num_total() as i64;
        if let Some(&bad) = target_eval
            .labels
            .iter()
            .find(|&&l| l < 0 || l >= total || (l as usize) >= spec.n_common && (l as usize) < spec.num_known())
        {
            return Err(Error::config(
                "data.target_eval",
                format!("target label {bad} is not a common or target-private class"),
            ));
        }
        let target_train = target_eval.without_labels();
        Ok(DomainPair {
            source,
            target_train,
            target_eval,
            spec,
            meta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.source.dim()
    }

    /// Writes the three CSV files and the JSON sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_embeddings_csv(&self.source, &dir.join(SOURCE_FILE))?;
        write_embeddings_csv(&self.target_train, &dir.join(TARGET_TRAIN_FILE))?;
        write_embeddings_csv(&self.target_eval, &dir.join(TARGET_EVAL_FILE))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let p = dir.join(META_FILE);
        std::fs::write(&p, meta).map_err(|e| Error::io(p, e))
    }

    /// Reads a directory written by [`DomainPair::save`] (or assembled by hand
    /// from user embeddings with the same layout).
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(META_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: DataMeta = serde_json::from_str(&text)?;
        let source = load_embeddings_csv(&dir.join(SOURCE_FILE))?;
        let target_eval = load_embeddings_csv(&dir.join(TARGET_EVAL_FILE))?;
        let spec = meta.split;
        DomainPair::new(source, target_eval, spec, meta)
    }
}

/// Deterministic RNG for a named purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const MODEL_INIT: u64 = 0;
    pub const GENERATOR: u64 = 1;
    pub const SOURCE_EPOCH: u64 = 2 << 40;
    pub const TARGET_EPOCH: u64 = 3 << 40;
    pub const AUGMENT: u64 = 4 << 40;
    pub const REPLACEMENT: u64 = 5 << 40;
}
