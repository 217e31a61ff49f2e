//! Source-only classifier with a fixed entropy threshold for rejection.
//!
//! Same extractor and prototype head as the full model, trained on source
//! cross-entropy alone with no target data. A target sample is called
//! unknown when the entropy of its prototype softmax exceeds
//! `entropy_threshold · ln K`.

use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::data::{Augmenter, BatchSampler, Dataset, DomainPair};
use crate::error::{Error, Result};
use crate::eval::{score_predictions, EvalReport};
use crate::model::{entropy, Prediction};
use crate::nn::softmax_row;
use crate::objective::{cross_entropy_rows, Network};
use crate::optim::OptimState;
use crate::trainer::TrainState;

pub struct SourceOnly {
    pub net: Network,
    /// Fraction of `ln K` above which a sample is rejected.
    pub entropy_threshold: f64,
}

impl SourceOnly {
    /// Prototype-softmax prediction; `anomaly` holds `ln K − H` so that, as for
    /// the full model, smaller means more unknown-like.
    pub fn predict(&self, f: &[f64]) -> Result<Prediction> {
        let k = self.net.num_classes();
        let t = self.net.classifier.prob_triple(f)?;
        let p = softmax_row(&t.logits_p);
        let h = entropy(&p);
        let ln_k = (k as f64).ln();
        let j = t.argmax_proto();
        let unknown = k > 1 && h > self.entropy_threshold * ln_k;
        Ok(Prediction {
            label: if unknown { k } else { j },
            confidence: p[j],
            anomaly: ln_k - h,
        })
    }

    pub fn evaluate(&self, data: &Dataset, pair: &DomainPair) -> Result<EvalReport> {
        let feats = self.net.embed(&data.features)?;
        let preds = (0..feats.rows())
            .map(|i| self.predict(feats.row_slice(i)))
            .collect::<Result<Vec<_>>>()?;
        score_predictions(&preds, &data.labels, &pair.spec)
    }
}

/// Trains for `cfg.train.total_iters` iterations on source batches only.
pub fn train_source_only(cfg: &RunConfig, pair: &DomainPair) -> Result<SourceOnly> {
    cfg.validate()?;
    let TrainState { mut net, .. } = TrainState::init(cfg, pair.input_dim())?;
    let mut optim = OptimState::new(cfg.optim.learning_rate, cfg.optim.momentum, cfg.optim.weight_decay)?
        .with_schedule(cfg.optim.schedule, cfg.train.total_iters);
    let sampler = BatchSampler::new(
        pair.source.len(),
        pair.target_train.len(),
        cfg.train.batch_size,
        cfg.seed,
    )?;
    let identity = Augmenter::identity();
    for iter in 0..cfg.train.total_iters {
        let (src, _) = sampler.batch_at(pair, &identity, iter)?;
        let mut tape = Tape::new();
        let heads = net.forward(&mut tape, &src.x)?;
        let ce = cross_entropy_rows(&mut tape, heads.logits_p, &src.labels)?;
        let loss = tape.mean(ce);
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                iter,
                detail: format!("source-only cross-entropy {v}"),
            });
        }
        let grads = tape.backward(loss)?;
        let mut params = net.params_mut();
        grads.accumulate(&mut params)?;
        optim.sgd_step(&mut params)?;
    }
    Ok(SourceOnly {
        net,
        entropy_threshold: cfg.baseline.entropy_threshold,
    })
}
