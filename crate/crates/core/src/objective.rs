//! Extractor + dual classifier as one trainable network, and the batched
//! loss terms recorded on the autodiff tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{DualClassifier, ProbTriple, KL_FLOOR};
use crate::nn::FeatureExtractor;
use crate::tensor::{Param, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub extractor: FeatureExtractor,
    pub classifier: DualClassifier,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub features: Var,
    /// `F · Pᵀ`
    pub logits_p: Var,
    /// `F · Rpᵀ`
    pub logits_r: Var,
    /// `[F · Pᵀ, F · Rpᵀ]`
    pub collab: Var,
    pub margin: Var,
}

impl Network {
    pub fn new(extractor: FeatureExtractor, classifier: DualClassifier) -> Result<Self> {
        if extractor.output_dim() != classifier.feature_dim() {
            return Err(Error::config(
                "model.feature_dim",
                format!(
                    "extractor emits {} features, classifier expects {}",
                    extractor.output_dim(),
                    classifier.feature_dim()
                ),
            ));
        }
        Ok(Network {
            extractor,
            classifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Slot of the prototype matrix; extractor parameters come first.
    pub fn prototype_slot(&self) -> usize {
        self.extractor.num_params()
    }

    pub fn reciprocal_slot(&self) -> usize {
        self.prototype_slot() + 1
    }

    pub fn margin_slot(&self) -> usize {
        self.prototype_slot() + 2
    }

    /// All parameters in slot order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.extractor.params();
        v.extend(self.classifier.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.extractor.params_mut();
        v.extend(self.classifier.params_mut());
        v
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Heads> {
        let xv = tape.constant(x.clone());
        let features = self.extractor.forward_features(tape, xv, 0)?;
        self.heads(tape, features)
    }

    /// Records both heads on top of already-recorded features.
    pub fn heads(&self, tape: &mut Tape, features: Var) -> Result<Heads> {
        let p = tape.param(self.prototype_slot(), &self.classifier.prototypes.value);
        let r = tape.param(self.reciprocal_slot(), &self.classifier.reciprocals.value);
        let margin = tape.param(self.margin_slot(), &self.classifier.margin.value);
        let logits_p = tape.matmul_nt(features, p)?;
        let logits_r = tape.matmul_nt(features, r)?;
        let collab = tape.concat_cols(logits_p, logits_r)?;
        Ok(Heads {
            features,
            logits_p,
            logits_r,
            collab,
            margin,
        })
    }

    /// Per-row probability triples read off recorded heads.
    pub fn triples(tape: &Tape, heads: &Heads) -> Vec<ProbTriple> {
        let (lp, lr) = (tape.value(heads.logits_p), tape.value(heads.logits_r));
        (0..lp.rows())
            .map(|i| ProbTriple::from_logits(lp.row_slice(i).to_vec(), lr.row_slice(i).to_vec()))
            .collect()
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.extractor.embed(x)
    }
}

/// Per-row source terms plus the combined batch mean.
#[derive(Clone, Copy, Debug)]
pub struct SourceTerms {
    pub ce_proto: Var,
    pub ce_recip: Var,
    pub open: Var,
    pub split: Option<Var>,
    /// `mean(ce_p + ce_r + λ (open + split))`
    pub total: Var,
}

fn check_labels(op: &'static str, tape: &Tape, logits: Var, labels: &[usize]) -> Result<()> {
    let v = tape.value(logits);
    if labels.len() != v.rows() {
        return Err(Error::shape(op, format!("{} labels for {} rows", labels.len(), v.rows())));
    }
    Ok(())
}

/// Row-wise `−log softmax(logits)[y]`.
pub fn cross_entropy_rows(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits);
    let picked = tape.pick(ls, labels)?;
    Ok(tape.neg(picked))
}

/// Row-wise `max(−f·r_y − R, 0)` given `logits_r = F·Rpᵀ`.
pub fn open_rows(tape: &mut Tape, logits_r: Var, margin: Var, labels: &[usize]) -> Result<Var> {
    let picked = tape.pick(logits_r, labels)?;
    let dist = tape.neg(picked);
    let excess = tape.sub(dist, margin)?;
    Ok(tape.relu(excess))
}

/// Row-wise `max(−f·p_y − minᵢ(−f·r_i), 0)`.
pub fn split_rows(tape: &mut Tape, heads: &Heads, labels: &[usize]) -> Result<Var> {
    let picked = tape.pick(heads.logits_p, labels)?;
    let d_proto = tape.neg(picked);
    let d_recip = tape.neg(heads.logits_r);
    let nearest = tape.row_min(d_recip);
    let gap = tape.sub(d_proto, nearest)?;
    Ok(tape.relu(gap))
}

pub fn source_loss(
    tape: &mut Tape,
    heads: &Heads,
    labels: &[usize],
    lambda: f64,
    with_split: bool,
) -> Result<SourceTerms> {
    check_labels("source_loss", tape, heads.logits_p, labels)?;
    if labels.is_empty() {
        return Err(Error::shape("source_loss", "empty batch"));
    }
    let ce_proto = cross_entropy_rows(tape, heads.logits_p, labels)?;
    let neg_r = tape.neg(heads.logits_r);
    let ce_recip = cross_entropy_rows(tape, neg_r, labels)?;
    let open = open_rows(tape, heads.logits_r, heads.margin, labels)?;
    let split = if with_split {
        Some(split_rows(tape, heads, labels)?)
    } else {
        None
    };
    let ce = tape.add(ce_proto, ce_recip)?;
    let reg = match split {
        Some(s) => tape.add(open, s)?,
        None => open,
    };
    let reg = tape.scale(reg, lambda);
    let rows = tape.add(ce, reg)?;
    let total = tape.mean(rows);
    Ok(SourceTerms {
        ce_proto,
        ce_recip,
        open,
        split,
        total,
    })
}

/// Batch mean of `KL(p_c(strong) ‖ p_c(weak))`; the weak side is a constant.
pub fn kl_loss(tape: &mut Tape, collab_strong: Var, collab_weak: &Tensor) -> Result<Var> {
    let mut target = collab_weak.clone();
    let c = target.cols();
    for row in target.data_mut().chunks_mut(c) {
        let lse = crate::autodiff::log_sum_exp(row);
        row.iter_mut().for_each(|x| *x = (*x - lse).max(KL_FLOOR.ln()));
    }
    let log_w = tape.constant(target);
    let log_s = tape.log_softmax(collab_strong);
    let p_s = tape.exp(log_s);
    let diff = tape.sub(log_s, log_w)?;
    let prod = tape.mul(p_s, diff)?;
    let rows = tape.sum_rows(prod);
    Ok(tape.mean(rows))
}

/// Row-wise Shannon entropy of `softmax(logits)`.
pub fn entropy_rows(tape: &mut Tape, logits: Var) -> Result<Var> {
    let ls = tape.log_softmax(logits);
    let p = tape.exp(ls);
    let plogp = tape.mul(p, ls)?;
    let s = tape.sum_rows(plogp);
    Ok(tape.neg(s))
}

/// `w · mean_known H + (1 − w) · mean_unknown H` over the listed rows of
/// `entropy`, with `w = |unknown| / (|known| + |unknown|)`.
///
/// Returns `None` when either set is empty, where the weighting makes the
/// term vanish. With `weighting = false` the plain mean over both sets is
/// used instead.
pub fn weighted_entropy_loss(
    tape: &mut Tape,
    entropy: Var,
    known: &[usize],
    unknown: &[usize],
    weighting: bool,
) -> Result<Option<Var>> {
    if !weighting {
        if known.is_empty() && unknown.is_empty() {
            return Ok(None);
        }
        let all: Vec<usize> = known.iter().chain(unknown).copied().collect();
        let rows = tape.select_rows(entropy, &all)?;
        return Ok(Some(tape.mean(rows)));
    }
    if known.is_empty() || unknown.is_empty() {
        return Ok(None);
    }
    let w = crate::model::known_entropy_weight(known.len(), unknown.len());
    let rows_k = tape.select_rows(entropy, known)?;
    let mean_k = tape.mean(rows_k);
    let term_k = tape.scale(mean_k, w);
    let rows_u = tape.select_rows(entropy, unknown)?;
    let mean_u = tape.mean(rows_u);
    let term_u = tape.scale(mean_u, 1.0 - w);
    Ok(Some(tape.add(term_k, term_u)?))
}

/// Mean open-space loss over selected rows with pseudo-labels.
pub fn open_loss_selected(
    tape: &mut Tape,
    heads: &Heads,
    rows: &[usize],
    pseudo_labels: &[usize],
) -> Result<Option<Var>> {
    if rows.is_empty() {
        return Ok(None);
    }
    if rows.len() != pseudo_labels.len() {
        return Err(Error::shape("open_loss_selected", "one pseudo-label per row"));
    }
    let lr = tape.select_rows(heads.logits_r, rows)?;
    let per_row = open_rows(tape, lr, heads.margin, pseudo_labels)?;
    Ok(Some(tape.mean(per_row)))
}
