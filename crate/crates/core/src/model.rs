//! Dual classifiers of prototypes and reciprocal points.
//!
//! Distances are negative dot products, `d(f, q) = −f·q`. The prototype head
//! scores class `k` with `f·p_k` (near prototype ⇒ high), the reciprocal head
//! with `−f·r_k` (far from reciprocal ⇒ high). The collaborative distribution
//! `p_c` is a softmax over `[f·p_1 … f·p_K, f·r_1 … f·r_K]`, so its argmax is
//! the nearest point among all `2K` prototypes and reciprocals.
//!
//! The functions here work on single feature vectors and are the reference
//! semantics; [`crate::objective`] records the same quantities batched on the
//! autodiff tape for training.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::argmax;
use crate::error::{Error, Result};
use crate::nn::softmax_row;
use crate::tensor::{dot, Param, Tensor};

/// Floor applied to the weak-view probabilities inside the KL term.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualClassifier {
    /// `K × D`
    pub prototypes: Param,
    /// `K × D`
    pub reciprocals: Param,
    /// Shared open-space margin `R`, kept non-negative.
    pub margin: Param,
}

impl DualClassifier {
    /// Prototypes and reciprocals drawn from `N(0, init_std²)`, margin at `init_margin`.
    pub fn new<R: Rng + ?Sized>(
        num_classes: usize,
        feature_dim: usize,
        init_std: f64,
        init_margin: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("data.n_common", "need at least one known class"));
        }
        if feature_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be positive"));
        }
        if !(init_margin >= 0.0) {
            return Err(Error::config("model.init_margin", "must be non-negative"));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::config("model.init_std", e.to_string()))?;
        let mut draw = || {
            let data = (0..num_classes * feature_dim).map(|_| normal.sample(rng)).collect();
            Param::new(Tensor::new(vec![num_classes, feature_dim], data).expect("shape"))
        };
        let prototypes = draw();
        let reciprocals = draw();
        Ok(DualClassifier {
            prototypes,
            reciprocals,
            margin: Param::new(Tensor::scalar(init_margin)),
        })
    }

    pub fn from_parts(prototypes: Tensor, reciprocals: Tensor, margin: f64) -> Result<Self> {
        if prototypes.shape() != reciprocals.shape() || prototypes.shape().len() != 2 {
            return Err(Error::shape(
                "DualClassifier",
                format!("{:?} vs {:?}", prototypes.shape(), reciprocals.shape()),
            ));
        }
        if !(margin >= 0.0) {
            return Err(Error::config("model.init_margin", "must be non-negative"));
        }
        Ok(DualClassifier {
            prototypes: Param::new(prototypes),
            reciprocals: Param::new(reciprocals),
            margin: Param::new(Tensor::scalar(margin)),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.value.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.value.cols()
    }

    pub fn margin(&self) -> f64 {
        self.margin.value.item()
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        self.prototypes.value.row_slice(k)
    }

    pub fn reciprocal(&self, k: usize) -> &[f64] {
        self.reciprocals.value.row_slice(k)
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.prototypes, &self.reciprocals, &self.margin]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.prototypes, &mut self.reciprocals, &mut self.margin]
    }

    /// Projects the margin back onto `R ≥ 0`.
    pub fn clamp_margin(&mut self) {
        let r = &mut self.margin.value.data_mut()[0];
        if *r < 0.0 {
            *r = 0.0;
        }
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.feature_dim() {
            return Err(Error::shape(
                "DualClassifier",
                format!("feature has {} dims, classifier expects {}", f.len(), self.feature_dim()),
            ));
        }
        Ok(())
    }

    fn check_class(&self, op: &'static str, k: usize) -> Result<()> {
        if k >= self.num_classes() {
            return Err(Error::shape(
                op,
                format!("class {k} out of range for K = {}", self.num_classes()),
            ));
        }
        Ok(())
    }

    pub fn prob_triple(&self, f: &[f64]) -> Result<ProbTriple> {
        self.check(f)?;
        let k = self.num_classes();
        let logits_p = (0..k).map(|i| dot(f, self.prototype(i))).collect();
        let logits_r = (0..k).map(|i| dot(f, self.reciprocal(i))).collect();
        Ok(ProbTriple::from_logits(logits_p, logits_r))
    }

    /// `max(d(f, r_k) − R, 0)`
    pub fn loss_open(&self, f: &[f64], k: usize) -> Result<f64> {
        self.check(f)?;
        self.check_class("loss_open", k)?;
        Ok((distance(f, self.reciprocal(k)) - self.margin()).max(0.0))
    }

    /// `max(d(f, p_k) − minᵢ d(f, r_i), 0)`
    pub fn loss_split(&self, f: &[f64], k: usize) -> Result<f64> {
        self.check(f)?;
        self.check_class("loss_split", k)?;
        let nearest_recip = (0..self.num_classes())
            .map(|i| distance(f, self.reciprocal(i)))
            .fold(f64::INFINITY, f64::min);
        Ok((distance(f, self.prototype(k)) - nearest_recip).max(0.0))
    }

    /// Batch mean of `L_CE_p + L_CE_r + λ (L_o + L_split)`.
    ///
    /// `with_split = false` drops the split term (ablation).
    pub fn loss_source(
        &self,
        features: &Tensor,
        labels: &[usize],
        lambda: f64,
        with_split: bool,
    ) -> Result<f64> {
        if features.rows() != labels.len() || labels.is_empty() {
            return Err(Error::shape(
                "loss_source",
                format!("{} features for {} labels", features.rows(), labels.len()),
            ));
        }
        if !(lambda >= 0.0) {
            return Err(Error::config("train.lambda", "must be non-negative"));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let f = features.row_slice(i);
            let t = self.prob_triple(f)?;
            let split = if with_split { self.loss_split(f, y)? } else { 0.0 };
            total += loss_ce_proto(&t, y)?
                + loss_ce_recip(&t, y)?
                + lambda * (self.loss_open(f, y)? + split);
        }
        Ok(total / labels.len() as f64)
    }

    pub fn predict(&self, f: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_triple(&self.prob_triple(f)?))
    }
}

/// `d(f, q) = −⟨f, q⟩`
pub fn distance(f: &[f64], point: &[f64]) -> f64 {
    -dot(f, point)
}

/// Per-sample outputs of both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTriple {
    /// `f·p_k`
    pub logits_p: Vec<f64>,
    /// `f·r_k`
    pub logits_r: Vec<f64>,
    /// `softmax(f·p_k)`
    pub p_p: Vec<f64>,
    /// `softmax(−f·r_k)`
    pub p_r: Vec<f64>,
    /// `softmax([f·p, f·r])`, length `2K`
    pub p_c: Vec<f64>,
}

impl ProbTriple {
    pub fn from_logits(logits_p: Vec<f64>, logits_r: Vec<f64>) -> Self {
        let p_p = softmax_row(&logits_p);
        let neg_r: Vec<f64> = logits_r.iter().map(|x| -x).collect();
        let p_r = softmax_row(&neg_r);
        let collab: Vec<f64> = logits_p.iter().chain(&logits_r).copied().collect();
        let p_c = softmax_row(&collab);
        ProbTriple {
            logits_p,
            logits_r,
            p_p,
            p_r,
            p_c,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.p_p.len()
    }

    /// Index of the nearest prototype.
    pub fn argmax_proto(&self) -> usize {
        argmax(&self.p_p)
    }

    /// Index of the farthest reciprocal point.
    pub fn argmax_recip(&self) -> usize {
        argmax(&self.p_r)
    }

    pub fn argmax_collab(&self) -> usize {
        argmax(&self.p_c)
    }

    pub fn max_collab(&self) -> f64 {
        self.p_c[self.argmax_collab()]
    }

    pub fn is_known(&self) -> bool {
        self.argmax_collab() < self.num_classes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Class index in `[0, K)`, or `K` for unknown.
    pub label: usize,
    pub confidence: f64,
    pub anomaly: f64,
}

impl Prediction {
    pub fn from_triple(t: &ProbTriple) -> Self {
        let k = t.num_classes();
        let j = t.argmax_collab();
        Prediction {
            label: if j < k { j } else { k },
            confidence: t.p_c[j],
            anomaly: anomaly_score(t),
        }
    }

    pub fn is_unknown(&self, num_classes: usize) -> bool {
        self.label == num_classes
    }
}

fn check_label(op: &'static str, y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::shape(op, format!("label {y} out of range for K = {k}")));
    }
    Ok(())
}

/// `−log p_p[y]`, computed from logits.
pub fn loss_ce_proto(t: &ProbTriple, y: usize) -> Result<f64> {
    check_label("loss_ce_proto", y, t.num_classes())?;
    Ok(crate::autodiff::log_sum_exp(&t.logits_p) - t.logits_p[y])
}

/// `−log p_r[y]`, computed from logits.
pub fn loss_ce_recip(t: &ProbTriple, y: usize) -> Result<f64> {
    check_label("loss_ce_recip", y, t.num_classes())?;
    let neg: Vec<f64> = t.logits_r.iter().map(|x| -x).collect();
    Ok(crate::autodiff::log_sum_exp(&neg) + t.logits_r[y])
}

/// `KL(p_strong ‖ p_weak)` with `0·log 0 = 0` and the weak side floored at [`KL_FLOOR`].
pub fn loss_kl(p_strong: &[f64], p_weak: &[f64]) -> Result<f64> {
    if p_strong.len() != p_weak.len() {
        return Err(Error::shape(
            "loss_kl",
            format!("{} vs {} entries", p_strong.len(), p_weak.len()),
        ));
    }
    Ok(p_strong
        .iter()
        .zip(p_weak)
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, w)| s * (s.ln() - w.max(KL_FLOOR).ln()))
        .sum())
}

/// Shannon entropy with `0·log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Weight on the known-set entropy: `|B̂_o| / (|B̂_c| + |B̂_o|)`.
pub fn known_entropy_weight(n_known: usize, n_unknown: usize) -> f64 {
    if n_known + n_unknown == 0 {
        0.0
    } else {
        n_unknown as f64 / (n_known + n_unknown) as f64
    }
}

/// `w · mean_known H + (1 − w) · mean_unknown H`; an empty set contributes 0.
pub fn loss_entropy_weighted<P: AsRef<[f64]>>(known: &[P], unknown: &[P]) -> f64 {
    let w = known_entropy_weight(known.len(), unknown.len());
    let mean_h = |set: &[P]| {
        if set.is_empty() {
            0.0
        } else {
            set.iter().map(|p| entropy(p.as_ref())).sum::<f64>() / set.len() as f64
        }
    };
    w * mean_h(known) + (1.0 - w) * mean_h(unknown)
}

/// `−log max_{j ≥ K} p_c[j]`. Smaller means more unknown-like.
pub fn anomaly_score(t: &ProbTriple) -> f64 {
    let k = t.num_classes();
    let m = t.p_c[k..].iter().copied().fold(0.0, f64::max);
    -m.ln()
}
