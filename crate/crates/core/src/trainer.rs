//! Warm-up → adaptation curriculum.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::data::{stream_rng, streams, Augmenter, BatchSampler, DomainPair, SourceBatch, TargetBatch};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::DualClassifier;
use crate::nn::FeatureExtractor;
use crate::objective::{
    entropy_rows, kl_loss, open_loss_selected, source_loss, weighted_entropy_loss, Heads, Network,
};
use crate::optim::OptimState;
use crate::selection::{select_confident, Selected, ThresholdState, View};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Adapt,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Adapt => "adapt",
        })
    }
}

/// One JSON-lines record per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub phase: Phase,
    pub loss_total: f64,
    /// Source part of the total.
    pub loss_src: f64,
    /// Target part of the total: `kl + ent + λ·open_target`.
    pub loss_trg: f64,
    pub loss_kl: f64,
    pub loss_ent: Option<f64>,
    pub loss_open_target: Option<f64>,
    /// Thresholds after this iteration's update.
    pub rho_c: f64,
    pub rho_o: f64,
    pub n_known_sel: usize,
    pub n_unknown_sel: usize,
    pub margin: f64,
    pub h_score: Option<f64>,
    pub acc_known: Option<f64>,
    pub acc_unknown: Option<f64>,
}

/// Everything that changes between iterations. Batches are recomputed from
/// `(seed, iter)`, so no sampler state is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed iterations.
    pub iter: usize,
    pub net: Network,
    pub thresholds: ThresholdState,
    pub optim: OptimState,
}

impl TrainState {
    /// Fresh model and optimizer seeded from `cfg.seed`.
    pub fn init(cfg: &RunConfig, input_dim: usize) -> Result<Self> {
        let k = cfg.data.split()?.num_known();
        let mut rng = stream_rng(cfg.seed, streams::MODEL_INIT);
        let extractor = FeatureExtractor::new(
            input_dim,
            &cfg.model.hidden,
            cfg.model.feature_dim,
            cfg.model.feature_activation,
            &mut rng,
        )?;
        let classifier = DualClassifier::new(
            k,
            cfg.model.feature_dim,
            cfg.model.init_std,
            cfg.model.init_margin,
            &mut rng,
        )?;
        let optim = OptimState::new(cfg.optim.learning_rate, cfg.optim.momentum, cfg.optim.weight_decay)?
            .with_schedule(cfg.optim.schedule, cfg.train.total_iters);
        Ok(TrainState {
            iter: 0,
            net: Network::new(extractor, classifier)?,
            thresholds: ThresholdState::new(cfg.train.alpha)?,
            optim,
        })
    }
}

/// Loss values for one step, before the parameter update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub src: f64,
    pub trg: f64,
    pub kl: f64,
    pub ent: Option<f64>,
    pub open_target: Option<f64>,
    pub n_known_sel: usize,
    pub n_unknown_sel: usize,
}

pub struct Trainer<'a> {
    cfg: RunConfig,
    pair: &'a DomainPair,
    sampler: BatchSampler,
    augmenter: Augmenter,
    warmup: usize,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: RunConfig, pair: &'a DomainPair) -> Result<Self> {
        let state = TrainState::init(&cfg, pair.input_dim())?;
        Self::resume(cfg, pair, state)
    }

    /// Continues from a saved state; the next step is iteration `state.iter`.
    pub fn resume(cfg: RunConfig, pair: &'a DomainPair, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if cfg.data.split()? != pair.spec {
            return Err(Error::config(
                "data",
                "class split in the config does not match the dataset metadata",
            ));
        }
        if state.net.extractor.input_dim() != pair.input_dim() {
            return Err(Error::config(
                "model.input_dim",
                format!(
                    "model expects {} input features, data has {}",
                    state.net.extractor.input_dim(),
                    pair.input_dim()
                ),
            ));
        }
        let sampler = BatchSampler::new(
            pair.source.len(),
            pair.target_train.len(),
            cfg.train.batch_size,
            cfg.seed,
        )?;
        let augmenter = Augmenter::new(&cfg.augment, pair.target_train.feature_std())?;
        let warmup = cfg.effective_warmup();
        Ok(Trainer {
            cfg,
            pair,
            sampler,
            augmenter,
            warmup,
            state,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn augmenter(&self) -> &Augmenter {
        &self.augmenter
    }

    pub fn warmup_iters(&self) -> usize {
        self.warmup
    }

    pub fn phase_at(&self, iter: usize) -> Phase {
        if iter < self.warmup {
            Phase::Warmup
        } else {
            Phase::Adapt
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.iter >= self.cfg.train.total_iters
    }

    pub fn batch_at(&self, iter: usize) -> Result<(SourceBatch, TargetBatch)> {
        self.sampler.batch_at(self.pair, &self.augmenter, iter)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.state.net, &self.pair.target_eval, &self.pair.spec)
    }

    /// Runs one iteration and returns its metrics row.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let iter = self.state.iter;
        let (src, tgt) = self.batch_at(iter)?;
        let phase = self.phase_at(iter);
        let losses = match phase {
            Phase::Warmup => self.step_warmup(&src, &tgt)?,
            Phase::Adapt => self.step_adapt(&src, &tgt)?,
        };
        self.state.iter += 1;
        let done = self.state.iter;
        let interval = self.cfg.train.eval_interval;
        let report = if (interval > 0 && done % interval == 0) || done == self.cfg.train.total_iters {
            Some(self.evaluate()?)
        } else {
            None
        };
        Ok(MetricsRow {
            iter,
            phase,
            loss_total: losses.total,
            loss_src: losses.src,
            loss_trg: losses.trg,
            loss_kl: losses.kl,
            loss_ent: losses.ent,
            loss_open_target: losses.open_target,
            rho_c: self.state.thresholds.rho_c,
            rho_o: self.state.thresholds.rho_o,
            n_known_sel: losses.n_known_sel,
            n_unknown_sel: losses.n_unknown_sel,
            margin: self.state.net.classifier.margin(),
            h_score: report.as_ref().map(|r| r.h_score),
            acc_known: report.as_ref().map(|r| r.acc_common),
            acc_unknown: report.as_ref().and_then(|r| r.acc_unknown),
        })
    }

    /// `L_src + L_kl`, then the SGD step and threshold update.
    pub fn step_warmup(&mut self, src: &SourceBatch, tgt: &TargetBatch) -> Result<StepLosses> {
        self.step_with(src, tgt, false)
    }

    /// `L_src + L_kl + L_ent + λ·L_o` on the selected target samples.
    pub fn step_adapt(&mut self, src: &SourceBatch, tgt: &TargetBatch) -> Result<StepLosses> {
        self.step_with(src, tgt, true)
    }

    fn step_with(&mut self, src: &SourceBatch, tgt: &TargetBatch, adapt: bool) -> Result<StepLosses> {
        let iter = self.state.iter;
        let (ns, nt) = (src.x.rows(), tgt.weak.rows());
        let x = stack_rows(&[&src.x, &tgt.weak, &tgt.strong])?;

        let mut tape = Tape::new();
        let all = self.state.net.forward(&mut tape, &x)?;
        let src_rows: Vec<usize> = (0..ns).collect();
        let weak_rows: Vec<usize> = (ns..ns + nt).collect();
        let strong_rows: Vec<usize> = (ns + nt..ns + 2 * nt).collect();
        let tgt_rows: Vec<usize> = (ns..ns + 2 * nt).collect();
        let src_heads = sub_heads(&mut tape, &all, &src_rows)?;
        let tgt_heads = sub_heads(&mut tape, &all, &tgt_rows)?;

        let lambda = self.cfg.train.lambda;
        let src_terms = source_loss(
            &mut tape,
            &src_heads,
            &src.labels,
            lambda,
            !self.cfg.ablation.disable_split,
        )?;

        let triples = Network::triples(&tape, &tgt_heads);
        let (weak_t, strong_t) = triples.split_at(nt);
        let weak_collab = tape.value(all.collab).select_rows(&weak_rows);
        let strong_collab = tape.select_rows(all.collab, &strong_rows)?;
        let kl = kl_loss(&mut tape, strong_collab, &weak_collab)?;

        let mut trg = kl;
        let (mut ent, mut open, mut n_known, mut n_unknown) = (None, None, 0, 0);
        if adapt {
            let sel = select_confident(weak_t, strong_t, &self.state.thresholds, self.cfg.ablation.criteria())?;
            n_known = sel.n_known();
            n_unknown = sel.n_unknown();
            // rows of tgt_heads: weak views first, then strong
            let row = |s: &Selected| match s.view {
                View::Weak => s.index,
                View::Strong => nt + s.index,
            };
            let known_rows: Vec<usize> = sel.known.iter().map(row).collect();
            let unknown_rows: Vec<usize> = sel.unknown.iter().map(row).collect();
            let h = entropy_rows(&mut tape, tgt_heads.collab)?;
            ent = weighted_entropy_loss(
                &mut tape,
                h,
                &known_rows,
                &unknown_rows,
                !self.cfg.ablation.disable_entropy_weighting,
            )?;
            open = open_loss_selected(&mut tape, &tgt_heads, &known_rows, &sel.pseudo_labels)?;
            if let Some(e) = ent {
                trg = tape.add(trg, e)?;
            }
            if let Some(o) = open {
                let scaled = tape.scale(o, lambda);
                trg = tape.add(trg, scaled)?;
            }
        }
        let total = tape.add(src_terms.total, trg)?;

        let value = |v| tape.value(v).item();
        let losses = StepLosses {
            total: value(total),
            src: value(src_terms.total),
            trg: value(trg),
            kl: value(kl),
            ent: ent.map(value),
            open_target: open.map(value),
            n_known_sel: n_known,
            n_unknown_sel: n_unknown,
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite {
                iter,
                detail: format!(
                    "src {} kl {} ent {:?} open {:?} margin {}",
                    losses.src,
                    losses.kl,
                    losses.ent,
                    losses.open_target,
                    self.state.net.classifier.margin()
                ),
            });
        }

        let grads = tape.backward(total)?;
        let mut params = self.state.net.params_mut();
        grads.accumulate(&mut params)?;
        self.state.optim.sgd_step(&mut params)?;
        self.state.net.classifier.clamp_margin();
        // selection above used the thresholds from before this update
        self.state.thresholds.update_from_batch(weak_t);
        Ok(losses)
    }

    /// Steps until `total_iters`, handing each row to `sink`.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<()>
    where
        F: FnMut(&MetricsRow) -> Result<()>,
    {
        while !self.is_finished() {
            let row = self.step()?;
            sink(&row)?;
        }
        Ok(())
    }
}

/// Trained model, the full metrics history, and a final evaluation.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    pub report: EvalReport,
}

pub fn run(cfg: &RunConfig, pair: &DomainPair) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone(), pair)?;
    let mut metrics = Vec::with_capacity(cfg.train.total_iters);
    trainer.run_with(|row| {
        metrics.push(row.clone());
        Ok(())
    })?;
    let report = trainer.evaluate()?;
    Ok(RunOutput {
        state: trainer.into_state(),
        metrics,
        report,
    })
}

/// One JSON object per line.
pub fn metrics_to_jsonl(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub(crate) fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::shape("stack_rows", "column counts differ"));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], data)
}

fn sub_heads(tape: &mut Tape, heads: &Heads, rows: &[usize]) -> Result<Heads> {
    Ok(Heads {
        features: tape.select_rows(heads.features, rows)?,
        logits_p: tape.select_rows(heads.logits_p, rows)?,
        logits_r: tape.select_rows(heads.logits_r, rows)?,
        collab: tape.select_rows(heads.collab, rows)?,
        margin: heads.margin,
    })
}
