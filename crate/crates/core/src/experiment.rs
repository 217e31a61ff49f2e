//! Multi-seed trials: ablation tables and unknown-class-count sweeps.
//!
//! Trials are independent and run on the rayon pool; results come back in
//! job order regardless of scheduling.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::train_source_only;
use crate::config::RunConfig;
use crate::data::{gen_synthetic_pair, DomainPair};
use crate::error::Result;
use crate::eval::summarize;
use crate::trainer::{run, MetricsRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSplit,
    NoWarmup,
    NoConsistency,
    NoThreshold,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoSplit,
        Variant::NoWarmup,
        Variant::NoConsistency,
        Variant::NoThreshold,
    ];

    pub fn apply(self, cfg: &mut RunConfig) {
        let a = &mut cfg.ablation;
        match self {
            Variant::Full => {}
            Variant::NoSplit => a.disable_split = true,
            Variant::NoWarmup => a.disable_warmup = true,
            Variant::NoConsistency => a.disable_consistency_criterion = true,
            Variant::NoThreshold => a.disable_threshold_criterion = true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSplit => "no_split",
            Variant::NoWarmup => "no_warmup",
            Variant::NoConsistency => "no_consistency_criterion",
            Variant::NoThreshold => "no_threshold_criterion",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where trial data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Regenerate the synthetic benchmark from each trial's seed.
    Synthetic,
    /// Reuse one dataset; only the training seed varies.
    Fixed(DomainPair),
}

impl DataSource {
    pub fn pair_for(&self, cfg: &RunConfig, seed: u64) -> Result<DomainPair> {
        match self {
            DataSource::Synthetic => gen_synthetic_pair(&cfg.data.synthetic(seed)?),
            DataSource::Fixed(p) => Ok(p.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub seed: u64,
    pub n_tgt_private: usize,
    pub h_score: f64,
    pub acc_common: f64,
    pub acc_unknown: Option<f64>,
    pub auroc: Option<f64>,
    pub mean_anomaly_known: Option<f64>,
    pub mean_anomaly_unknown: Option<f64>,
    /// Source-only baseline H-score on the same data, when requested.
    pub baseline_h_score: Option<f64>,
    /// Largest `|Δρ_c|`, `|Δρ_o|` over the last ten warm-up iterations.
    pub warmup_final_delta: Option<(f64, f64)>,
    /// Smallest and largest threshold value seen.
    pub rho_range: (f64, f64),
}

/// Largest per-iteration threshold change over the last `window` warm-up rows.
pub fn warmup_tail_delta(metrics: &[MetricsRow], warmup: usize, window: usize) -> Option<(f64, f64)> {
    if warmup < 2 || metrics.len() < warmup {
        return None;
    }
    let lo = warmup.saturating_sub(window).max(1);
    let (mut dc, mut d_o) = (0.0f64, 0.0f64);
    for i in lo..warmup {
        dc = dc.max((metrics[i].rho_c - metrics[i - 1].rho_c).abs());
        d_o = d_o.max((metrics[i].rho_o - metrics[i - 1].rho_o).abs());
    }
    Some((dc, d_o))
}

/// Trains one configuration on one seed.
pub fn run_trial(
    base: &RunConfig,
    variant: Variant,
    seed: u64,
    data: &DataSource,
    with_baseline: bool,
) -> Result<TrialResult> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    variant.apply(&mut cfg);
    let pair = data.pair_for(&cfg, seed)?;
    let out = run(&cfg, &pair)?;
    let baseline_h_score = if with_baseline {
        let b = train_source_only(&cfg, &pair)?;
        Some(b.evaluate(&pair.target_eval, &pair)?.h_score)
    } else {
        None
    };
    let rho_range = out.metrics.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.rho_c).min(r.rho_o), hi.max(r.rho_c).max(r.rho_o))
    });
    let r = &out.report;
    Ok(TrialResult {
        variant,
        seed,
        n_tgt_private: pair.spec.n_tgt_private,
        h_score: r.h_score,
        acc_common: r.acc_common,
        acc_unknown: r.acc_unknown,
        auroc: r.auroc,
        mean_anomaly_known: r.mean_anomaly_known,
        mean_anomaly_unknown: r.mean_anomaly_unknown,
        baseline_h_score,
        warmup_final_delta: warmup_tail_delta(&out.metrics, cfg.effective_warmup(), 10),
        rho_range,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub median_h: f64,
    pub mean_h: f64,
    pub std_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationTable {
    pub fn median(&self, v: Variant) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == v).map(|s| s.median_h)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seeds,median_h,mean_h,std_h\n");
        for s in &self.summary {
            writeln!(out, "{},{},{:.6},{:.6},{:.6}", s.variant, s.seeds, s.median_h, s.mean_h, s.std_h).unwrap();
        }
        out
    }
}

pub fn ablate(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    data: &DataSource,
) -> Result<AblationTable> {
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(v, s)| run_trial(base, v, s, data, false))
        .collect::<Result<Vec<_>>>()?;
    let summary = variants
        .iter()
        .map(|&v| {
            let hs: Vec<f64> = trials.iter().filter(|t| t.variant == v).map(|t| t.h_score).collect();
            let (mean_h, std_h, median_h) = summarize(&hs);
            VariantSummary {
                variant: v,
                seeds: hs.len(),
                median_h,
                mean_h,
                std_h,
            }
        })
        .collect();
    Ok(AblationTable { trials, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_tgt_private: usize,
    pub h_scores: Vec<f64>,
    pub median_h: f64,
    pub mean_h: f64,
    pub std_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// Largest minus smallest median H-score across the sweep.
    pub fn median_spread(&self) -> f64 {
        let m = self.points.iter().map(|p| p.median_h);
        m.clone().fold(f64::NEG_INFINITY, f64::max) - m.fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_tgt_private,seeds,median_h,mean_h,std_h\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                p.n_tgt_private,
                p.h_scores.len(),
                p.median_h,
                p.mean_h,
                p.std_h
            )
            .unwrap();
        }
        out
    }
}

/// Regenerates the synthetic benchmark for each target-private class count,
/// keeping the common and source-private counts of `base`.
pub fn sweep_unknown_classes(base: &RunConfig, counts: &[usize], seeds: &[u64]) -> Result<SweepTable> {
    let jobs: Vec<(usize, u64)> = counts
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(c, s)| {
            let mut cfg = base.clone();
            cfg.data.n_tgt_private = c;
            cfg.validate()?;
            run_trial(&cfg, Variant::Full, s, &DataSource::Synthetic, false)
        })
        .collect::<Result<Vec<_>>>()?;
    let points = counts
        .iter()
        .map(|&c| {
            let h_scores: Vec<f64> = trials
                .iter()
                .filter(|t| t.n_tgt_private == c)
                .map(|t| t.h_score)
                .collect();
            let (mean_h, std_h, median_h) = summarize(&h_scores);
            SweepPoint {
                n_tgt_private: c,
                h_scores,
                median_h,
                mean_h,
                std_h,
            }
        })
        .collect();
    Ok(SweepTable { points })
}
