//! Universal domain adaptation with dual prototype / reciprocal-point
//! classifiers on fixed feature embeddings.
//!
//! The crate carries its own small reverse-mode autodiff over `f64`
//! matrices, an MLP feature extractor, the dual classifier and its losses,
//! confident-sample selection, a warm-up → adaptation trainer, and
//! H-score evaluation.
//!
//! ```
//! use cpr_core::config::RunConfig;
//! use cpr_core::data::gen_synthetic_pair;
//! use cpr_core::trainer::run;
//!
//! let mut cfg = RunConfig::default();
//! cfg.data.n_common = 2;
//! cfg.data.n_src_private = 1;
//! cfg.data.n_tgt_private = 1;
//! cfg.data.dim = 4;
//! cfg.data.samples_per_class = 8;
//! cfg.model.hidden = vec![8];
//! cfg.model.feature_dim = 4;
//! cfg.train.batch_size = 8;
//! cfg.train.warmup_iters = 5;
//! cfg.train.total_iters = 10;
//! cfg.train.eval_interval = 5;
//!
//! let pair = gen_synthetic_pair(&cfg.data.synthetic(cfg.seed)?)?;
//! let out = run(&cfg, &pair)?;
//! assert_eq!(out.metrics.len(), 10);
//! assert!((0.0..=1.0).contains(&out.report.h_score));
//! # Ok::<(), cpr_core::Error>(())
//! ```

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod selection;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Keeps the guide's code blocks compiling and passing as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/source-objective.md")]
    mod source_objective {}
    #[doc = include_str!("../../../book/src/curriculum.md")]
    mod curriculum {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
