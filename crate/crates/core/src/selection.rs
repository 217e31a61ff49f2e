//! Known/unknown batch split, moving-average thresholds, and confident-sample
//! selection over weak/strong target views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbTriple;

/// Splits a batch by which half of `p_c` holds the argmax: `(B_c, B_o)`.
pub fn split_batch(triples: &[ProbTriple]) -> (Vec<usize>, Vec<usize>) {
    let (mut known, mut unknown) = (Vec::new(), Vec::new());
    for (i, t) in triples.iter().enumerate() {
        if t.is_known() {
            known.push(i);
        } else {
            unknown.push(i);
        }
    }
    (known, unknown)
}

/// Adaptive confidence thresholds `ρ_c`, `ρ_o`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub rho_c: f64,
    pub rho_o: f64,
    pub alpha: f64,
}

impl ThresholdState {
    /// Both thresholds start at 0.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config("train.alpha", "must lie in (0, 1)"));
        }
        Ok(ThresholdState {
            rho_c: 0.0,
            rho_o: 0.0,
            alpha,
        })
    }

    /// `ρ ← α·ρ + (1 − α)·mean max(p_c)` for each non-empty set; an empty set
    /// leaves its threshold unchanged.
    pub fn update(&mut self, known: &[&ProbTriple], unknown: &[&ProbTriple]) {
        let mean_max = |set: &[&ProbTriple]| {
            set.iter().map(|t| t.max_collab()).sum::<f64>() / set.len() as f64
        };
        if !known.is_empty() {
            self.rho_c = self.alpha * self.rho_c + (1.0 - self.alpha) * mean_max(known);
        }
        if !unknown.is_empty() {
            self.rho_o = self.alpha * self.rho_o + (1.0 - self.alpha) * mean_max(unknown);
        }
    }

    /// Splits `triples` and updates from the two halves.
    pub fn update_from_batch(&mut self, triples: &[ProbTriple]) {
        let (bc, bo) = split_batch(triples);
        let known: Vec<&ProbTriple> = bc.iter().map(|&i| &triples[i]).collect();
        let unknown: Vec<&ProbTriple> = bo.iter().map(|&i| &triples[i]).collect();
        self.update(&known, &unknown);
    }
}

/// Which selection tests are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    /// `max(p_c) ≥ ρ`
    pub threshold: bool,
    /// `argmax(p_p) = argmax(p_r)` for known, `≠` for unknown.
    pub consistency: bool,
}

impl Default for Criteria {
    fn default() -> Self {
        Criteria {
            threshold: true,
            consistency: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Selected {
    pub index: usize,
    pub view: View,
}

/// Confident known (`B̂_c`) and unknown (`B̂_o`) entries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedSets {
    pub known: Vec<Selected>,
    pub unknown: Vec<Selected>,
    /// Pseudo-label for each `known` entry: nearest prototype of the weak view.
    pub pseudo_labels: Vec<usize>,
}

impl SelectedSets {
    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    pub fn n_unknown(&self) -> usize {
        self.unknown.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty() && self.unknown.is_empty()
    }
}

/// Two-stage selection.
///
/// Weak views are admitted to `B̂_c` when they fall in `B_c`, clear `ρ_c`,
/// and their nearest prototype matches their farthest reciprocal; to `B̂_o`
/// when they fall in `B_o`, clear `ρ_o`, and the two indices differ. A strong
/// view joins its weak sibling's set only if both views have the same nearest
/// point (argmax of `p_c`).
pub fn select_confident(
    weak: &[ProbTriple],
    strong: &[ProbTriple],
    state: &ThresholdState,
    criteria: Criteria,
) -> Result<SelectedSets> {
    if weak.len() != strong.len() {
        return Err(Error::shape(
            "select_confident",
            format!("{} weak vs {} strong views", weak.len(), strong.len()),
        ));
    }
    let mut out = SelectedSets::default();
    let mut strong_known = Vec::new();
    let mut strong_unknown = Vec::new();
    let mut strong_labels = Vec::new();
    for (i, (w, s)) in weak.iter().zip(strong).enumerate() {
        let known = w.is_known();
        let rho = if known { state.rho_c } else { state.rho_o };
        if criteria.threshold && w.max_collab() < rho {
            continue;
        }
        let agree = w.argmax_proto() == w.argmax_recip();
        if criteria.consistency && agree != known {
            continue;
        }
        let entry = Selected {
            index: i,
            view: View::Weak,
        };
        let strong_ok = s.argmax_collab() == w.argmax_collab();
        let strong_entry = Selected {
            index: i,
            view: View::Strong,
        };
        if known {
            out.known.push(entry);
            out.pseudo_labels.push(w.argmax_proto());
            if strong_ok {
                strong_known.push(strong_entry);
                strong_labels.push(w.argmax_proto());
            }
        } else {
            out.unknown.push(entry);
            if strong_ok {
                strong_unknown.push(strong_entry);
            }
        }
    }
    out.known.extend(strong_known);
    out.pseudo_labels.extend(strong_labels);
    out.unknown.extend(strong_unknown);
    Ok(out)
}
