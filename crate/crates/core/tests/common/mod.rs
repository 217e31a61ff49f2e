//! Naive scalar-loop reference implementations used as test oracles.
//! Nothing here calls into the library's math; only its data types.

#![allow(dead_code)]

use cpr_core::nn::{Activation, FeatureExtractor};
use cpr_core::objective::Network;
use cpr_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(vec![r, c], data).unwrap()
}

/// Small random network: `input → hidden (ReLU) → feature (linear)`.
pub fn random_network(rng: &mut ChaCha8Rng, input: usize, hidden: usize, dim: usize, k: usize, margin: f64) -> Network {
    let ext = FeatureExtractor::from_layers(vec![
        (random_tensor(rng, hidden, input, 0.8), random_tensor(rng, 1, hidden, 0.3), Activation::Relu),
        (random_tensor(rng, dim, hidden, 0.8), random_tensor(rng, 1, dim, 0.3), Activation::None),
    ])
    .unwrap();
    let cls = cpr_core::model::DualClassifier::from_parts(
        random_tensor(rng, k, dim, 1.0),
        random_tensor(rng, k, dim, 1.0),
        margin,
    )
    .unwrap();
    Network::new(ext, cls).unwrap()
}

pub fn flat_params(net: &Network) -> Vec<f64> {
    net.params().iter().flat_map(|p| p.value.data().to_vec()).collect()
}

pub fn set_params(net: &mut Network, v: &[f64]) {
    let mut o = 0;
    for p in net.params_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&v[o..o + n]);
        o += n;
    }
    assert_eq!(o, v.len());
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &net.extractor.layers {
        let (out, inp) = (l.weight.value.rows(), l.weight.value.cols());
        let mut next = vec![0.0; out];
        for o in 0..out {
            let mut s = l.bias.value.data()[o];
            for i in 0..inp {
                s += l.weight.value.get(o, i) * h[i];
            }
            next[o] = match l.activation {
                Activation::Relu => s.max(0.0),
                Activation::None => s,
            };
        }
        h = next;
    }
    h
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut e = vec![0.0; z.len()];
    let mut s = 0.0;
    for i in 0..z.len() {
        e[i] = (z[i] - m).exp();
        s += e[i];
    }
    for v in &mut e {
        *v /= s;
    }
    e
}

/// Lowest index among equal maxima.
pub fn naive_argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

pub fn naive_log_softmax_at(z: &[f64], y: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        m = m.max(v);
    }
    let mut s = 0.0;
    for &v in z {
        s += (v - m).exp();
    }
    z[y] - m - s.ln()
}

/// Raw logits for one feature vector: (f·p_k, f·r_k).
pub fn naive_logits(net: &Network, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = &net.classifier;
    let k = c.num_classes();
    let lp = (0..k).map(|j| naive_dot(f, c.prototypes.value.row_slice(j))).collect();
    let lr = (0..k).map(|j| naive_dot(f, c.reciprocals.value.row_slice(j))).collect();
    (lp, lr)
}

pub struct NaiveProbs {
    pub p_p: Vec<f64>,
    pub p_r: Vec<f64>,
    pub p_c: Vec<f64>,
}

pub fn naive_probs(lp: &[f64], lr: &[f64]) -> NaiveProbs {
    let neg: Vec<f64> = lr.iter().map(|v| -v).collect();
    let mut cat = lp.to_vec();
    cat.extend_from_slice(lr);
    NaiveProbs {
        p_p: naive_softmax(lp),
        p_r: naive_softmax(&neg),
        p_c: naive_softmax(&cat),
    }
}

pub fn naive_ce_p(lp: &[f64], y: usize) -> f64 {
    -naive_log_softmax_at(lp, y)
}

pub fn naive_ce_r(lr: &[f64], y: usize) -> f64 {
    let neg: Vec<f64> = lr.iter().map(|v| -v).collect();
    -naive_log_softmax_at(&neg, y)
}

/// `max(d(f, r_y) − R, 0)` with `d = −f·r`.
pub fn naive_open(lr: &[f64], y: usize, margin: f64) -> f64 {
    let d = -lr[y];
    if d > margin {
        d - margin
    } else {
        0.0
    }
}

pub fn naive_split(lp: &[f64], lr: &[f64], y: usize) -> f64 {
    let dp = -lp[y];
    let mut dmin = f64::INFINITY;
    for &v in lr {
        if -v < dmin {
            dmin = -v;
        }
    }
    if dp > dmin {
        dp - dmin
    } else {
        0.0
    }
}

pub fn naive_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}

pub fn naive_kl(ps: &[f64], pw: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..ps.len() {
        if ps[i] > 0.0 {
            let w = if pw[i] < 1e-12 { 1e-12 } else { pw[i] };
            s += ps[i] * (ps[i].ln() - w.ln());
        }
    }
    s
}

/// Per-sample `(known?, threshold-pass?, consistent?)` selection trace.
pub struct NaiveSelection {
    /// `(index, is_strong)` pairs.
    pub known: Vec<(usize, bool)>,
    pub unknown: Vec<(usize, bool)>,
    pub labels: Vec<usize>,
}

pub fn naive_select(
    weak: &[NaiveProbs],
    strong: &[NaiveProbs],
    rho_c: f64,
    rho_o: f64,
    use_threshold: bool,
    use_consistency: bool,
) -> NaiveSelection {
    let k = weak[0].p_p.len();
    let mut known_w = vec![];
    let mut known_s = vec![];
    let mut unk_w = vec![];
    let mut unk_s = vec![];
    let mut lab_w = vec![];
    let mut lab_s = vec![];
    for i in 0..weak.len() {
        let w = &weak[i];
        let j = naive_argmax(&w.p_c);
        let mut top = 0.0;
        for &v in &w.p_c {
            if v > top {
                top = v;
            }
        }
        let is_known = j < k;
        let same = naive_argmax(&w.p_p) == naive_argmax(&w.p_r);
        let rho = if is_known { rho_c } else { rho_o };
        let pass_t = !use_threshold || top >= rho;
        let pass_c = !use_consistency || (is_known && same) || (!is_known && !same);
        if !(pass_t && pass_c) {
            continue;
        }
        let strong_ok = naive_argmax(&strong[i].p_c) == j;
        if is_known {
            known_w.push((i, false));
            lab_w.push(naive_argmax(&w.p_p));
            if strong_ok {
                known_s.push((i, true));
                lab_s.push(naive_argmax(&w.p_p));
            }
        } else {
            unk_w.push((i, false));
            if strong_ok {
                unk_s.push((i, true));
            }
        }
    }
    known_w.extend(known_s);
    unk_w.extend(unk_s);
    lab_w.extend(lab_s);
    NaiveSelection {
        known: known_w,
        unknown: unk_w,
        labels: lab_w,
    }
}

/// `w·mean H(known) + (1−w)·mean H(unknown)`, or 0 if either set is empty.
pub fn naive_weighted_entropy(known: &[Vec<f64>], unknown: &[Vec<f64>]) -> f64 {
    if known.is_empty() || unknown.is_empty() {
        return 0.0;
    }
    let w = unknown.len() as f64 / (known.len() + unknown.len()) as f64;
    let mut hk = 0.0;
    for p in known {
        hk += naive_entropy(p);
    }
    let mut hu = 0.0;
    for p in unknown {
        hu += naive_entropy(p);
    }
    w * hk / known.len() as f64 + (1.0 - w) * hu / unknown.len() as f64
}

pub fn naive_h_score(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}
