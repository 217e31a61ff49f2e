//! Every loss, the probability heads, the predictor, and the selector agree
//! with naive scalar loops on 100 random instances.

mod common;

use common::*;
use cpr_core::autodiff::Tape;
use cpr_core::model::{
    anomaly_score, entropy, loss_ce_proto, loss_ce_recip, loss_entropy_weighted, loss_kl, ProbTriple,
};
use cpr_core::objective::{
    cross_entropy_rows, entropy_rows, kl_loss, open_rows, source_loss, split_rows, weighted_entropy_loss, Network,
};
use cpr_core::selection::{select_confident, Criteria, ThresholdState, View};
use rand::Rng;

const TOL: f64 = 1e-10;
const INSTANCES: u64 = 100;

fn close(a: f64, b: f64, what: &str) {
    assert!(
        (a - b).abs() <= TOL * (1.0 + b.abs()),
        "{what}: {a} vs oracle {b}"
    );
}

fn close_vec(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (x, y) in a.iter().zip(b) {
        close(*x, *y, what);
    }
}

struct Case {
    net: Network,
    x: cpr_core::tensor::Tensor,
    labels: Vec<usize>,
}

fn case(seed: u64) -> Case {
    let mut r = rng(1000 + seed);
    let k = r.random_range(1..=6);
    let d = r.random_range(2..=8);
    let n = r.random_range(1..=10);
    let input = r.random_range(2..=6);
    let margin = r.random_range(0.0..2.0);
    let net = random_network(&mut r, input, 5, d, k, margin);
    let x = random_tensor(&mut r, n, input, 2.0);
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    Case { net, x, labels }
}

#[test]
fn features_and_probabilities() {
    for s in 0..INSTANCES {
        let c = case(s);
        let emb = c.net.embed(&c.x).unwrap();
        for i in 0..c.x.rows() {
            let f = naive_forward(&c.net, c.x.row_slice(i));
            close_vec(emb.row_slice(i), &f, "embed");
            let (lp, lr) = naive_logits(&c.net, &f);
            let o = naive_probs(&lp, &lr);
            let t = c.net.classifier.prob_triple(&f).unwrap();
            close_vec(&t.p_p, &o.p_p, "p_p");
            close_vec(&t.p_r, &o.p_r, "p_r");
            close_vec(&t.p_c, &o.p_c, "p_c");
        }
    }
}

#[test]
fn source_terms_on_tape_and_scalar() {
    for s in 0..INSTANCES {
        let c = case(s);
        let lambda = 0.1 + (s as f64) * 0.01;
        let r = c.net.classifier.margin();
        let mut tape = Tape::new();
        let h = c.net.forward(&mut tape, &c.x).unwrap();
        let ce_p = cross_entropy_rows(&mut tape, h.logits_p, &c.labels).unwrap();
        let neg = tape.neg(h.logits_r);
        let ce_r = cross_entropy_rows(&mut tape, neg, &c.labels).unwrap();
        let open = open_rows(&mut tape, h.logits_r, h.margin, &c.labels).unwrap();
        let split = split_rows(&mut tape, &h, &c.labels).unwrap();
        let total = source_loss(&mut tape, &h, &c.labels, lambda, true).unwrap().total;
        let total_ns = source_loss(&mut tape, &h, &c.labels, lambda, false).unwrap().total;

        let (mut sum, mut sum_ns) = (0.0, 0.0);
        for (i, &y) in c.labels.iter().enumerate() {
            let f = naive_forward(&c.net, c.x.row_slice(i));
            let (lp, lr) = naive_logits(&c.net, &f);
            let (a, b, o, sp) = (naive_ce_p(&lp, y), naive_ce_r(&lr, y), naive_open(&lr, y, r), naive_split(&lp, &lr, y));
            close(tape.value(ce_p).data()[i], a, "ce_p");
            close(tape.value(ce_r).data()[i], b, "ce_r");
            close(tape.value(open).data()[i], o, "open");
            close(tape.value(split).data()[i], sp, "split");
            let t = c.net.classifier.prob_triple(&f).unwrap();
            close(loss_ce_proto(&t, y).unwrap(), a, "loss_ce_proto");
            close(loss_ce_recip(&t, y).unwrap(), b, "loss_ce_recip");
            close(c.net.classifier.loss_open(&f, y).unwrap(), o, "loss_open");
            close(c.net.classifier.loss_split(&f, y).unwrap(), sp, "loss_split");
            sum += a + b + lambda * (o + sp);
            sum_ns += a + b + lambda * o;
        }
        let n = c.labels.len() as f64;
        close(tape.value(total).item(), sum / n, "source total");
        close(tape.value(total_ns).item(), sum_ns / n, "source total without split");
        let emb = c.net.embed(&c.x).unwrap();
        close(
            c.net.classifier.loss_source(&emb, &c.labels, lambda, true).unwrap(),
            sum / n,
            "loss_source",
        );
    }
}

#[test]
fn consistency_and_entropy_terms() {
    for s in 0..INSTANCES {
        let c = case(s);
        let mut r = rng(5000 + s);
        let x2 = random_tensor(&mut r, c.x.rows(), c.x.cols(), 2.0);
        let mut wt = Tape::new();
        let wh = c.net.forward(&mut wt, &c.x).unwrap();
        let weak_collab = wt.value(wh.collab).clone();

        let mut tape = Tape::new();
        let h = c.net.forward(&mut tape, &x2).unwrap();
        let kl = kl_loss(&mut tape, h.collab, &weak_collab).unwrap();
        let ent = entropy_rows(&mut tape, h.collab).unwrap();
        let n = c.x.rows();
        let known: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
        let unknown: Vec<usize> = (0..n).filter(|i| !known.contains(i)).collect();
        let went = weighted_entropy_loss(&mut tape, ent, &known, &unknown, true).unwrap();

        let mut kl_sum = 0.0;
        let mut pcs = vec![];
        for i in 0..n {
            let fw = naive_forward(&c.net, c.x.row_slice(i));
            let fs = naive_forward(&c.net, x2.row_slice(i));
            let (lpw, lrw) = naive_logits(&c.net, &fw);
            let (lps, lrs) = naive_logits(&c.net, &fs);
            let pw = naive_probs(&lpw, &lrw).p_c;
            let ps = naive_probs(&lps, &lrs).p_c;
            let k = naive_kl(&ps, &pw);
            close(loss_kl(&ps, &pw).unwrap(), k, "loss_kl");
            kl_sum += k;
            close(tape.value(ent).data()[i], naive_entropy(&ps), "entropy row");
            close(entropy(&ps), naive_entropy(&ps), "entropy");
            pcs.push(ps);
        }
        close(tape.value(kl).item(), kl_sum / n as f64, "kl mean");

        let kset: Vec<Vec<f64>> = known.iter().map(|&i| pcs[i].clone()).collect();
        let uset: Vec<Vec<f64>> = unknown.iter().map(|&i| pcs[i].clone()).collect();
        let oracle = naive_weighted_entropy(&kset, &uset);
        close(went.map_or(0.0, |v| tape.value(v).item()), oracle, "weighted entropy (tape)");
        close(loss_entropy_weighted(&kset, &uset), oracle, "weighted entropy (scalar)");
    }
}

#[test]
fn prediction_and_anomaly_score() {
    for s in 0..INSTANCES {
        let c = case(s);
        let k = c.net.num_classes();
        for i in 0..c.x.rows() {
            let f = naive_forward(&c.net, c.x.row_slice(i));
            let (lp, lr) = naive_logits(&c.net, &f);
            let pc = naive_probs(&lp, &lr).p_c;
            let j = naive_argmax(&pc);
            let pred = c.net.classifier.predict(&f).unwrap();
            assert_eq!(pred.label, if j < k { j } else { k });
            let mut top_unknown = 0.0f64;
            for &v in &pc[k..] {
                top_unknown = top_unknown.max(v);
            }
            close(pred.anomaly, -top_unknown.ln(), "anomaly");
            close(anomaly_score(&ProbTriple::from_logits(lp, lr)), -top_unknown.ln(), "anomaly_score");
        }
    }
}

#[test]
fn selector_and_threshold_update() {
    for s in 0..INSTANCES {
        let mut r = rng(9000 + s);
        let k = r.random_range(1..=5);
        let n = r.random_range(1..=12);
        let mut logits = |scale: f64| -> Vec<f64> { (0..k).map(|_| r.random_range(-scale..scale)).collect() };
        let weak_l: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|_| (logits(4.0), logits(4.0))).collect();
        let strong_l: Vec<(Vec<f64>, Vec<f64>)> = weak_l
            .iter()
            .map(|(p, q)| {
                // perturb so some strong views change their argmax
                (p.iter().map(|v| v + 0.7 * (v * 13.0).sin()).collect(), q.clone())
            })
            .collect();
        let weak: Vec<ProbTriple> = weak_l.iter().map(|(p, q)| ProbTriple::from_logits(p.clone(), q.clone())).collect();
        let strong: Vec<ProbTriple> = strong_l.iter().map(|(p, q)| ProbTriple::from_logits(p.clone(), q.clone())).collect();
        let nw: Vec<NaiveProbs> = weak_l.iter().map(|(p, q)| naive_probs(p, q)).collect();
        let ns: Vec<NaiveProbs> = strong_l.iter().map(|(p, q)| naive_probs(p, q)).collect();

        let rho_c = r.random_range(0.0..0.9);
        let rho_o = r.random_range(0.0..0.9);
        let crit = Criteria {
            threshold: r.random_bool(0.8),
            consistency: r.random_bool(0.8),
        };
        let state = ThresholdState { rho_c, rho_o, alpha: 0.99 };
        let got = select_confident(&weak, &strong, &state, crit).unwrap();
        let want = naive_select(&nw, &ns, rho_c, rho_o, crit.threshold, crit.consistency);
        let tag = |v: &[cpr_core::selection::Selected]| -> Vec<(usize, bool)> {
            v.iter().map(|e| (e.index, e.view == View::Strong)).collect()
        };
        assert_eq!(tag(&got.known), want.known, "known set, instance {s}");
        assert_eq!(tag(&got.unknown), want.unknown, "unknown set, instance {s}");
        assert_eq!(got.pseudo_labels, want.labels, "pseudo-labels, instance {s}");

        let mut st = state;
        st.update_from_batch(&weak);
        let (mut ck, mut nk, mut cu, mut nu) = (0.0, 0, 0.0, 0);
        for p in &nw {
            let mut top = 0.0f64;
            for &v in &p.p_c {
                top = top.max(v);
            }
            if naive_argmax(&p.p_c) < k {
                ck += top;
                nk += 1;
            } else {
                cu += top;
                nu += 1;
            }
        }
        let want_c = if nk > 0 { 0.99 * rho_c + 0.01 * ck / nk as f64 } else { rho_c };
        let want_o = if nu > 0 { 0.99 * rho_o + 0.01 * cu / nu as f64 } else { rho_o };
        close(st.rho_c, want_c, "rho_c");
        close(st.rho_o, want_o, "rho_o");
    }
}
