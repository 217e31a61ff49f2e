//! Analytic gradients of every loss against central finite differences, over
//! all parameters: extractor weights and biases, prototypes, reciprocals, and
//! the margin.

mod common;

use common::*;
use cpr_core::autodiff::{Tape, Var};
use cpr_core::gradcheck::grad_check;
use cpr_core::objective::{
    cross_entropy_rows, entropy_rows, kl_loss, open_loss_selected, open_rows, source_loss, split_rows,
    weighted_entropy_loss, Network,
};
use cpr_core::tensor::Tensor;
use rand::Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

struct Instance {
    net: Network,
    x: Tensor,
    x2: Tensor,
    labels: Vec<usize>,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let k = r.random_range(2..=5);
    let d = r.random_range(2..=8);
    let n = r.random_range(2..=8);
    let input = r.random_range(2..=6);
    let hidden = r.random_range(2..=6);
    let margin = r.random_range(0.05..1.5);
    let net = random_network(&mut r, input, hidden, d, k, margin);
    let x = random_tensor(&mut r, n, input, 1.5);
    let x2 = random_tensor(&mut r, n, input, 1.5);
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    Instance { net, x, x2, labels }
}

/// Checks `build` at the instance's parameters; returns the relative error.
fn check<F>(inst: &Instance, build: F) -> f64
where
    F: Fn(&mut Tape, &Network, &Instance) -> Option<Var>,
{
    let mut tape = Tape::new();
    let Some(loss) = build(&mut tape, &inst.net, inst) else {
        return 0.0;
    };
    let grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    for (slot, p) in inst.net.params().iter().enumerate() {
        match grads.get(slot) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat(0.0).take(p.value.len())),
        }
    }
    let point = flat_params(&inst.net);
    let value = |theta: &[f64]| {
        let mut net = inst.net.clone();
        set_params(&mut net, theta);
        let mut t = Tape::new();
        let l = build(&mut t, &net, inst).unwrap();
        t.value(l).item()
    };
    grad_check(value, &point, &analytic, EPS).unwrap()
}

fn run_all<F>(name: &str, build: F)
where
    F: Fn(&mut Tape, &Network, &Instance) -> Option<Var> + Copy,
{
    let mut worst: f64 = 0.0;
    for seed in 0..25 {
        let inst = instance(seed);
        let e = check(&inst, build);
        assert!(e < TOL, "{name}: seed {seed} relative error {e:e}");
        worst = worst.max(e);
    }
    eprintln!("{name}: worst relative error {worst:e}");
}

#[test]
fn prototype_cross_entropy() {
    run_all("ce_proto", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let rows = cross_entropy_rows(t, h.logits_p, &i.labels).unwrap();
        Some(t.mean(rows))
    });
}

#[test]
fn reciprocal_cross_entropy() {
    run_all("ce_recip", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let neg = t.neg(h.logits_r);
        let rows = cross_entropy_rows(t, neg, &i.labels).unwrap();
        Some(t.mean(rows))
    });
}

#[test]
fn open_space_loss_including_margin() {
    run_all("open", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let rows = open_rows(t, h.logits_r, h.margin, &i.labels).unwrap();
        Some(t.mean(rows))
    });
}

#[test]
fn split_loss() {
    run_all("split", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let rows = split_rows(t, &h, &i.labels).unwrap();
        Some(t.mean(rows))
    });
}

#[test]
fn full_source_loss() {
    for with_split in [true, false] {
        run_all("source", move |t, net, i| {
            let h = net.forward(t, &i.x).unwrap();
            Some(source_loss(t, &h, &i.labels, 0.1, with_split).unwrap().total)
        });
    }
}

#[test]
fn consistency_kl() {
    run_all("kl", |t, net, i| {
        // weak side is a constant: always taken from the unperturbed network
        let weak = i.net.embed(&i.x).unwrap();
        let mut wt = Tape::new();
        let wf = wt.constant(weak);
        let wh = i.net.heads(&mut wt, wf).unwrap();
        let weak_collab = wt.value(wh.collab).clone();
        let h = net.forward(t, &i.x2).unwrap();
        Some(kl_loss(t, h.collab, &weak_collab).unwrap())
    });
}

#[test]
fn weighted_entropy() {
    run_all("entropy", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let e = entropy_rows(t, h.collab).unwrap();
        let n = i.labels.len();
        let known: Vec<usize> = (0..n).filter(|r| r % 2 == 0).collect();
        let unknown: Vec<usize> = (0..n).filter(|r| r % 2 == 1).collect();
        weighted_entropy_loss(t, e, &known, &unknown, true).unwrap()
    });
}

#[test]
fn target_open_space_on_selected_rows() {
    run_all("open_selected", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let rows: Vec<usize> = (0..i.labels.len()).step_by(2).collect();
        let labels: Vec<usize> = rows.iter().map(|&r| i.labels[r]).collect();
        open_loss_selected(t, &h, &rows, &labels).unwrap()
    });
}

#[test]
fn combined_adaptation_objective() {
    run_all("combined", |t, net, i| {
        let h = net.forward(t, &i.x).unwrap();
        let src = source_loss(t, &h, &i.labels, 0.1, true).unwrap().total;
        let h2 = net.forward(t, &i.x2).unwrap();
        let e = entropy_rows(t, h2.collab).unwrap();
        let n = i.labels.len();
        let known: Vec<usize> = (0..n).filter(|r| r % 3 != 0).collect();
        let unknown: Vec<usize> = (0..n).filter(|r| r % 3 == 0).collect();
        let ent = weighted_entropy_loss(t, e, &known, &unknown, true).unwrap().unwrap();
        let total = t.add(src, ent).unwrap();
        Some(total)
    });
}
