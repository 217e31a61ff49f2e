//! Checkpoints: a flat little-endian `f64` blob plus a line-oriented text
//! manifest naming each array, and the resolved config next to them.
//!
//! ```text
//! cpr-checkpoint 1
//! iter 500
//! rho_c 0.8123
//! ...
//! activation 0 relu
//! array layer.0.weight 128x32 0 4096
//! ```
//!
//! Array offsets and lengths count `f64` values, not bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::DualClassifier;
use crate::nn::{Activation, FeatureExtractor};
use crate::objective::Network;
use crate::optim::{LrSchedule, OptimState};
use crate::selection::ThresholdState;
use crate::tensor::Tensor;
use crate::trainer::TrainState;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.toml";
const MAGIC: &str = "cpr-checkpoint 1";

fn named_arrays(state: &TrainState) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (i, l) in state.net.extractor.layers.iter().enumerate() {
        out.push((format!("layer.{i}.weight"), &l.weight.value));
        out.push((format!("layer.{i}.bias"), &l.bias.value));
    }
    let c = &state.net.classifier;
    out.push(("prototypes".into(), &c.prototypes.value));
    out.push(("reciprocals".into(), &c.reciprocals.value));
    out.push(("margin".into(), &c.margin.value));
    for (j, v) in state.optim.velocity.iter().enumerate() {
        out.push((format!("velocity.{j}"), v));
    }
    out
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::None => "none",
        Activation::Relu => "relu",
    }
}

/// Writes manifest, blob, and config into `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, state: &TrainState, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut line = |s: String| {
        manifest.push_str(&s);
        manifest.push('\n');
    };
    line(MAGIC.into());
    line(format!("iter {}", state.iter));
    line(format!("rho_c {:?}", state.thresholds.rho_c));
    line(format!("rho_o {:?}", state.thresholds.rho_o));
    line(format!("alpha {:?}", state.thresholds.alpha));
    let o = &state.optim;
    line(format!("learning_rate {:?}", o.learning_rate));
    line(format!("momentum {:?}", o.momentum));
    line(format!("weight_decay {:?}", o.weight_decay));
    line(format!("schedule {}", serde_json::to_string(&o.schedule)?));
    line(format!("total_steps {}", o.total_steps));
    line(format!("step_count {}", o.step_count));
    for (i, l) in state.net.extractor.layers.iter().enumerate() {
        line(format!("activation {i} {}", activation_name(l.activation)));
    }
    let mut offset = 0;
    for (name, t) in named_arrays(state) {
        let (r, c) = (t.rows(), t.cols());
        line(format!("array {name} {r}x{c} {offset} {}", t.len()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    let mp = dir.join(MANIFEST_FILE);
    std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(BLOB_FILE);
    std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    cfg.save(&dir.join(CONFIG_FILE))
}

struct Manifest {
    scalars: BTreeMap<String, String>,
    activations: Vec<Activation>,
    arrays: BTreeMap<String, (usize, usize, usize, usize)>,
}

fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(1, format!("expected header `{MAGIC}`"))),
    }
    let mut m = Manifest {
        scalars: BTreeMap::new(),
        activations: Vec::new(),
        arrays: BTreeMap::new(),
    };
    for (i, l) in lines {
        let n = i + 1;
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let (key, rest) = l.split_once(' ').ok_or_else(|| err(n, "missing value".into()))?;
        match key {
            "activation" => {
                let (idx, name) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(n, "expected `activation <layer> <name>`".into()))?;
                let idx: usize = idx.parse().map_err(|_| err(n, format!("bad layer index `{idx}`")))?;
                if idx != m.activations.len() {
                    return Err(err(n, "activations out of order".into()));
                }
                m.activations.push(match name {
                    "none" => Activation::None,
                    "relu" => Activation::Relu,
                    other => return Err(err(n, format!("unknown activation `{other}`"))),
                });
            }
            "array" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(err(n, "expected `array <name> <rows>x<cols> <offset> <len>`".into()));
                }
                let (r, c) = parts[1]
                    .split_once('x')
                    .ok_or_else(|| err(n, format!("bad shape `{}`", parts[1])))?;
                let num = |s: &str| s.parse::<usize>().map_err(|_| err(n, format!("bad number `{s}`")));
                let (r, c, off, len) = (num(r)?, num(c)?, num(parts[2])?, num(parts[3])?);
                if r * c != len {
                    return Err(err(n, format!("shape {r}x{c} does not hold {len} values")));
                }
                m.arrays.insert(parts[0].to_string(), (r, c, off, len));
            }
            _ => {
                m.scalars.insert(key.to_string(), rest.to_string());
            }
        }
    }
    Ok(m)
}

/// Reads back a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(TrainState, RunConfig)> {
    let mp = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let m = parse_manifest(&text, &mp)?;
    let bp = dir.join(BLOB_FILE);
    let bytes = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::State(format!("{} is not a whole number of f64 values", bp.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;

    let array = |name: &str| -> Result<Tensor> {
        let &(r, c, off, len) = m
            .arrays
            .get(name)
            .ok_or_else(|| Error::State(format!("checkpoint lacks array `{name}`")))?;
        let data = values
            .get(off..off + len)
            .ok_or_else(|| Error::State(format!("array `{name}` runs past the end of the blob")))?;
        Tensor::new(vec![r, c], data.to_vec())
    };
    let scalar = |key: &str| -> Result<&str> {
        m.scalars
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::State(format!("checkpoint lacks `{key}`")))
    };
    let real = |key: &str| -> Result<f64> {
        scalar(key)?
            .parse()
            .map_err(|_| Error::State(format!("`{key}` is not a number")))
    };
    let count = |key: &str| -> Result<usize> {
        scalar(key)?
            .parse()
            .map_err(|_| Error::State(format!("`{key}` is not a count")))
    };

    let layers = (0..m.activations.len())
        .map(|i| {
            Ok((
                array(&format!("layer.{i}.weight"))?,
                array(&format!("layer.{i}.bias"))?,
                m.activations[i],
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let extractor = FeatureExtractor::from_layers(layers)?;
    let margin = array("margin")?.item();
    let classifier = DualClassifier::from_parts(array("prototypes")?, array("reciprocals")?, margin)?;
    let net = Network::new(extractor, classifier)?;

    let mut velocity = Vec::new();
    while m.arrays.contains_key(&format!("velocity.{}", velocity.len())) {
        velocity.push(array(&format!("velocity.{}", velocity.len()))?);
    }
    let schedule: LrSchedule = serde_json::from_str(scalar("schedule")?)?;
    let mut optim = OptimState::new(real("learning_rate")?, real("momentum")?, real("weight_decay")?)?
        .with_schedule(schedule, count("total_steps")?);
    optim.step_count = count("step_count")?;
    optim.velocity = velocity;

    let mut thresholds = ThresholdState::new(real("alpha")?)?;
    thresholds.rho_c = real("rho_c")?;
    thresholds.rho_o = real("rho_o")?;

    Ok((
        TrainState {
            iter: count("iter")?,
            net,
            thresholds,
            optim,
        },
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let p = Path::new("m.txt");
        assert!(matches!(parse_manifest("nope", p), Err(Error::Parse { line: 1, .. })));
        let bad = format!("{MAGIC}\niter 3\narray w 2x2 0 5\n");
        assert!(matches!(parse_manifest(&bad, p), Err(Error::Parse { line: 3, .. })));
        let ok = format!("{MAGIC}\niter 3\nactivation 0 relu\narray w 2x2 0 4\n");
        let m = parse_manifest(&ok, p).unwrap();
        assert_eq!(m.arrays["w"], (2, 2, 0, 4));
        assert_eq!(m.activations, vec![Activation::Relu]);
    }
}
