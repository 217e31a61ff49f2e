//! Feed-forward feature extractor and the row softmax.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

/// Affine layer; `weight` is stored `out × in` so the forward pass is `x · Wᵀ + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.rows()
    }
}

/// The shared feature extractor `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub layers: Vec<Dense>,
}

impl FeatureExtractor {
    /// He-initialised MLP `input → hidden… → output`.
    ///
    /// Hidden layers use ReLU; the output layer uses `output_activation`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Dense {
                    weight: Param::new(Tensor::new(vec![fan_out, fan_in], data).expect("shape")),
                    bias: Param::new(Tensor::zeros(&[1, fan_out])),
                    activation: if i + 1 == n { output_activation } else { Activation::Relu },
                }
            })
            .collect();
        Ok(FeatureExtractor { layers })
    }

    /// Builds an extractor from explicit `(weight out×in, bias, activation)` triples.
    pub fn from_layers(layers: Vec<(Tensor, Tensor, Activation)>) -> Result<Self> {
        let layers: Vec<Dense> = layers
            .into_iter()
            .map(|(w, b, activation)| Dense {
                weight: Param::new(w),
                bias: Param::new(Tensor::row(b.data())),
                activation,
            })
            .collect();
        if layers.is_empty() {
            return Err(Error::config("model.hidden", "extractor needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.value.cols() != l.output_dim() {
                return Err(Error::shape("FeatureExtractor", format!("layer {i} bias width")));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::shape(
                    "FeatureExtractor",
                    format!("layer {i} expects {} inputs", l.input_dim()),
                ));
            }
        }
        Ok(FeatureExtractor { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn num_params(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(
                "model.input_dim",
                format!("extractor takes {} inputs, got {}", self.input_dim(), x.cols()),
            ));
        }
        Ok(())
    }

    /// Records `f = g(x)` on the tape. Parameter slots start at `first_slot`
    /// and run weight, bias, weight, bias, … in layer order.
    pub fn forward_features(&self, tape: &mut Tape, x: Var, first_slot: usize) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(first_slot + 2 * i, &layer.weight.value);
            let b = tape.param(first_slot + 2 * i + 1, &layer.bias.value);
            let z = tape.matmul_nt(h, w)?;
            h = tape.add(z, b)?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Plain forward pass with nothing recorded.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let (n, k, m) = (h.rows(), h.cols(), layer.output_dim());
            let mut out = matmul_nt(h.data(), layer.weight.value.data(), n, k, m);
            let bias = layer.bias.value.data();
            for row in out.chunks_mut(m) {
                for (o, b) in row.iter_mut().zip(bias) {
                    *o += b;
                    if layer.activation == Activation::Relu && *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            h = Tensor::new(vec![n, m], out)?;
        }
        Ok(h)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| (x - lse).exp()).collect()
}

/// Row-wise softmax of a `batch × C` matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let data = logits.data().chunks(c).flat_map(softmax_row).collect();
    Tensor::new(vec![logits.rows(), c], data).expect("same shape")
}
