//! Fully connected networks with tanh hidden layers, an identity output
//! layer and exact reverse-mode gradients. Every learned model in the crate
//! (landscape, policy mean, value function, discriminator) is one of these.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::mat::Mat;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lyapstab-mlp-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// weights[k] has shape (sizes[k+1], sizes[k])
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.weights {
            w.data_mut().fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (a, v) in b.iter_mut().zip(o) {
                *a += v;
            }
        }
    }
}

/// Post-activation values kept from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// acts[0] is the input, acts[k+1] the output of layer k.
    acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always has the input")
    }
}

impl Mlp {
    /// Builds a network with the given layer sizes (input first, output
    /// last), weights drawn uniformly from +-sqrt(6/(fan_in+fan_out)) and
    /// zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let weights = (0..sizes.len() - 1)
            .map(|k| Mat::zeros(sizes[k + 1], sizes[k]))
            .collect();
        let biases = (0..sizes.len() - 1).map(|k| vec![0.0; sizes[k + 1]]).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_layers(sizes: Vec<usize>, weights: Vec<Mat>, biases: Vec<Vec<f64>>) -> Result<Self> {
        Self::check_sizes(&sizes)?;
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::Shape("layer count mismatch".into()));
        }
        for k in 0..weights.len() {
            if weights[k].rows() != sizes[k + 1]
                || weights[k].cols() != sizes[k]
                || biases[k].len() != sizes[k + 1]
            {
                return Err(Error::Shape(format!("layer {k} shape mismatch")));
            }
        }
        let mlp = Mlp {
            sizes,
            weights,
            biases,
        };
        if !mlp.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(mlp)
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Mat] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data().iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Multiplies the final layer's weights and biases by `s`. Used to start
    /// policy means near zero.
    pub fn scale_output_layer(&mut self, s: f64) {
        let last = self.weights.len() - 1;
        for v in self.weights[last].data_mut() {
            *v *= s;
        }
        for v in self.biases[last].iter_mut() {
            *v *= s;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if k < last {
                for zi in z.iter_mut() {
                    *zi = zi.tanh();
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps per-layer activations for `backward`.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_vec());
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(acts.last().unwrap());
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if k < last {
                for zi in z.iter_mut() {
                    *zi = zi.tanh();
                }
            }
            acts.push(z);
        }
        Ok(ForwardTrace { acts })
    }

    /// Accumulates `scale * d(upstream . output)/d(params)` into `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        scale: f64,
        grads: &mut MlpGrads,
    ) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim(), "upstream dim mismatch");
        let nl = self.weights.len();
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..nl).rev() {
            // identity on the output layer, tanh elsewhere
            if k < nl - 1 {
                let a = &trace.acts[k + 1];
                for (d, ai) in delta.iter_mut().zip(a) {
                    *d *= 1.0 - ai * ai;
                }
            }
            let a_in = &trace.acts[k];
            let gw = &mut grads.weights[k];
            let cols = gw.cols();
            for (i, &di) in delta.iter().enumerate() {
                let row = &mut gw.data_mut()[i * cols..(i + 1) * cols];
                let s = scale * di;
                for (r, ai) in row.iter_mut().zip(a_in) {
                    *r += s * ai;
                }
                grads.biases[k][i] += s;
            }
            delta = self.weights[k].matvec_t(&delta);
        }
        delta
    }

    /// Exact gradients of `upstream . output` with respect to every
    /// parameter and to the input.
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream has length {}, output dim is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let trace = self.forward_trace(x)?;
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward_into(&trace, upstream, 1.0, &mut grads);
        Ok((grads, dx))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn to_checkpoint_string(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: self.biases.clone(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serialization")
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)
            .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unknown checkpoint format '{}'",
                ckpt.format
            )));
        }
        if ckpt.weights.len() + 1 != ckpt.sizes.len() {
            return Err(Error::Shape("checkpoint layer count mismatch".into()));
        }
        let mut weights = Vec::new();
        for (k, flat) in ckpt.weights.into_iter().enumerate() {
            weights.push(Mat::from_flat(ckpt.sizes[k + 1], ckpt.sizes[k], flat)?);
        }
        Mlp::from_layers(ckpt.sizes, weights, ckpt.biases)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_checkpoint_str(&s)
    }
}
