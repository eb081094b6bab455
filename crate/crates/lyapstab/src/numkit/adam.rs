//! Adam with bias correction, shaped to mirror the parameters it updates.

use super::mlp::{Mlp, MlpGrads};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one flat parameter buffer.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    mom: &mut Moments,
    t: u64,
    lr: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        mom.m[i] = ADAM_BETA1 * mom.m[i] + (1.0 - ADAM_BETA1) * g;
        mom.v[i] = ADAM_BETA2 * mom.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = mom.m[i] / bc1;
        let v_hat = mom.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Optimizer state for a full network. Accumulator shapes mirror the
/// parameter shapes; the step counter advances by one per `step` call.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    weights: Vec<Moments>,
    biases: Vec<Moments>,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> Self {
        AdamState {
            t: 0,
            weights: mlp.weights().iter().map(|w| Moments::new(w.data().len())).collect(),
            biases: mlp.biases().iter().map(|b| Moments::new(b.len())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update of `params` in the direction that decreases the loss
    /// whose gradient is `grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<()> {
        if grads.weights.len() != params.num_layers() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (k, gw) in grads.weights.iter().enumerate() {
            if gw.data().iter().any(|v| !v.is_finite())
                || grads.biases[k].iter().any(|v| !v.is_finite())
            {
                return Err(Error::Numeric(format!("non-finite gradient in layer {k}")));
            }
        }
        self.t += 1;
        for k in 0..params.num_layers() {
            adam_update(
                params.weights_mut()[k].data_mut(),
                grads.weights[k].data(),
                &mut self.weights[k],
                self.t,
                lr,
            );
            adam_update(
                &mut params.biases_mut()[k],
                &grads.biases[k],
                &mut self.biases[k],
                self.t,
                lr,
            );
        }
        Ok(())
    }
}

/// Adam over a flat vector, used for the policy's log standard deviations.
#[derive(Debug, Clone)]
pub struct AdamVec {
    t: u64,
    mom: Moments,
}

impl AdamVec {
    pub fn new(len: usize) -> Self {
        AdamVec {
            t: 0,
            mom: Moments::new(len),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if grads.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in vector parameter".into()));
        }
        self.t += 1;
        adam_update(params, grads, &mut self.mom, self.t, lr);
        Ok(())
    }
}
