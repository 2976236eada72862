//! Adam optimizer and global gradient-norm clipping.

use crate::graph::Graph;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Gradient buffer aligned with a `ParamStore`, used to accumulate over a
/// batch before one optimizer step.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Add this graph's parameter gradients (post-`backward`) into the buffer.
    pub fn accumulate(&mut self, graph: &Graph, store: &ParamStore) -> crate::error::Result<()> {
        for (name, id) in graph.param_bindings() {
            if let Some(g) = graph.grad(*id) {
                let idx = store.index_of(name)?;
                for (a, b) in self.grads[idx].data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Rescale so the concatenated-gradient L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(buffer: &mut GradBuffer, max_norm: f64) -> f64 {
    let norm = buffer.global_norm();
    if norm > max_norm && norm > 0.0 {
        buffer.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for idx in 0..store.len() {
            let g = grads.grads()[idx].data();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let p = store.tensor_by_index_mut(idx).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
