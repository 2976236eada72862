//! Parameter storage and the layer builders used by the beamformer networks.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GruNodes, NodeId};
use crate::tensor::Tensor;

/// Default PReLU slope at initialization.
pub const PRELU_INIT: f64 = 0.25;

/// Named parameter set with stable registration order.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let idx = self.tensors.len();
        self.index.insert(name.to_string(), idx);
        self.names.push(name.to_string());
        self.tensors.push(value);
        Ok(idx)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn set_by_index(&mut self, idx: usize, value: Tensor) {
        self.tensors[idx] = value;
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self.index_of(name)?;
        if self.tensors[idx].shape() != value.shape() {
            return Err(Error::shape(
                "param_store.set",
                format!(
                    "{name}: {:?} vs {:?}",
                    self.tensors[idx].shape(),
                    value.shape()
                ),
            ));
        }
        self.tensors[idx] = value;
        Ok(())
    }

    pub fn tensor_by_index(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_by_index_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }
}

/// Seeded initializer: weights uniform in +-sqrt(1/fan_in), biases zero.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::from_vec(shape, data).expect("shape/data agree")
    }
}

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.register(&w, init.uniform(&[out_dim, in_dim], in_dim))?;
        store.register(&b, Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// Apply to `[rows, in]`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, &self.w)?;
        let b = g.param(store, &self.b)?;
        g.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// Linear layer followed by a learned PReLU, the FFN unit of the attention
/// blocks.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub linear: Linear,
    pub alpha: String,
}

impl Ffn {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let linear = Linear::register(store, init, prefix, in_dim, out_dim)?;
        let alpha = format!("{prefix}.alpha");
        store.register(&alpha, Tensor::scalar(PRELU_INIT))?;
        Ok(Ffn { linear, alpha })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.linear.apply(g, store, x)?;
        let a = g.param(store, &self.alpha)?;
        g.prelu(y, a)
    }

    pub fn param_count(&self) -> usize {
        self.linear.param_count() + 1
    }
}

/// Layer-norm parameter pair (gain ones, shift zeros).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.register(&gamma, Tensor::full(&[dim], 1.0))?;
        store.register(&beta, Tensor::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta, dim })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, &self.gamma)?;
        let beta = g.param(store, &self.beta)?;
        g.layer_norm(x, gamma, beta)
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}

/// GRU parameter bundle, weights `[H,In]`/`[H,H]`, biases `[H]`.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub names: [String; 9],
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let mk = |s: &str| format!("{prefix}.{s}");
        let names = [
            mk("wz"),
            mk("uz"),
            mk("bz"),
            mk("wr"),
            mk("ur"),
            mk("br"),
            mk("wh"),
            mk("uh"),
            mk("bh"),
        ];
        store.register(&names[0], init.uniform(&[hidden, in_dim], in_dim))?;
        store.register(&names[1], init.uniform(&[hidden, hidden], hidden))?;
        store.register(&names[2], Tensor::zeros(&[hidden]))?;
        store.register(&names[3], init.uniform(&[hidden, in_dim], in_dim))?;
        store.register(&names[4], init.uniform(&[hidden, hidden], hidden))?;
        store.register(&names[5], Tensor::zeros(&[hidden]))?;
        store.register(&names[6], init.uniform(&[hidden, in_dim], in_dim))?;
        store.register(&names[7], init.uniform(&[hidden, hidden], hidden))?;
        store.register(&names[8], Tensor::zeros(&[hidden]))?;
        Ok(GruParams {
            names,
            in_dim,
            hidden,
        })
    }

    /// Run the GRU over `x: [T,B,In]` from a zero initial state.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let batch = g.shape(x)[1];
        let h0 = g.constant(Tensor::zeros(&[batch, self.hidden]));
        self.apply_from(g, store, x, h0)
    }

    pub fn apply_from(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        h0: NodeId,
    ) -> Result<NodeId> {
        let p: Vec<NodeId> = self
            .names
            .iter()
            .map(|n| g.param(store, n))
            .collect::<Result<_>>()?;
        g.gru_seq(GruNodes {
            x,
            h0,
            wz: p[0],
            uz: p[1],
            bz: p[2],
            wr: p[3],
            ur: p[4],
            br: p[5],
            wh: p[6],
            uh: p[7],
            bh: p[8],
        })
    }

    pub fn param_count(&self) -> usize {
        3 * (self.hidden * self.in_dim + self.hidden * self.hidden + self.hidden)
    }
}

/// `softmax(Q K^T / sqrt(d_k)) V` for `[n,d]` or batched `[b,n,d]` operands.
pub fn scaled_dot_attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let rank = g.shape(q).len();
    if rank != g.shape(k).len() || rank != g.shape(v).len() {
        return Err(Error::shape("attention", "mixed operand ranks".to_string()));
    }
    let (q3, k3, v3, squeeze) = match rank {
        2 => {
            let qs = g.shape(q).to_vec();
            let ks = g.shape(k).to_vec();
            let vs = g.shape(v).to_vec();
            (
                g.reshape(q, &[1, qs[0], qs[1]])?,
                g.reshape(k, &[1, ks[0], ks[1]])?,
                g.reshape(v, &[1, vs[0], vs[1]])?,
                true,
            )
        }
        3 => (q, k, v, false),
        r => {
            return Err(Error::shape(
                "attention",
                format!("rank {r} operands unsupported"),
            ))
        }
    };
    let d_k = g.shape(q3)[2];
    if g.shape(k3)[2] != d_k {
        return Err(Error::shape(
            "attention",
            format!("d_k mismatch: {} vs {}", d_k, g.shape(k3)[2]),
        ));
    }
    if g.shape(k3)[1] != g.shape(v3)[1] {
        return Err(Error::shape(
            "attention",
            "key/value row count mismatch".to_string(),
        ));
    }
    let logits = g.batch_matmul(q3, k3, true)?;
    let scaled = g.scale(logits, 1.0 / (d_k as f64).sqrt())?;
    let weights = g.softmax_last(scaled)?;
    let out = g.batch_matmul(weights, v3, false)?;
    if squeeze {
        let s = g.shape(out).to_vec();
        g.reshape(out, &[s[1], s[2]])
    } else {
        Ok(out)
    }
}
