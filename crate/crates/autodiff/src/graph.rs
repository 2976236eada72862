//! Reverse-mode tape.
//!
//! Forward methods execute eagerly and append one record per op; `backward`
//! walks the tape in exact reverse creation order, which is a reverse
//! topological order because every op only consumes already-created nodes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// A differentiable operation implemented outside this crate.
///
/// The forward value is computed by the caller; the op only has to map the
/// output gradient back onto its inputs. Entries of the returned vector may
/// be `None` for inputs that need no gradient.
pub trait CustomOp: std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub x: NodeId,
    pub h0: NodeId,
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

#[derive(Debug)]
struct GruSaved {
    update: Tensor,    // z_t, [T,B,H]
    reset: Tensor,     // r_t, [T,B,H]
    candidate: Tensor, // h~_t, [T,B,H]
}

#[derive(Debug)]
struct LayerNormSaved {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias { x: NodeId, bias: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    BatchMatMul { a: NodeId, b: NodeId, trans_b: bool },
    Sigmoid(NodeId),
    Tanh(NodeId),
    PRelu { x: NodeId, alpha: NodeId },
    SoftmaxLast(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, saved: LayerNormSaved },
    Reshape(NodeId),
    Permute { x: NodeId, perm: Vec<usize> },
    ConcatLast(Vec<NodeId>),
    SliceLast { x: NodeId, start: usize, len: usize },
    SumAll(NodeId),
    Gru { nodes: GruNodes, saved: GruSaved },
    DilatedConv1d { x: NodeId, weight: NodeId, dilation: usize, causal: bool },
    Custom { op: Box<dyn CustomOp>, inputs: Vec<NodeId> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bindings: HashMap<String, NodeId>,
    binding_order: Vec<(String, NodeId)>,
    check_finite: bool,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            bindings: HashMap::new(),
            binding_order: Vec::new(),
            check_finite: false,
            grad_enabled: true,
        }
    }

    /// Enable the NaN/Inf tripwire: every op output is scanned and the first
    /// non-finite value aborts the forward pass.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// With gradients disabled every node is treated as constant; backward
    /// becomes unavailable but forward cost is unchanged.
    pub fn set_grad_enabled(&mut self, on: bool) {
        self.grad_enabled = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to `id`, if any.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false).expect("leaf")
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad && self.grad_enabled)
            .expect("leaf")
    }

    /// Bind a named parameter from `store` as a graph leaf, reusing the node
    /// if the same name was bound before in this graph.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(id) = self.bindings.get(name) {
            return Ok(*id);
        }
        let value = store.get(name)?.clone();
        let id = self.leaf(value, true);
        self.bindings.insert(name.to_string(), id);
        self.binding_order.push((name.to_string(), id));
        Ok(id)
    }

    /// Parameter bindings of this graph, in first-use order.
    pub fn param_bindings(&self) -> &[(String, NodeId)] {
        &self.binding_order
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<NodeId> {
        if self.check_finite && !matches!(op, Op::Leaf) && !value.all_finite() {
            return Err(Error::NonFinite {
                op: op_name(&op).to_string(),
            });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn any_needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.needs(*id))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for (o, v) in out.data_mut().iter_mut().zip(vb.data()) {
            *o += *v;
        }
        let needs = self.any_needs(&[a, b]);
        self.push(out, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("sub", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for (o, v) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= *v;
        }
        let needs = self.any_needs(&[a, b]);
        self.push(out, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for (o, v) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= *v;
        }
        let needs = self.any_needs(&[a, b]);
        self.push(out, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, c), needs)
    }

    /// `x + bias` with `bias` broadcast over all leading axes.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let d = vx.last_dim();
        if vb.shape() != [d] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} vs last dim {}", vb.shape(), d),
            ));
        }
        let mut out = vx.clone();
        let bd = vb.data().to_vec();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (o, v) in row.iter_mut().zip(bd.iter()) {
                *o += *v;
            }
        }
        let needs = self.any_needs(&[x, bias]);
        self.push(out, Op::AddBias { x, bias }, needs)
    }

    // ---- linear algebra ----

    /// Fused fully connected layer: `y = x w^T + b` for `x: [rows, in]`,
    /// `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1 {
            return Err(Error::shape(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let (rows, in_dim) = (vx.shape()[0], vx.shape()[1]);
        let (out_dim, w_in) = (vw.shape()[0], vw.shape()[1]);
        if in_dim != w_in || vb.shape()[0] != out_dim {
            return Err(Error::shape(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let mut out = vec![0.0; rows * out_dim];
        let bd = vb.data();
        for row in out.chunks_exact_mut(out_dim) {
            row.copy_from_slice(bd);
        }
        kernels::matmul_bt_acc(&mut out, vx.data(), vw.data(), rows, in_dim, out_dim);
        let out = Tensor::from_vec(&[rows, out_dim], out)?;
        let needs = self.any_needs(&[x, w, b]);
        self.push(out, Op::Linear { x, w, b }, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 {
            return Err(Error::shape("matmul", "operands must be rank 2".to_string()));
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (n, kb) = if trans_b {
            (vb.shape()[0], vb.shape()[1])
        } else {
            (vb.shape()[1], vb.shape()[0])
        };
        if k != kb {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?} (trans_b={})", va.shape(), vb.shape(), trans_b),
            ));
        }
        let mut out = vec![0.0; m * n];
        if trans_b {
            kernels::matmul_bt_acc(&mut out, va.data(), vb.data(), m, k, n);
        } else {
            kernels::matmul_acc(&mut out, va.data(), vb.data(), m, k, n);
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        let needs = self.any_needs(&[a, b]);
        self.push(out, Op::MatMul { a, b, trans_b }, needs)
    }

    /// Batched matmul over rank-3 tensors: `[B,n,k] x [B,k,m]`
    /// (or `[B,m,k]` with `trans_b`).
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 3 || vb.rank() != 3 || va.shape()[0] != vb.shape()[0] {
            return Err(Error::shape(
                "batch_matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let batch = va.shape()[0];
        let (m, k) = (va.shape()[1], va.shape()[2]);
        let (n, kb) = if trans_b {
            (vb.shape()[1], vb.shape()[2])
        } else {
            (vb.shape()[2], vb.shape()[1])
        };
        if k != kb {
            return Err(Error::shape(
                "batch_matmul",
                format!("{:?} x {:?} (trans_b={})", va.shape(), vb.shape(), trans_b),
            ));
        }
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let pa = &va.data()[bi * m * k..(bi + 1) * m * k];
            let pb = &vb.data()[bi * n * k..(bi + 1) * n * k];
            let po = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                kernels::matmul_bt_acc(po, pa, pb, m, k, n);
            } else {
                kernels::matmul_acc(po, pa, pb, m, k, n);
            }
        }
        let out = Tensor::from_vec(&[batch, m, n], out)?;
        let needs = self.any_needs(&[a, b]);
        self.push(out, Op::BatchMatMul { a, b, trans_b }, needs)
    }

    // ---- activations ----

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = 1.0 / (1.0 + (-*o).exp());
        }
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = o.tanh();
        }
        let needs = self.needs(x);
        self.push(out, Op::Tanh(x), needs)
    }

    /// PReLU with a single learnable slope: `y = x if x >= 0 else alpha*x`.
    pub fn prelu(&mut self, x: NodeId, alpha: NodeId) -> Result<NodeId> {
        let va = self.value(alpha);
        if va.numel() != 1 {
            return Err(Error::shape("prelu", format!("alpha {:?}", va.shape())));
        }
        let slope = va.data()[0];
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            if *o < 0.0 {
                *o *= slope;
            }
        }
        let needs = self.any_needs(&[x, alpha]);
        self.push(out, Op::PRelu { x, alpha }, needs)
    }

    pub fn softmax_last(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if d == 0 {
            return Err(Error::arg("softmax", "empty softmax axis"));
        }
        let rows = vx.leading_numel();
        let mut out = vx.clone();
        kernels::softmax_rows(out.data_mut(), rows, d);
        let needs = self.needs(x);
        self.push(out, Op::SoftmaxLast(x), needs)
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {:?}, beta {:?}, dim {}", vg.shape(), vb.shape(), d),
            ));
        }
        let rows = vx.leading_numel();
        let mut mean = vec![0.0; rows];
        let mut inv_std = vec![0.0; rows];
        let mut out = vx.clone();
        let gd = vg.data().to_vec();
        let bd = vb.data().to_vec();
        for (r, row) in out.data_mut().chunks_exact_mut(d).enumerate() {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            mean[r] = mu;
            inv_std[r] = inv;
            for (i, v) in row.iter_mut().enumerate() {
                *v = gd[i] * ((*v - mu) * inv) + bd[i];
            }
        }
        let needs = self.any_needs(&[x, gamma, beta]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved: LayerNormSaved { mean, inv_std },
            },
            needs,
        )
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        self.push(out, Op::Reshape(x), needs)
    }

    /// Reorder axes: `out.shape[i] = in.shape[perm[i]]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let vx = self.value(x);
        let mut seen = vec![false; vx.rank()];
        let valid = perm.len() == vx.rank()
            && perm.iter().all(|&p| {
                if p >= seen.len() || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(Error::arg("permute", format!("perm {:?} for rank {}", perm, vx.rank())));
        }
        let out = permute_tensor(vx, perm)?;
        let needs = self.needs(x);
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            needs,
        )
    }

    pub fn concat_last(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::arg("concat_last", "no inputs"));
        }
        let lead = self.value(inputs[0]).shape()[..self.value(inputs[0]).rank() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let v = self.value(id);
            if v.rank() == 0 || v.shape()[..v.rank() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last",
                    format!("{:?} vs leading {:?}", v.shape(), lead),
                ));
            }
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (idx, &id) in inputs.iter().enumerate() {
            let w = widths[idx];
            let src = self.value(id).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::from_vec(&shape, data)?;
        let needs = self.any_needs(inputs);
        self.push(out, Op::ConcatLast(inputs.to_vec()), needs)
    }

    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if start + len > d {
            return Err(Error::arg(
                "slice_last",
                format!("range {}..{} of {}", start, start + len, d),
            ));
        }
        let rows = vx.leading_numel();
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&vx.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::from_vec(&shape, data)?;
        let needs = self.needs(x);
        self.push(out, Op::SliceLast { x, start, len }, needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    // ---- recurrent / convolutional ----

    /// Uni-directional GRU over `x: [T,B,In]` with initial state `h0: [B,H]`.
    ///
    /// Gate layout (reset applied to the previous state before the candidate
    /// matmul):
    ///   z = sigmoid(x Wz' + h Uz' + bz)
    ///   r = sigmoid(x Wr' + h Ur' + br)
    ///   c = tanh(x Wh' + (r*h) Uh' + bh)
    ///   h' = z*h + (1-z)*c
    pub fn gru_seq(&mut self, nodes: GruNodes) -> Result<NodeId> {
        let vx = self.value(nodes.x);
        let vh0 = self.value(nodes.h0);
        if vx.rank() != 3 || vh0.rank() != 2 {
            return Err(Error::shape("gru", format!("x {:?}, h0 {:?}", vx.shape(), vh0.shape())));
        }
        let (t_len, batch, in_dim) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let h_dim = vh0.shape()[1];
        if vh0.shape()[0] != batch {
            return Err(Error::shape("gru", "h0 batch mismatch".to_string()));
        }
        for (name, id, want) in [
            ("wz", nodes.wz, [h_dim, in_dim]),
            ("wr", nodes.wr, [h_dim, in_dim]),
            ("wh", nodes.wh, [h_dim, in_dim]),
            ("uz", nodes.uz, [h_dim, h_dim]),
            ("ur", nodes.ur, [h_dim, h_dim]),
            ("uh", nodes.uh, [h_dim, h_dim]),
        ] {
            if self.value(id).shape() != want {
                return Err(Error::shape("gru", format!("{name} {:?}", self.value(id).shape())));
            }
        }
        for (name, id) in [("bz", nodes.bz), ("br", nodes.br), ("bh", nodes.bh)] {
            if self.value(id).shape() != [h_dim] {
                return Err(Error::shape("gru", format!("{name} {:?}", self.value(id).shape())));
            }
        }

        let bh_len = batch * h_dim;
        let mut h_seq = vec![0.0; t_len * bh_len];
        let mut z_all = vec![0.0; t_len * bh_len];
        let mut r_all = vec![0.0; t_len * bh_len];
        let mut c_all = vec![0.0; t_len * bh_len];

        let x = vx.data();
        let wz = self.value(nodes.wz).data().to_vec();
        let uz = self.value(nodes.uz).data().to_vec();
        let bz = self.value(nodes.bz).data().to_vec();
        let wr = self.value(nodes.wr).data().to_vec();
        let ur = self.value(nodes.ur).data().to_vec();
        let br = self.value(nodes.br).data().to_vec();
        let wh = self.value(nodes.wh).data().to_vec();
        let uh = self.value(nodes.uh).data().to_vec();
        let bh = self.value(nodes.bh).data().to_vec();

        let mut h_prev = vh0.data().to_vec();
        let mut az = vec![0.0; bh_len];
        let mut ar = vec![0.0; bh_len];
        let mut ah = vec![0.0; bh_len];
        let mut rh = vec![0.0; bh_len];
        for t in 0..t_len {
            let xt = &x[t * batch * in_dim..(t + 1) * batch * in_dim];
            for b in 0..batch {
                az[b * h_dim..(b + 1) * h_dim].copy_from_slice(&bz);
                ar[b * h_dim..(b + 1) * h_dim].copy_from_slice(&br);
                ah[b * h_dim..(b + 1) * h_dim].copy_from_slice(&bh);
            }
            kernels::matmul_bt_acc(&mut az, xt, &wz, batch, in_dim, h_dim);
            kernels::matmul_bt_acc(&mut az, &h_prev, &uz, batch, h_dim, h_dim);
            kernels::matmul_bt_acc(&mut ar, xt, &wr, batch, in_dim, h_dim);
            kernels::matmul_bt_acc(&mut ar, &h_prev, &ur, batch, h_dim, h_dim);
            let zt = &mut z_all[t * bh_len..(t + 1) * bh_len];
            let rt = &mut r_all[t * bh_len..(t + 1) * bh_len];
            for i in 0..bh_len {
                zt[i] = 1.0 / (1.0 + (-az[i]).exp());
                rt[i] = 1.0 / (1.0 + (-ar[i]).exp());
                rh[i] = rt[i] * h_prev[i];
            }
            kernels::matmul_bt_acc(&mut ah, xt, &wh, batch, in_dim, h_dim);
            kernels::matmul_bt_acc(&mut ah, &rh, &uh, batch, h_dim, h_dim);
            let ct = &mut c_all[t * bh_len..(t + 1) * bh_len];
            let ht = &mut h_seq[t * bh_len..(t + 1) * bh_len];
            for i in 0..bh_len {
                ct[i] = ah[i].tanh();
                ht[i] = zt[i] * h_prev[i] + (1.0 - zt[i]) * ct[i];
            }
            h_prev.copy_from_slice(ht);
        }

        let out = Tensor::from_vec(&[t_len, batch, h_dim], h_seq)?;
        let needs = self.any_needs(&[
            nodes.x, nodes.h0, nodes.wz, nodes.uz, nodes.bz, nodes.wr, nodes.ur, nodes.br,
            nodes.wh, nodes.uh, nodes.bh,
        ]);
        self.push(
            out,
            Op::Gru {
                nodes,
                saved: GruSaved {
                    update: Tensor::from_vec(&[t_len, batch, h_dim], z_all)?,
                    reset: Tensor::from_vec(&[t_len, batch, h_dim], r_all)?,
                    candidate: Tensor::from_vec(&[t_len, batch, h_dim], c_all)?,
                },
            },
            needs,
        )
    }

    /// Dilated 1-D convolution over the time axis of `x: [T,Cin]` with kernel
    /// `weight: [Cout,Cin,K]` and zero padding.
    ///
    /// Tap `j` reads `x[t + d*(j - K + 1)]` in causal mode and
    /// `x[t + d*(j - (K-1)/2)]` in same mode, so an impulse input reproduces
    /// the kernel reversed, as a convolution should.
    pub fn dilated_conv1d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        dilation: usize,
        causal: bool,
    ) -> Result<NodeId> {
        if dilation < 1 {
            return Err(Error::arg("dilated_conv1d", "dilation must be >= 1"));
        }
        let vx = self.value(x);
        let vw = self.value(weight);
        if vx.rank() != 2 || vw.rank() != 3 {
            return Err(Error::shape(
                "dilated_conv1d",
                format!("x {:?}, w {:?}", vx.shape(), vw.shape()),
            ));
        }
        let (t_len, c_in) = (vx.shape()[0], vx.shape()[1]);
        let (c_out, wc_in, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        if wc_in != c_in {
            return Err(Error::shape(
                "dilated_conv1d",
                format!("x channels {} vs kernel {}", c_in, wc_in),
            ));
        }
        if !causal && k % 2 == 0 {
            return Err(Error::arg("dilated_conv1d", "same padding requires odd kernel length"));
        }
        // Repack the kernel tap-major so the inner dot runs over contiguous
        // input channels.
        let wk = repack_kernel(vw.data(), c_out, c_in, k);
        let mut out = vec![0.0; t_len * c_out];
        let xd = vx.data();
        for t in 0..t_len {
            let orow = &mut out[t * c_out..(t + 1) * c_out];
            for j in 0..k {
                let Some(s) = conv_src_index(t, j, k, dilation, causal, t_len) else {
                    continue;
                };
                let xrow = &xd[s * c_in..(s + 1) * c_in];
                let wj = &wk[j * c_out * c_in..(j + 1) * c_out * c_in];
                for co in 0..c_out {
                    orow[co] += kernels::dot(&wj[co * c_in..(co + 1) * c_in], xrow);
                }
            }
        }
        let out = Tensor::from_vec(&[t_len, c_out], out)?;
        let needs = self.any_needs(&[x, weight]);
        self.push(
            out,
            Op::DilatedConv1d {
                x,
                weight,
                dilation,
                causal,
            },
            needs,
        )
    }

    /// Append an externally implemented op with an eagerly computed output.
    pub fn custom(
        &mut self,
        op: Box<dyn CustomOp>,
        inputs: &[NodeId],
        output: Tensor,
    ) -> Result<NodeId> {
        let needs = self.any_needs(inputs);
        self.push(
            output,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            needs,
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Gradients accumulate across fan-out
    /// and stay queryable per node until the next call.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::arg(
                "backward",
                "loss does not depend on any gradient-tracked leaf",
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backward_step(i, &gout, &mut grads)?;
            // Interior gradients are fully consumed here; only keep leaf
            // gradients queryable to bound peak memory.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_step(
        &self,
        node: usize,
        gout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                let mut gb = gout.clone();
                for v in gb.data_mut() {
                    *v = -*v;
                }
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let mut ga = gout.clone();
                    for (g, v) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *g *= *v;
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = gout.clone();
                    for (g, v) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *g *= *v;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, c) => {
                let mut gx = gout.clone();
                for v in gx.data_mut() {
                    *v *= *c;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, gout.clone());
                }
                if self.needs(*bias) {
                    let d = self.value(*bias).numel();
                    let mut gb = vec![0.0; d];
                    for row in gout.data().chunks_exact(d) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += *v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(&[d], gb)?);
                }
            }
            Op::Linear { x, w, b } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (rows, in_dim) = (vx.shape()[0], vx.shape()[1]);
                let out_dim = vw.shape()[0];
                if self.needs(*x) {
                    let mut gx = vec![0.0; rows * in_dim];
                    kernels::matmul_acc(&mut gx, gout.data(), vw.data(), rows, out_dim, in_dim);
                    self.accumulate(grads, *x, Tensor::from_vec(vx.shape(), gx)?);
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; out_dim * in_dim];
                    kernels::matmul_at_acc(
                        &mut gw,
                        gout.data(),
                        vx.data(),
                        out_dim,
                        rows,
                        in_dim,
                    );
                    self.accumulate(grads, *w, Tensor::from_vec(vw.shape(), gw)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; out_dim];
                    for row in gout.data().chunks_exact(out_dim) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += *v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[out_dim], gb)?);
                }
            }
            Op::MatMul { a, b, trans_b } => {
                self.matmul_backward(grads, gout, *a, *b, *trans_b, false)?;
            }
            Op::BatchMatMul { a, b, trans_b } => {
                self.matmul_backward(grads, gout, *a, *b, *trans_b, true)?;
            }
            Op::Sigmoid(x) => {
                let y = self.value(NodeId(node));
                let mut gx = gout.clone();
                for (g, &v) in gx.data_mut().iter_mut().zip(y.data()) {
                    *g *= v * (1.0 - v);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let y = self.value(NodeId(node));
                let mut gx = gout.clone();
                for (g, &v) in gx.data_mut().iter_mut().zip(y.data()) {
                    *g *= 1.0 - v * v;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PRelu { x, alpha } => {
                let vx = self.value(*x);
                let slope = self.value(*alpha).data()[0];
                if self.needs(*x) {
                    let mut gx = gout.clone();
                    for (g, &v) in gx.data_mut().iter_mut().zip(vx.data()) {
                        if v < 0.0 {
                            *g *= slope;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*alpha) {
                    let mut ga = 0.0;
                    for (&g, &v) in gout.data().iter().zip(vx.data()) {
                        if v < 0.0 {
                            ga += g * v;
                        }
                    }
                    let shape = self.value(*alpha).shape().to_vec();
                    self.accumulate(grads, *alpha, Tensor::full(&shape, ga));
                }
            }
            Op::SoftmaxLast(x) => {
                let y = self.value(NodeId(node));
                let d = y.last_dim();
                let mut gx = gout.clone();
                {
                    let gd = gx.data_mut();
                    let yd = y.data();
                    for r in 0..yd.len() / d {
                        let row = r * d;
                        let mut s = 0.0;
                        for i in 0..d {
                            s += gd[row + i] * yd[row + i];
                        }
                        for i in 0..d {
                            gd[row + i] = yd[row + i] * (gd[row + i] - s);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let vx = self.value(*x);
                let vg = self.value(*gamma);
                let d = vx.last_dim();
                let rows = vx.leading_numel();
                let xd = vx.data();
                let gd = gout.data();
                let gam = vg.data();
                let mut gx = vec![0.0; xd.len()];
                let mut ggam = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for r in 0..rows {
                    let o = r * d;
                    let inv = saved.inv_std[r];
                    let mu = saved.mean[r];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for i in 0..d {
                        let xh = (xd[o + i] - mu) * inv;
                        let gh = gd[o + i] * gam[i];
                        m1 += gh;
                        m2 += gh * xh;
                        ggam[i] += gd[o + i] * xh;
                        gbeta[i] += gd[o + i];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for i in 0..d {
                        let xh = (xd[o + i] - mu) * inv;
                        let gh = gd[o + i] * gam[i];
                        gx[o + i] = inv * (gh - m1 - xh * m2);
                    }
                }
                if self.needs(*x) {
                    self.accumulate(grads, *x, Tensor::from_vec(vx.shape(), gx)?);
                }
                if self.needs(*gamma) {
                    self.accumulate(grads, *gamma, Tensor::from_vec(&[d], ggam)?);
                }
                if self.needs(*beta) {
                    self.accumulate(grads, *beta, Tensor::from_vec(&[d], gbeta)?);
                }
            }
            Op::Reshape(x) => {
                let gx = gout.reshaped(self.value(*x).shape())?;
                self.accumulate(grads, *x, gx);
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let gx = permute_tensor(gout, &inverse)?;
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatLast(inputs) => {
                let total = self.value(NodeId(node)).last_dim();
                let rows = self.value(NodeId(node)).leading_numel();
                let mut off = 0;
                for &id in inputs {
                    let w = self.value(id).last_dim();
                    if self.needs(id) {
                        let mut gi = vec![0.0; rows * w];
                        for r in 0..rows {
                            gi[r * w..(r + 1) * w].copy_from_slice(
                                &gout.data()[r * total + off..r * total + off + w],
                            );
                        }
                        self.accumulate(grads, id, Tensor::from_vec(self.value(id).shape(), gi)?);
                    }
                    off += w;
                }
            }
            Op::SliceLast { x, start, len } => {
                let vx = self.value(*x);
                let d = vx.last_dim();
                let rows = vx.leading_numel();
                let mut gx = vec![0.0; vx.numel()];
                for r in 0..rows {
                    gx[r * d + start..r * d + start + len]
                        .copy_from_slice(&gout.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, Tensor::from_vec(vx.shape(), gx)?);
            }
            Op::SumAll(x) => {
                let g = gout.data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g));
            }
            Op::Gru { nodes, saved } => {
                self.gru_backward(grads, gout, NodeId(node), nodes, saved)?;
            }
            Op::DilatedConv1d {
                x,
                weight,
                dilation,
                causal,
            } => {
                self.conv_backward(grads, gout, *x, *weight, *dilation, *causal)?;
            }
            Op::Custom { op, inputs } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
                let gs = op.backward(&vals, self.value(NodeId(node)), gout)?;
                if gs.len() != inputs.len() {
                    return Err(Error::arg("custom", "backward arity mismatch"));
                }
                for (id, g) in inputs.iter().zip(gs) {
                    if let Some(g) = g {
                        if self.needs(*id) {
                            self.accumulate(grads, *id, g);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn matmul_backward(
        &self,
        grads: &mut [Option<Tensor>],
        gout: &Tensor,
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        batched: bool,
    ) -> Result<()> {
        let va = self.value(a);
        let vb = self.value(b);
        let (batch, m, k) = if batched {
            (va.shape()[0], va.shape()[1], va.shape()[2])
        } else {
            (1, va.shape()[0], va.shape()[1])
        };
        let n = if trans_b {
            if batched { vb.shape()[1] } else { vb.shape()[0] }
        } else if batched {
            vb.shape()[2]
        } else {
            vb.shape()[1]
        };
        if self.needs(a) {
            let mut ga = vec![0.0; va.numel()];
            for bi in 0..batch {
                let g = &gout.data()[bi * m * n..(bi + 1) * m * n];
                let pb = &vb.data()[bi * n * k..(bi + 1) * n * k];
                let pga = &mut ga[bi * m * k..(bi + 1) * m * k];
                if trans_b {
                    // y = a b^T  =>  ga = g b
                    kernels::matmul_acc(pga, g, pb, m, n, k);
                } else {
                    // y = a b    =>  ga = g b^T
                    kernels::matmul_bt_acc(pga, g, pb, m, n, k);
                }
            }
            self.accumulate(grads, a, Tensor::from_vec(va.shape(), ga)?);
        }
        if self.needs(b) {
            let mut gb = vec![0.0; vb.numel()];
            for bi in 0..batch {
                let g = &gout.data()[bi * m * n..(bi + 1) * m * n];
                let pa = &va.data()[bi * m * k..(bi + 1) * m * k];
                let pgb = &mut gb[bi * n * k..(bi + 1) * n * k];
                if trans_b {
                    // y = a b^T  =>  gb = g^T a
                    kernels::matmul_at_acc(pgb, g, pa, n, m, k);
                } else {
                    // y = a b    =>  gb = a^T g
                    kernels::matmul_at_acc(pgb, pa, g, k, m, n);
                }
            }
            self.accumulate(grads, b, Tensor::from_vec(vb.shape(), gb)?);
        }
        Ok(())
    }

    fn gru_backward(
        &self,
        grads: &mut [Option<Tensor>],
        gout: &Tensor,
        out: NodeId,
        nodes: &GruNodes,
        saved: &GruSaved,
    ) -> Result<()> {
        let vx = self.value(nodes.x);
        let (t_len, batch, in_dim) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let h_dim = self.value(nodes.h0).shape()[1];
        let bh = batch * h_dim;

        let x = vx.data();
        let h_seq = self.value(out).data();
        let h0 = self.value(nodes.h0).data();
        let z_all = saved.update.data();
        let r_all = saved.reset.data();
        let c_all = saved.candidate.data();
        let wz = self.value(nodes.wz).data();
        let uz = self.value(nodes.uz).data();
        let wr = self.value(nodes.wr).data();
        let ur = self.value(nodes.ur).data();
        let wh = self.value(nodes.wh).data();
        let uh = self.value(nodes.uh).data();

        let mut gx = vec![0.0; x.len()];
        let mut gwz = vec![0.0; wz.len()];
        let mut guz = vec![0.0; uz.len()];
        let mut gbz = vec![0.0; h_dim];
        let mut gwr = vec![0.0; wr.len()];
        let mut gur = vec![0.0; ur.len()];
        let mut gbr = vec![0.0; h_dim];
        let mut gwh = vec![0.0; wh.len()];
        let mut guh = vec![0.0; uh.len()];
        let mut gbh = vec![0.0; h_dim];

        let mut gh = vec![0.0; bh];
        let mut gaz = vec![0.0; bh];
        let mut gar = vec![0.0; bh];
        let mut gah = vec![0.0; bh];
        let mut grh = vec![0.0; bh];
        let mut rh = vec![0.0; bh];
        let mut gh_prev = vec![0.0; bh];

        for t in (0..t_len).rev() {
            for (g, &v) in gh.iter_mut().zip(&gout.data()[t * bh..(t + 1) * bh]) {
                *g += v;
            }
            let h_prev = if t == 0 {
                h0
            } else {
                &h_seq[(t - 1) * bh..t * bh]
            };
            let zt = &z_all[t * bh..(t + 1) * bh];
            let rt = &r_all[t * bh..(t + 1) * bh];
            let ct = &c_all[t * bh..(t + 1) * bh];
            let xt = &x[t * batch * in_dim..(t + 1) * batch * in_dim];
            for i in 0..bh {
                let gz = gh[i] * (h_prev[i] - ct[i]);
                gaz[i] = gz * zt[i] * (1.0 - zt[i]);
                let gc = gh[i] * (1.0 - zt[i]);
                gah[i] = gc * (1.0 - ct[i] * ct[i]);
                rh[i] = rt[i] * h_prev[i];
            }
            grh.iter_mut().for_each(|v| *v = 0.0);
            kernels::matmul_acc(&mut grh, &gah, uh, batch, h_dim, h_dim);
            for i in 0..bh {
                let gr = grh[i] * h_prev[i];
                gar[i] = gr * rt[i] * (1.0 - rt[i]);
            }
            // Weight and bias gradients.
            kernels::matmul_at_acc(&mut gwz, &gaz, xt, h_dim, batch, in_dim);
            kernels::matmul_at_acc(&mut guz, &gaz, h_prev, h_dim, batch, h_dim);
            kernels::matmul_at_acc(&mut gwr, &gar, xt, h_dim, batch, in_dim);
            kernels::matmul_at_acc(&mut gur, &gar, h_prev, h_dim, batch, h_dim);
            kernels::matmul_at_acc(&mut gwh, &gah, xt, h_dim, batch, in_dim);
            kernels::matmul_at_acc(&mut guh, &gah, &rh, h_dim, batch, h_dim);
            for b in 0..batch {
                for i in 0..h_dim {
                    gbz[i] += gaz[b * h_dim + i];
                    gbr[i] += gar[b * h_dim + i];
                    gbh[i] += gah[b * h_dim + i];
                }
            }
            // Input gradient.
            let gxt = &mut gx[t * batch * in_dim..(t + 1) * batch * in_dim];
            kernels::matmul_acc(gxt, &gaz, wz, batch, h_dim, in_dim);
            kernels::matmul_acc(gxt, &gar, wr, batch, h_dim, in_dim);
            kernels::matmul_acc(gxt, &gah, wh, batch, h_dim, in_dim);
            // Previous-state gradient.
            for i in 0..bh {
                gh_prev[i] = gh[i] * zt[i] + grh[i] * rt[i];
            }
            kernels::matmul_acc(&mut gh_prev, &gaz, uz, batch, h_dim, h_dim);
            kernels::matmul_acc(&mut gh_prev, &gar, ur, batch, h_dim, h_dim);
            gh.copy_from_slice(&gh_prev);
        }

        if self.needs(nodes.x) {
            self.accumulate(grads, nodes.x, Tensor::from_vec(vx.shape(), gx)?);
        }
        if self.needs(nodes.h0) {
            self.accumulate(grads, nodes.h0, Tensor::from_vec(&[batch, h_dim], gh.clone())?);
        }
        for (id, g, shape) in [
            (nodes.wz, gwz, [h_dim, in_dim]),
            (nodes.wr, gwr, [h_dim, in_dim]),
            (nodes.wh, gwh, [h_dim, in_dim]),
            (nodes.uz, guz, [h_dim, h_dim]),
            (nodes.ur, gur, [h_dim, h_dim]),
            (nodes.uh, guh, [h_dim, h_dim]),
        ] {
            if self.needs(id) {
                self.accumulate(grads, id, Tensor::from_vec(&shape, g)?);
            }
        }
        for (id, g) in [(nodes.bz, gbz), (nodes.br, gbr), (nodes.bh, gbh)] {
            if self.needs(id) {
                self.accumulate(grads, id, Tensor::from_vec(&[h_dim], g)?);
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        grads: &mut [Option<Tensor>],
        gout: &Tensor,
        x: NodeId,
        weight: NodeId,
        dilation: usize,
        causal: bool,
    ) -> Result<()> {
        let vx = self.value(x);
        let vw = self.value(weight);
        let (t_len, c_in) = (vx.shape()[0], vx.shape()[1]);
        let (c_out, _, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        let xd = vx.data();
        let gd = gout.data();
        let wk = repack_kernel(vw.data(), c_out, c_in, k);

        if self.needs(weight) {
            let mut gwk = vec![0.0; k * c_out * c_in];
            for t in 0..t_len {
                let grow = &gd[t * c_out..(t + 1) * c_out];
                for j in 0..k {
                    let Some(s) = conv_src_index(t, j, k, dilation, causal, t_len) else {
                        continue;
                    };
                    let xrow = &xd[s * c_in..(s + 1) * c_in];
                    let gw = &mut gwk[j * c_out * c_in..(j + 1) * c_out * c_in];
                    for co in 0..c_out {
                        kernels::axpy(&mut gw[co * c_in..(co + 1) * c_in], grow[co], xrow);
                    }
                }
            }
            // Un-repack into [Cout,Cin,K].
            let mut gw = vec![0.0; c_out * c_in * k];
            for j in 0..k {
                for co in 0..c_out {
                    for ci in 0..c_in {
                        gw[(co * c_in + ci) * k + j] = gwk[(j * c_out + co) * c_in + ci];
                    }
                }
            }
            self.accumulate(grads, weight, Tensor::from_vec(&[c_out, c_in, k], gw)?);
        }
        if self.needs(x) {
            let mut gx = vec![0.0; t_len * c_in];
            let mut tmp = vec![0.0; c_in];
            for t in 0..t_len {
                let grow = &gd[t * c_out..(t + 1) * c_out];
                for j in 0..k {
                    let Some(s) = conv_src_index(t, j, k, dilation, causal, t_len) else {
                        continue;
                    };
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    let wj = &wk[j * c_out * c_in..(j + 1) * c_out * c_in];
                    for co in 0..c_out {
                        kernels::axpy(&mut tmp, grow[co], &wj[co * c_in..(co + 1) * c_in]);
                    }
                    kernels::axpy(&mut gx[s * c_in..(s + 1) * c_in], 1.0, &tmp);
                }
            }
            self.accumulate(grads, x, Tensor::from_vec(&[t_len, c_in], gx)?);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *v;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddBias { .. } => "add_bias",
        Op::Linear { .. } => "linear",
        Op::MatMul { .. } => "matmul",
        Op::BatchMatMul { .. } => "batch_matmul",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::PRelu { .. } => "prelu",
        Op::SoftmaxLast(..) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Reshape(..) => "reshape",
        Op::Permute { .. } => "permute",
        Op::ConcatLast(..) => "concat_last",
        Op::SliceLast { .. } => "slice_last",
        Op::SumAll(..) => "sum_all",
        Op::Gru { .. } => "gru",
        Op::DilatedConv1d { .. } => "dilated_conv1d",
        Op::Custom { op, .. } => op.name(),
    }
}

fn conv_src_index(
    t: usize,
    j: usize,
    k: usize,
    dilation: usize,
    causal: bool,
    t_len: usize,
) -> Option<usize> {
    let center = if causal { k as isize - 1 } else { (k as isize - 1) / 2 };
    let s = t as isize + dilation as isize * (j as isize - center);
    if s < 0 || s >= t_len as isize {
        None
    } else {
        Some(s as usize)
    }
}

fn repack_kernel(w: &[f64], c_out: usize, c_in: usize, k: usize) -> Vec<f64> {
    let mut wk = vec![0.0; k * c_out * c_in];
    for co in 0..c_out {
        for ci in 0..c_in {
            for j in 0..k {
                wk[(j * c_out + co) * c_in + ci] = w[(co * c_in + ci) * k + j];
            }
        }
    }
    wk
}

fn permute_tensor(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // Fast path for the common [A,B,C] -> [B,A,C] swap.
    if rank == 3 && perm == [1, 0, 2] {
        let (a, b, c) = (shape[0], shape[1], shape[2]);
        let mut data = vec![0.0; x.numel()];
        let src = x.data();
        for i in 0..a {
            for j in 0..b {
                data[(j * a + i) * c..(j * a + i + 1) * c]
                    .copy_from_slice(&src[(i * b + j) * c..(i * b + j + 1) * c]);
            }
        }
        return Tensor::from_vec(&out_shape, data);
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut data = vec![0.0; x.numel()];
    let src = x.data();
    let mut coords = vec![0usize; rank];
    for (oi, slot) in data.iter_mut().enumerate() {
        let mut rem = oi;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut ii = 0;
        for d in 0..rank {
            ii += coords[d] * in_strides[perm[d]];
        }
        *slot = src[ii];
    }
    Tensor::from_vec(&out_shape, data)
}
