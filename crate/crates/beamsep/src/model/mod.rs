//! The trainable networks: a dilated-convolution complex-ratio-filter
//! estimator on the fixed STFT feature stack, and the recurrent /
//! self-attentive beamformer family mapping covariance features to
//! per-speaker combination weights.
//!
//! Speaker slots share every parameter and flow through the networks as a
//! batch axis, which makes slot-swap symmetry exact by construction: the
//! only cross-slot couplings are the symmetric directional-feature context
//! in the estimator input and the final output assembly.

pub mod diffops;

use std::sync::Arc;

use autodiff::nn::{scaled_dot_attention, Ffn, GruParams, Initializer, LayerNorm, Linear, ParamStore, PRELU_INIT};
use autodiff::{Graph, NodeId, Tensor};
use ndarray::{Array2, Array5};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beam::ComplexRatioFilter;
use crate::dsp::{MultiChannelSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use diffops::{BeamformOp, CovarianceOp, CrfApplyOp, IstftOp, SpecRef};

fn default_est_channels() -> usize {
    128
}
fn default_blocks_per_stack() -> usize {
    8
}
fn default_stacks() -> usize {
    2
}
fn default_kernel() -> usize {
    3
}
fn default_context() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// Dilated-conv estimator hyperparameters; defaults are the desk-scale
/// profile (8 blocks per stack, dilations 1..128, two stacks, 128 channels).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(default = "default_est_channels")]
    pub channels: usize,
    #[serde(default = "default_blocks_per_stack")]
    pub blocks_per_stack: usize,
    #[serde(default = "default_stacks")]
    pub stacks: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Neighborhood half-width L of the complex ratio filter (3x3 for L=1).
    #[serde(default = "default_context")]
    pub context: usize,
    /// One filter per channel when true; a single channel-shared filter
    /// otherwise.
    #[serde(default = "default_true")]
    pub per_channel_crf: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerVariant {
    /// FC + GRU (system iii).
    Grnn,
    /// FC + temporal self-attention + GRU (iv).
    RnnTemporal,
    /// FC + spatial self-attention + GRU (v).
    RnnSpatial,
    /// FC + both attention blocks, no GRU (vi).
    TsSa,
    /// FC + spatial + temporal self-attention + GRU (vii).
    RnnTsSa,
}

impl BeamformerVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "grnn" => Ok(Self::Grnn),
            "rnn_temporal" => Ok(Self::RnnTemporal),
            "rnn_spatial" => Ok(Self::RnnSpatial),
            "ts_sa" | "ts_sa_only" => Ok(Self::TsSa),
            "rnn_ts_sa" => Ok(Self::RnnTsSa),
            other => Err(Error::config(format!("unknown beamformer variant `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Grnn => "grnn",
            Self::RnnTemporal => "rnn_temporal",
            Self::RnnSpatial => "rnn_spatial",
            Self::TsSa => "ts_sa",
            Self::RnnTsSa => "rnn_ts_sa",
        }
    }

    pub fn has_gru(&self) -> bool {
        !matches!(self, Self::TsSa)
    }

    pub fn has_temporal_sa(&self) -> bool {
        matches!(self, Self::RnnTemporal | Self::TsSa | Self::RnnTsSa)
    }

    pub fn has_spatial_sa(&self) -> bool {
        matches!(self, Self::RnnSpatial | Self::TsSa | Self::RnnTsSa)
    }

    pub fn all() -> [Self; 5] {
        [Self::Grnn, Self::RnnTemporal, Self::RnnSpatial, Self::TsSa, Self::RnnTsSa]
    }
}

fn default_fc1() -> usize {
    256
}
fn default_gru_hidden() -> usize {
    128
}
fn default_dk() -> usize {
    64
}
fn default_variant() -> BeamformerVariant {
    BeamformerVariant::RnnTsSa
}

/// Beamformer network widths; desk-scale defaults (the paper-scale values
/// are 2800 / 500 / 90-wide output for M=15, C=3).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeamformerNetConfig {
    #[serde(default = "default_variant")]
    pub variant: BeamformerVariant,
    #[serde(default = "default_fc1")]
    pub fc1: usize,
    #[serde(default = "default_gru_hidden")]
    pub gru_hidden: usize,
    #[serde(default = "default_dk")]
    pub d_k: usize,
    /// Swap the two attention stages (ablation of the figure's ordering).
    #[serde(default)]
    pub temporal_before_spatial: bool,
}

impl Default for BeamformerNetConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Stage manifest for a variant, in execution order.
#[derive(Debug, Clone, Serialize)]
pub struct VariantPlan {
    pub name: &'static str,
    pub stages: Vec<&'static str>,
}

pub fn build_variant(name: &str) -> Result<VariantPlan> {
    let v = BeamformerVariant::parse(name)?;
    Ok(variant_plan(v, false))
}

pub fn variant_plan(v: BeamformerVariant, temporal_before_spatial: bool) -> VariantPlan {
    let mut stages = vec!["fc_prelu"];
    let (first, second) = if temporal_before_spatial {
        ("temporal_sa", "spatial_sa")
    } else {
        ("spatial_sa", "temporal_sa")
    };
    let wants = |s: &str| match s {
        "temporal_sa" => v.has_temporal_sa(),
        _ => v.has_spatial_sa(),
    };
    if wants(first) {
        stages.push(first);
    }
    if wants(second) {
        stages.push(second);
    }
    if v.has_gru() {
        stages.push("gru");
    }
    stages.push("output_fc");
    VariantPlan {
        name: v.name(),
        stages,
    }
}

/// One self-attention block: Q/K/V feed-forward units, attention, residual,
/// layer norm, output feed-forward. Applies to `[B, N, D]` with `N` as the
/// attention axis.
#[derive(Debug, Clone)]
pub struct SaBlock {
    q: Ffn,
    k: Ffn,
    v: Ffn,
    out: Ffn,
    ln: LayerNorm,
    d: usize,
    d_k: usize,
}

impl SaBlock {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        d: usize,
        d_k: usize,
    ) -> Result<Self> {
        Ok(SaBlock {
            q: Ffn::register(store, init, &format!("{prefix}.q"), d, d_k)?,
            k: Ffn::register(store, init, &format!("{prefix}.k"), d, d_k)?,
            v: Ffn::register(store, init, &format!("{prefix}.v"), d, d)?,
            out: Ffn::register(store, init, &format!("{prefix}.out"), d, d)?,
            ln: LayerNorm::register(store, &format!("{prefix}.ln"), d)?,
            d,
            d_k,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d {
            return Err(Error::shape(format!(
                "sa block wants [B,N,{}], got {:?}",
                self.d, shape
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        let rows = b * n;
        let x2 = g.reshape(x, &[rows, self.d])?;
        let q = self.q.apply(g, store, x2)?;
        let k = self.k.apply(g, store, x2)?;
        let v = self.v.apply(g, store, x2)?;
        let q3 = g.reshape(q, &[b, n, self.d_k])?;
        let k3 = g.reshape(k, &[b, n, self.d_k])?;
        let v3 = g.reshape(v, &[b, n, self.d])?;
        let att = scaled_dot_attention(g, q3, k3, v3)?;
        let res = g.add(x, att)?;
        let res2 = g.reshape(res, &[rows, self.d])?;
        let normed = self.ln.apply(g, store, res2)?;
        let out = self.out.apply(g, store, normed)?;
        Ok(g.reshape(out, &[b, n, self.d])?)
    }

    pub fn param_count(&self) -> usize {
        self.q.param_count()
            + self.k.param_count()
            + self.v.param_count()
            + self.out.param_count()
            + self.ln.param_count()
    }
}

/// The cRF estimator: shared dilated-conv trunk over time, run once per
/// speaker slot on (LPS, IPD, DF_self, sum of other DFs), with two linear
/// heads emitting raw speech and noise filter taps.
#[derive(Debug, Clone)]
pub struct CrfEstimator {
    pub cfg: EstimatorConfig,
    pub bins: usize,
    pub mics: usize,
    pub ipd_planes: usize,
    in_proj: Linear,
    in_alpha: String,
    blocks: Vec<ConvBlock>,
    head_speech: Linear,
    head_noise: Linear,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    weight: String,
    bias: String,
    alpha: String,
    dilation: usize,
}

impl CrfEstimator {
    /// Width of the per-slot input: LPS + IPD pairs + own DF + others-DF sum.
    pub fn input_width(bins: usize, ipd_planes: usize) -> usize {
        bins * (1 + ipd_planes + 2)
    }

    pub fn tap_channels(&self) -> usize {
        if self.cfg.per_channel_crf {
            self.mics
        } else {
            1
        }
    }

    pub fn taps_per_point(&self) -> usize {
        let k = 2 * self.cfg.context + 1;
        k * k
    }

    /// Width of one head's output per frame:
    /// `F * M' * (2L+1)^2 * 2` (speech and noise each).
    pub fn head_width(&self) -> usize {
        self.bins * self.tap_channels() * self.taps_per_point() * 2
    }

    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        cfg: EstimatorConfig,
        bins: usize,
        mics: usize,
        ipd_planes: usize,
    ) -> Result<Self> {
        if cfg.kernel % 2 == 0 {
            return Err(Error::config("estimator kernel must be odd"));
        }
        let in_w = Self::input_width(bins, ipd_planes);
        let in_proj = Linear::register(store, init, &format!("{prefix}.in"), in_w, cfg.channels)?;
        let in_alpha = format!("{prefix}.in.alpha");
        store.register(&in_alpha, Tensor::scalar(PRELU_INIT))?;
        let mut blocks = Vec::new();
        for s in 0..cfg.stacks {
            for b in 0..cfg.blocks_per_stack {
                let dilation = 1usize << b;
                let base = format!("{prefix}.s{s}b{b}");
                let weight = format!("{base}.conv.w");
                let bias = format!("{base}.conv.b");
                let alpha = format!("{base}.alpha");
                store.register(
                    &weight,
                    init.uniform(&[cfg.channels, cfg.channels, cfg.kernel], cfg.channels * cfg.kernel),
                )?;
                store.register(&bias, Tensor::zeros(&[cfg.channels]))?;
                store.register(&alpha, Tensor::scalar(PRELU_INIT))?;
                blocks.push(ConvBlock {
                    weight,
                    bias,
                    alpha,
                    dilation,
                });
            }
        }
        let mut est = CrfEstimator {
            cfg,
            bins,
            mics,
            ipd_planes,
            in_proj,
            in_alpha,
            blocks,
            head_speech: Linear {
                w: String::new(),
                b: String::new(),
                in_dim: 0,
                out_dim: 0,
            },
            head_noise: Linear {
                w: String::new(),
                b: String::new(),
                in_dim: 0,
                out_dim: 0,
            },
        };
        let head_w = est.head_width();
        est.head_speech =
            Linear::register(store, init, &format!("{prefix}.head_s"), cfg.channels, head_w)?;
        est.head_noise =
            Linear::register(store, init, &format!("{prefix}.head_n"), cfg.channels, head_w)?;
        Ok(est)
    }

    /// Run the shared trunk on one slot's features `[T, input_width]` and
    /// return raw (speech, noise) taps, each `[T, F, M', K*K, 2]`.
    pub fn forward_slot(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let t_len = g.shape(features)[0];
        let mut h = self.in_proj.apply(g, store, features)?;
        let a0 = g.param(store, &self.in_alpha)?;
        h = g.prelu(h, a0)?;
        for block in &self.blocks {
            let w = g.param(store, &block.weight)?;
            let b = g.param(store, &block.bias)?;
            let a = g.param(store, &block.alpha)?;
            let mut c = g.dilated_conv1d(h, w, block.dilation, false)?;
            c = g.add_bias(c, b)?;
            c = g.prelu(c, a)?;
            h = g.add(h, c)?;
        }
        let shape = [
            t_len,
            self.bins,
            self.tap_channels(),
            self.taps_per_point(),
            2,
        ];
        let hs = self.head_speech.apply(g, store, h)?;
        let speech = g.reshape(hs, &shape)?;
        let hn = self.head_noise.apply(g, store, h)?;
        let noise = g.reshape(hn, &shape)?;
        Ok((speech, noise))
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.in_proj.param_count() + 1;
        for _ in &self.blocks {
            n += self.cfg.channels * self.cfg.channels * self.cfg.kernel + self.cfg.channels + 1;
        }
        n + self.head_speech.param_count() + self.head_noise.param_count()
    }
}

/// Per-slot features for the estimator: plane-major
/// `[lps | ipd planes | df_self | sum of other df planes]`, each `F` wide.
///
/// The LPS plane is standardized per utterance so its scale matches the
/// phase features; the same statistics apply to every slot, which keeps
/// slot-swap symmetry exact.
pub fn build_slot_features(stack: &FeatureStack) -> Vec<Array2<f64>> {
    let (t_len, bins) = (stack.frames(), stack.bins());
    let c = stack.speakers();
    let p2 = stack.ipd_planes();
    let width = bins * (1 + p2 + 2);
    let n = (t_len * bins) as f64;
    let lps_mean = stack.lps.iter().sum::<f64>() / n;
    let lps_var = stack.lps.iter().map(|v| (v - lps_mean) * (v - lps_mean)).sum::<f64>() / n;
    let lps_inv_std = 1.0 / (lps_var.sqrt() + 1e-6);
    (0..c)
        .map(|slot| {
            let mut out = Array2::<f64>::zeros((t_len, width));
            for t in 0..t_len {
                let mut col = 0;
                for f in 0..bins {
                    out[[t, col]] = (stack.lps[[t, f]] - lps_mean) * lps_inv_std;
                    col += 1;
                }
                for p in 0..p2 {
                    for f in 0..bins {
                        out[[t, col]] = stack.ipd[[t, f, p]];
                        col += 1;
                    }
                }
                for f in 0..bins {
                    out[[t, col]] = stack.df[[t, f, slot]];
                    col += 1;
                }
                // Sum of the other slots' DF planes, ascending slot order.
                for f in 0..bins {
                    let mut acc = 0.0;
                    for j in 0..c {
                        if j != slot {
                            acc += stack.df[[t, f, j]];
                        }
                    }
                    out[[t, col]] = acc;
                    col += 1;
                }
            }
            out
        })
        .collect()
}

/// The self-attentive RNN beamformer. Consumes the concatenated covariance
/// features `[T, F, 4*C*M^2]`, processes each speaker slot `[Phi_S, Phi_N]`
/// through the shared trunk with frequency (and slot) as batch axes, and
/// emits per-slot weights `[T, F, M, 2]`.
#[derive(Debug, Clone)]
pub struct SaRnnBeamformer {
    pub cfg: BeamformerNetConfig,
    pub mics: usize,
    fc1: Linear,
    fc1_alpha: String,
    spatial: Option<SaBlock>,
    temporal: Option<SaBlock>,
    gru: Option<GruParams>,
    head: Linear,
}

impl SaRnnBeamformer {
    pub fn slot_width(mics: usize) -> usize {
        4 * mics * mics
    }

    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        cfg: BeamformerNetConfig,
        mics: usize,
    ) -> Result<Self> {
        if cfg.fc1 == 0 || cfg.gru_hidden == 0 || cfg.d_k == 0 {
            return Err(Error::config("beamformer widths must be positive"));
        }
        if cfg.variant.has_spatial_sa() && cfg.fc1 % mics != 0 {
            return Err(Error::config(format!(
                "spatial attention needs fc1 ({}) divisible by the channel count ({mics})",
                cfg.fc1
            )));
        }
        let in_w = Self::slot_width(mics);
        let fc1 = Linear::register(store, init, &format!("{prefix}.fc1"), in_w, cfg.fc1)?;
        let fc1_alpha = format!("{prefix}.fc1.alpha");
        store.register(&fc1_alpha, Tensor::scalar(PRELU_INIT))?;
        let spatial = if cfg.variant.has_spatial_sa() {
            Some(SaBlock::register(
                store,
                init,
                &format!("{prefix}.sa_s"),
                cfg.fc1 / mics,
                cfg.d_k,
            )?)
        } else {
            None
        };
        let temporal = if cfg.variant.has_temporal_sa() {
            Some(SaBlock::register(
                store,
                init,
                &format!("{prefix}.sa_t"),
                cfg.fc1,
                cfg.d_k,
            )?)
        } else {
            None
        };
        let gru = if cfg.variant.has_gru() {
            Some(GruParams::register(
                store,
                init,
                &format!("{prefix}.gru"),
                cfg.fc1,
                cfg.gru_hidden,
            )?)
        } else {
            None
        };
        let head_in = if cfg.variant.has_gru() {
            cfg.gru_hidden
        } else {
            cfg.fc1
        };
        let head = Linear::register(store, init, &format!("{prefix}.head"), head_in, 2 * mics)?;
        Ok(SaRnnBeamformer {
            cfg,
            mics,
            fc1,
            fc1_alpha,
            spatial,
            temporal,
            gru,
            head,
        })
    }

    fn apply_spatial(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId, // [T*F, fc1]
        rows: usize,
    ) -> Result<NodeId> {
        let block = self.spatial.as_ref().expect("spatial block");
        let dm = self.cfg.fc1 / self.mics;
        let x3 = g.reshape(x, &[rows, self.mics, dm])?;
        let y = block.apply(g, store, x3)?;
        Ok(g.reshape(y, &[rows, self.cfg.fc1])?)
    }

    fn apply_temporal(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId, // [T*F, fc1]
        t_len: usize,
        bins: usize,
    ) -> Result<NodeId> {
        let block = self.temporal.as_ref().expect("temporal block");
        let x3 = g.reshape(x, &[t_len, bins, self.cfg.fc1])?;
        let xf = g.permute(x3, &[1, 0, 2])?; // [F, T, fc1]
        let y = block.apply(g, store, xf)?;
        let yt = g.permute(y, &[1, 0, 2])?;
        Ok(g.reshape(yt, &[t_len * bins, self.cfg.fc1])?)
    }

    /// Map covariance features `[T, F, 4*C*M^2]` to `C` weight nodes,
    /// each `[T, F, M, 2]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cov_features: NodeId,
        speakers: usize,
    ) -> Result<Vec<NodeId>> {
        let shape = g.shape(cov_features).to_vec();
        let slot_w = Self::slot_width(self.mics);
        if shape.len() != 3 || shape[2] != speakers * slot_w {
            return Err(Error::shape(format!(
                "covariance features {:?} vs {} speakers x {} per slot",
                shape, speakers, slot_w
            )));
        }
        let (t_len, bins) = (shape[0], shape[1]);
        let rows = t_len * bins;
        let mut weights = Vec::with_capacity(speakers);
        for s in 0..speakers {
            let slot = g.slice_last(cov_features, s * slot_w, slot_w)?;
            let x0 = g.reshape(slot, &[rows, slot_w])?;
            let mut x = self.fc1.apply(g, store, x0)?;
            let a = g.param(store, &self.fc1_alpha)?;
            x = g.prelu(x, a)?;

            let order: [&str; 2] = if self.cfg.temporal_before_spatial {
                ["temporal", "spatial"]
            } else {
                ["spatial", "temporal"]
            };
            for stage in order {
                match stage {
                    "spatial" if self.spatial.is_some() => {
                        x = self.apply_spatial(g, store, x, rows)?;
                    }
                    "temporal" if self.temporal.is_some() => {
                        x = self.apply_temporal(g, store, x, t_len, bins)?;
                    }
                    _ => {}
                }
            }
            if let Some(gru) = &self.gru {
                let x3 = g.reshape(x, &[t_len, bins, self.cfg.fc1])?;
                let h = gru.apply(g, store, x3)?;
                x = g.reshape(h, &[rows, self.cfg.gru_hidden])?;
            }
            let out = self.head.apply(g, store, x)?;
            weights.push(g.reshape(out, &[t_len, bins, self.mics, 2])?);
        }
        Ok(weights)
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.fc1.param_count() + 1;
        if let Some(b) = &self.spatial {
            n += b.param_count();
        }
        if let Some(b) = &self.temporal {
            n += b.param_count();
        }
        if let Some(gru) = &self.gru {
            n += gru.param_count();
        }
        n + self.head.param_count()
    }
}

/// Full model: estimator + beamformer sharing one parameter store.
#[derive(Debug)]
pub struct MimoModel {
    pub store: ParamStore,
    pub estimator: CrfEstimator,
    pub beamformer: SaRnnBeamformer,
    pub stft: StftConfig,
    pub mics: usize,
    pub speakers: usize,
}

/// Handles into the training graph of one utterance.
pub struct ForwardNodes {
    pub crf_speech: Vec<NodeId>,
    pub crf_noise: Vec<NodeId>,
    pub weights: Vec<NodeId>,
    pub beamformed: NodeId,
    pub est_waves: Vec<NodeId>,
}

impl MimoModel {
    pub fn new(
        stft: StftConfig,
        mics: usize,
        speakers: usize,
        est_cfg: EstimatorConfig,
        bf_cfg: BeamformerNetConfig,
        seed: u64,
    ) -> Result<Self> {
        stft.validate()?;
        if mics < 2 {
            return Err(Error::config("model needs at least 2 microphones"));
        }
        if speakers == 0 || speakers > crate::sim::MAX_SPEAKERS {
            return Err(Error::config("speaker slots must be 1..=3"));
        }
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let ipd_planes = 2 * (mics - 1);
        let estimator = CrfEstimator::register(
            &mut store,
            &mut init,
            "est",
            est_cfg,
            stft.bins(),
            mics,
            ipd_planes,
        )?;
        let beamformer =
            SaRnnBeamformer::register(&mut store, &mut init, "bf", bf_cfg, mics)?;
        Ok(MimoModel {
            store,
            estimator,
            beamformer,
            stft,
            mics,
            speakers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Build the full differentiable pipeline for one utterance: features ->
    /// cRFs -> filtered snapshots -> covariances -> weights -> beamformed
    /// spectra -> time-domain estimates.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        spec: &MultiChannelSpectrogram,
        stack: &FeatureStack,
    ) -> Result<ForwardNodes> {
        if spec.channels() != self.mics {
            return Err(Error::shape(format!(
                "{} channels vs model {}",
                spec.channels(),
                self.mics
            )));
        }
        if stack.speakers() != self.speakers {
            return Err(Error::shape(format!(
                "{} DF planes vs model {} slots",
                stack.speakers(),
                self.speakers
            )));
        }
        let (t_len, bins) = (spec.frames(), spec.bins());
        let y: SpecRef = Arc::new(spec.data.clone());
        let slot_feats = build_slot_features(stack);
        let trace = std::env::var("BEAMSEP_TRACE_FORWARD").is_ok();
        let mut t0 = std::time::Instant::now();
        let mark = |label: &str, t0: &mut std::time::Instant| {
            if trace {
                eprintln!("  forward_graph {label}: {:.2}s", t0.elapsed().as_secs_f64());
                *t0 = std::time::Instant::now();
            }
        };

        let mut crf_speech = Vec::with_capacity(self.speakers);
        let mut crf_noise = Vec::with_capacity(self.speakers);
        let mut cov_blocks = Vec::with_capacity(2 * self.speakers);
        for feats in &slot_feats {
            let (rows, cols) = (feats.nrows(), feats.ncols());
            let node = g.constant(Tensor::from_vec(
                &[rows, cols],
                feats.iter().cloned().collect(),
            )?);
            let (taps_s, taps_n) = self.estimator.forward_slot(g, &self.store, node)?;
            mark("estimator_slot", &mut t0);
            crf_speech.push(taps_s);
            crf_noise.push(taps_n);

            let mut slot_cov = Vec::with_capacity(2);
            for taps in [taps_s, taps_n] {
                let op = CrfApplyOp {
                    y: Arc::clone(&y),
                    context: self.estimator.cfg.context,
                };
                let filtered = op.forward(g.value(taps))?;
                let s_hat = g.custom(Box::new(op), &[taps], filtered)?;
                let crm = self.center_mask_node(g, taps, t_len, bins)?;
                let cov_op = CovarianceOp {
                    floor: crate::beam::COV_DENOM_FLOOR,
                };
                let cov_val = cov_op.forward(g.value(s_hat), g.value(crm))?;
                let cov = g.custom(Box::new(cov_op), &[s_hat, crm], cov_val)?;
                slot_cov.push(g.reshape(cov, &[t_len, bins, 2 * self.mics * self.mics])?);
            }
            cov_blocks.extend(slot_cov);
            mark("crf_cov_slot", &mut t0);
        }

        let cov_features = g.concat_last(&cov_blocks)?;
        let weights = self
            .beamformer
            .forward(g, &self.store, cov_features, self.speakers)?;
        mark("sarnn", &mut t0);

        let op = BeamformOp { y: Arc::clone(&y) };
        let w_vals: Vec<&Tensor> = weights.iter().map(|id| g.value(*id)).collect();
        let beamformed_val = op.forward(&w_vals)?;
        let beamformed = g.custom(Box::new(op), &weights, beamformed_val)?;

        let out_len = if spec.num_samples > 0 {
            spec.num_samples
        } else {
            (t_len - 1) * self.stft.hop
        };
        let mut est_waves = Vec::with_capacity(self.speakers);
        let flat = g.reshape(beamformed, &[t_len * bins, self.speakers * 2])?;
        for s in 0..self.speakers {
            let slot = g.slice_last(flat, s * 2, 2)?;
            let slot3 = g.reshape(slot, &[t_len, bins, 2])?;
            let op = IstftOp {
                config: self.stft,
                frames: t_len,
                out_len,
            };
            let wave_val = op.forward(g.value(slot3))?;
            est_waves.push(g.custom(Box::new(op), &[slot3], wave_val)?);
        }
        mark("beamform_istft", &mut t0);

        Ok(ForwardNodes {
            crf_speech,
            crf_noise,
            weights,
            beamformed,
            est_waves,
        })
    }

    /// Slice the center tap (the cRM) out of a tap tensor and expand it to
    /// all channels when the filter is channel-shared.
    fn center_mask_node(
        &self,
        g: &mut Graph,
        taps: NodeId,
        t_len: usize,
        bins: usize,
    ) -> Result<NodeId> {
        let l = self.estimator.cfg.context;
        let k = 2 * l + 1;
        let m_taps = self.estimator.tap_channels();
        let center = l * k + l;
        let flat = g.reshape(taps, &[t_len, bins, m_taps, k * k * 2])?;
        let crm = g.slice_last(flat, center * 2, 2)?; // [T,F,M',2]
        if m_taps == self.mics {
            Ok(crm)
        } else {
            // Channel-shared mask: tile to all M channels.
            let c2 = g.reshape(crm, &[t_len, bins, 2])?;
            let copies = vec![c2; self.mics];
            let tiled = g.concat_last(&copies)?;
            Ok(g.reshape(tiled, &[t_len, bins, self.mics, 2])?)
        }
    }

    /// Extract a tap node's value as a complex ratio filter (inference path
    /// for the MVDR and masking baselines).
    pub fn tensor_to_crf(&self, g: &Graph, taps: NodeId) -> Result<ComplexRatioFilter> {
        let v = g.value(taps);
        let shape = v.shape().to_vec();
        let (t_len, bins, m_taps) = (shape[0], shape[1], shape[2]);
        let k = 2 * self.estimator.cfg.context + 1;
        let m = self.mics;
        let d = v.data();
        let mut out = Array5::<Complex64>::zeros((t_len, bins, m, k, k));
        for t in 0..t_len {
            for f in 0..bins {
                for ch in 0..m {
                    let chp = if m_taps == 1 { 0 } else { ch };
                    for a in 0..k {
                        for b in 0..k {
                            let base =
                                ((((t * bins + f) * m_taps + chp) * k * k) + a * k + b) * 2;
                            out[[t, f, ch, a, b]] = Complex64::new(d[base], d[base + 1]);
                        }
                    }
                }
            }
        }
        ComplexRatioFilter::new(out, self.estimator.cfg.context)
    }
}
