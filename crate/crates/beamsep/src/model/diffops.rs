//! Differentiable bridges between the real-valued graph and the complex
//! TF-domain math: filter application, covariance construction, beamformer
//! application, synthesis, and the Si-SNR objective.
//!
//! Complex quantities ride through the graph as (re, im) planes in the last
//! axis. Forward passes call the same deterministic math as the non-graph
//! path; each backward is hand-derived and covered by finite-difference
//! tests.

use std::sync::Arc;

use autodiff::{CustomOp, Result as AdResult, Tensor};
use ndarray::Array3;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::StftConfig;

pub type SpecRef = Arc<Array3<Complex64>>;

fn ad_shape_err(op: &'static str, detail: String) -> autodiff::Error {
    autodiff::Error::ShapeMismatch { op, detail }
}

/// Apply a per-slot complex ratio filter to the captured mixture
/// spectrogram.
///
/// Input: taps `[T, F, M', K*K, 2]` with `M'` either `M` (per-channel) or 1
/// (channel-shared). Output: `[T, F, M, 2]`. The tap used for offset
/// `(dt, df)` is read from the filter stored at `(t+dt, f+df)`, matching the
/// non-graph `beam::apply_crf`.
#[derive(Debug)]
pub struct CrfApplyOp {
    pub y: SpecRef,
    pub context: usize,
}

impl CrfApplyOp {
    pub fn forward(&self, taps: &Tensor) -> AdResult<Tensor> {
        let (t_len, bins, m) = dims3(&self.y);
        let k = 2 * self.context + 1;
        let shape = taps.shape();
        if shape.len() != 5 || shape[0] != t_len || shape[1] != bins || shape[3] != k * k
            || shape[4] != 2
        {
            return Err(ad_shape_err(
                "crf_apply",
                format!("taps {shape:?} vs spec [{t_len},{bins},{m}] k {k}"),
            ));
        }
        let m_taps = shape[2];
        if m_taps != m && m_taps != 1 {
            return Err(ad_shape_err(
                "crf_apply",
                format!("tap channels {m_taps} vs {m}"),
            ));
        }
        let td = taps.data();
        let l = self.context as isize;
        let mut out = vec![0.0; t_len * bins * m * 2];
        let tap_stride_f = m_taps * k * k * 2;
        let tap_stride_t = bins * tap_stride_f;
        for t in 0..t_len as isize {
            for f in 0..bins as isize {
                for ch in 0..m {
                    let chp = if m_taps == 1 { 0 } else { ch };
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for dt in -l..=l {
                        let tt = t + dt;
                        if tt < 0 || tt >= t_len as isize {
                            continue;
                        }
                        for df in -l..=l {
                            let ff = f + df;
                            if ff < 0 || ff >= bins as isize {
                                continue;
                            }
                            let tap_idx = ((dt + l) * (2 * l + 1) + (df + l)) as usize;
                            let base = tt as usize * tap_stride_t
                                + ff as usize * tap_stride_f
                                + chp * k * k * 2
                                + tap_idx * 2;
                            let (a, b) = (td[base], td[base + 1]);
                            let y = self.y[[tt as usize, ff as usize, ch]];
                            re += a * y.re - b * y.im;
                            im += a * y.im + b * y.re;
                        }
                    }
                    let o = ((t as usize * bins + f as usize) * m + ch) * 2;
                    out[o] = re;
                    out[o + 1] = im;
                }
            }
        }
        Tensor::from_vec(&[t_len, bins, m, 2], out)
    }
}

impl CustomOp for CrfApplyOp {
    fn name(&self) -> &'static str {
        "crf_apply"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> AdResult<Vec<Option<Tensor>>> {
        let taps = inputs[0];
        let (t_len, bins, m) = dims3(&self.y);
        let k = 2 * self.context + 1;
        let m_taps = taps.shape()[2];
        let l = self.context as isize;
        let g = grad_out.data();
        let mut gt = vec![0.0; taps.numel()];
        let tap_stride_f = m_taps * k * k * 2;
        let tap_stride_t = bins * tap_stride_f;
        for t in 0..t_len as isize {
            for f in 0..bins as isize {
                for ch in 0..m {
                    let chp = if m_taps == 1 { 0 } else { ch };
                    let o = ((t as usize * bins + f as usize) * m + ch) * 2;
                    let (gre, gim) = (g[o], g[o + 1]);
                    for dt in -l..=l {
                        let tt = t + dt;
                        if tt < 0 || tt >= t_len as isize {
                            continue;
                        }
                        for df in -l..=l {
                            let ff = f + df;
                            if ff < 0 || ff >= bins as isize {
                                continue;
                            }
                            let tap_idx = ((dt + l) * (2 * l + 1) + (df + l)) as usize;
                            let base = tt as usize * tap_stride_t
                                + ff as usize * tap_stride_f
                                + chp * k * k * 2
                                + tap_idx * 2;
                            let y = self.y[[tt as usize, ff as usize, ch]];
                            gt[base] += gre * y.re + gim * y.im;
                            gt[base + 1] += -gre * y.im + gim * y.re;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::from_vec(taps.shape(), gt)?)])
    }
}

/// Frame-wise covariance from the filtered snapshot and the center mask:
/// `Phi(t,f) = s s^H / D(f)`, `D(f) = max(sum_{t,m} |crm|^2, floor)`.
///
/// Inputs: `s_hat [T,F,M,2]`, `crm [T,F,M,2]`; output `[T,F,M,M,2]`.
#[derive(Debug)]
pub struct CovarianceOp {
    pub floor: f64,
}

impl CovarianceOp {
    fn denominators(&self, crm: &[f64], t_len: usize, bins: usize, m: usize) -> (Vec<f64>, Vec<bool>) {
        let mut denom = vec![0.0; bins];
        for t in 0..t_len {
            for f in 0..bins {
                for ch in 0..m {
                    let b = ((t * bins + f) * m + ch) * 2;
                    denom[f] += crm[b] * crm[b] + crm[b + 1] * crm[b + 1];
                }
            }
        }
        let floored: Vec<bool> = denom.iter().map(|&d| d < self.floor).collect();
        for d in &mut denom {
            *d = d.max(self.floor);
        }
        (denom, floored)
    }

    pub fn forward(&self, s_hat: &Tensor, crm: &Tensor) -> AdResult<Tensor> {
        let shape = s_hat.shape();
        if shape.len() != 4 || shape[3] != 2 || crm.shape() != shape {
            return Err(ad_shape_err(
                "covariance",
                format!("s_hat {:?} vs crm {:?}", shape, crm.shape()),
            ));
        }
        let (t_len, bins, m) = (shape[0], shape[1], shape[2]);
        let (denom, _) = self.denominators(crm.data(), t_len, bins, m);
        let s = s_hat.data();
        let mut out = vec![0.0; t_len * bins * m * m * 2];
        for t in 0..t_len {
            for f in 0..bins {
                let inv = 1.0 / denom[f];
                for i in 0..m {
                    let bi = ((t * bins + f) * m + i) * 2;
                    let (ai, biv) = (s[bi], s[bi + 1]);
                    for j in 0..m {
                        let bj = ((t * bins + f) * m + j) * 2;
                        let (aj, bjv) = (s[bj], s[bj + 1]);
                        let o = (((t * bins + f) * m + i) * m + j) * 2;
                        out[o] = (ai * aj + biv * bjv) * inv;
                        out[o + 1] = (biv * aj - ai * bjv) * inv;
                    }
                }
            }
        }
        Tensor::from_vec(&[t_len, bins, m, m, 2], out)
    }
}

impl CustomOp for CovarianceOp {
    fn name(&self) -> &'static str {
        "covariance"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> AdResult<Vec<Option<Tensor>>> {
        let (s_hat, crm) = (inputs[0], inputs[1]);
        let shape = s_hat.shape();
        let (t_len, bins, m) = (shape[0], shape[1], shape[2]);
        let (denom, floored) = self.denominators(crm.data(), t_len, bins, m);
        let s = s_hat.data();
        let g = grad_out.data();

        let mut gs = vec![0.0; s_hat.numel()];
        // d(loss)/d(D(f)) accumulated from every matrix entry at frequency f.
        let mut gd = vec![0.0; bins];
        for t in 0..t_len {
            for f in 0..bins {
                let inv = 1.0 / denom[f];
                for i in 0..m {
                    let bi = ((t * bins + f) * m + i) * 2;
                    let (ai, biv) = (s[bi], s[bi + 1]);
                    for j in 0..m {
                        let bj = ((t * bins + f) * m + j) * 2;
                        let (aj, bjv) = (s[bj], s[bj + 1]);
                        let o = (((t * bins + f) * m + i) * m + j) * 2;
                        let (gre, gim) = (g[o], g[o + 1]);
                        // out_re = (a_i a_j + b_i b_j)/D, out_im = (b_i a_j - a_i b_j)/D
                        gs[bi] += (gre * aj - gim * bjv) * inv;
                        gs[bi + 1] += (gre * bjv + gim * aj) * inv;
                        gs[bj] += (gre * ai + gim * biv) * inv;
                        gs[bj + 1] += (gre * biv - gim * ai) * inv;
                        let num_re = ai * aj + biv * bjv;
                        let num_im = biv * aj - ai * bjv;
                        gd[f] -= (gre * num_re + gim * num_im) * inv * inv;
                    }
                }
            }
        }
        // Denominator path into the center mask unless the floor is active.
        let c = crm.data();
        let mut gc = vec![0.0; crm.numel()];
        for f in 0..bins {
            if floored[f] {
                continue;
            }
            for t in 0..t_len {
                for ch in 0..m {
                    let b = ((t * bins + f) * m + ch) * 2;
                    gc[b] = gd[f] * 2.0 * c[b];
                    gc[b + 1] = gd[f] * 2.0 * c[b + 1];
                }
            }
        }
        Ok(vec![
            Some(Tensor::from_vec(s_hat.shape(), gs)?),
            Some(Tensor::from_vec(crm.shape(), gc)?),
        ])
    }
}

/// `out(t,f,c) = w_c(t,f)^H Y(t,f)` with the mixture captured as a constant.
///
/// Takes `C` weight inputs, each `[T,F,M,2]`; output `[T,F,C,2]`.
#[derive(Debug)]
pub struct BeamformOp {
    pub y: SpecRef,
}

impl BeamformOp {
    pub fn forward(&self, weights: &[&Tensor]) -> AdResult<Tensor> {
        let (t_len, bins, m) = dims3(&self.y);
        for w in weights {
            if w.shape() != [t_len, bins, m, 2] {
                return Err(ad_shape_err(
                    "beamform",
                    format!("weights {:?} vs [{t_len},{bins},{m},2]", w.shape()),
                ));
            }
        }
        let c = weights.len();
        let mut out = vec![0.0; t_len * bins * c * 2];
        for (s, w) in weights.iter().enumerate() {
            let wd = w.data();
            for t in 0..t_len {
                for f in 0..bins {
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for ch in 0..m {
                        let b = ((t * bins + f) * m + ch) * 2;
                        let (wre, wim) = (wd[b], wd[b + 1]);
                        let y = self.y[[t, f, ch]];
                        re += wre * y.re + wim * y.im;
                        im += wre * y.im - wim * y.re;
                    }
                    let o = ((t * bins + f) * c + s) * 2;
                    out[o] = re;
                    out[o + 1] = im;
                }
            }
        }
        Tensor::from_vec(&[t_len, bins, c, 2], out)
    }
}

impl CustomOp for BeamformOp {
    fn name(&self) -> &'static str {
        "beamform"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> AdResult<Vec<Option<Tensor>>> {
        let (t_len, bins, m) = dims3(&self.y);
        let c = inputs.len();
        let g = grad_out.data();
        let mut grads = Vec::with_capacity(c);
        for s in 0..c {
            let mut gw = vec![0.0; t_len * bins * m * 2];
            for t in 0..t_len {
                for f in 0..bins {
                    let o = ((t * bins + f) * c + s) * 2;
                    let (gre, gim) = (g[o], g[o + 1]);
                    for ch in 0..m {
                        let y = self.y[[t, f, ch]];
                        let b = ((t * bins + f) * m + ch) * 2;
                        gw[b] = gre * y.re + gim * y.im;
                        gw[b + 1] = gre * y.im - gim * y.re;
                    }
                }
            }
            grads.push(Some(Tensor::from_vec(&[t_len, bins, m, 2], gw)?));
        }
        Ok(grads)
    }
}

/// Differentiable inverse STFT of a single-channel spectrogram carried as
/// `[T, F, 2]`. Imaginary parts of the DC and Nyquist bins are ignored by
/// the synthesis, so their gradients are zero.
#[derive(Debug)]
pub struct IstftOp {
    pub config: StftConfig,
    pub frames: usize,
    pub out_len: usize,
}

impl IstftOp {
    fn padded_len(&self) -> usize {
        (self.frames - 1) * self.config.hop + self.config.fft_size
    }

    fn wsum(&self, window: &[f64]) -> Vec<f64> {
        let mut wsum = vec![0.0; self.padded_len()];
        for t in 0..self.frames {
            for i in 0..self.config.fft_size {
                wsum[t * self.config.hop + i] += window[i] * window[i];
            }
        }
        wsum
    }

    fn pad(&self) -> usize {
        if self.config.center {
            self.config.fft_size / 2
        } else {
            0
        }
    }

    pub fn forward(&self, spec: &Tensor) -> AdResult<Tensor> {
        let bins = self.config.bins();
        if spec.shape() != [self.frames, bins, 2] {
            return Err(ad_shape_err(
                "istft",
                format!("spec {:?} vs [{},{bins},2]", spec.shape(), self.frames),
            ));
        }
        let n_fft = self.config.fft_size;
        let window = self.config.window.coefficients(n_fft);
        let wsum = self.wsum(&window);
        let pad = self.pad();
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n_fft);
        let sd = spec.data();
        let mut acc = vec![0.0; self.padded_len()];
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n_fft];
        let scale = 1.0 / n_fft as f64;
        for t in 0..self.frames {
            for f in 0..bins {
                let b = (t * bins + f) * 2;
                let mut v = Complex64::new(sd[b], sd[b + 1]);
                if f == 0 || f == bins - 1 {
                    v.im = 0.0;
                }
                spectrum[f] = v;
            }
            for f in bins..n_fft {
                spectrum[f] = spectrum[n_fft - f].conj();
            }
            ifft.process(&mut spectrum);
            for i in 0..n_fft {
                acc[t * self.config.hop + i] += spectrum[i].re * scale * window[i];
            }
        }
        let mut out = vec![0.0; self.out_len];
        for (i, o) in out.iter_mut().enumerate() {
            let j = i + pad;
            if j < acc.len() && wsum[j] > 1e-12 {
                *o = acc[j] / wsum[j];
            }
        }
        Tensor::from_vec(&[self.out_len], out)
    }
}

impl CustomOp for IstftOp {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> AdResult<Vec<Option<Tensor>>> {
        let n_fft = self.config.fft_size;
        let bins = self.config.bins();
        let window = self.config.window.coefficients(n_fft);
        let wsum = self.wsum(&window);
        let pad = self.pad();
        let g = grad_out.data();

        // Adjoint of trim + normalize.
        let mut gpad = vec![0.0; self.padded_len()];
        for (i, &gv) in g.iter().enumerate() {
            let j = i + pad;
            if j < gpad.len() && wsum[j] > 1e-12 {
                gpad[j] = gv / wsum[j];
            }
        }

        // Adjoint of the per-frame windowed inverse DFT, batched through a
        // forward FFT per frame.
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n_fft);
        let mut gspec = vec![0.0; self.frames * bins * 2];
        let mut frame = vec![Complex64::new(0.0, 0.0); n_fft];
        let scale = 1.0 / n_fft as f64;
        for t in 0..self.frames {
            for i in 0..n_fft {
                frame[i] = Complex64::new(gpad[t * self.config.hop + i] * window[i], 0.0);
            }
            fft.process(&mut frame);
            for f in 0..bins {
                let b = (t * bins + f) * 2;
                let weight = if f == 0 || f == bins - 1 { 1.0 } else { 2.0 };
                gspec[b] = weight * scale * frame[f].re;
                gspec[b + 1] = if f == 0 || f == bins - 1 {
                    0.0
                } else {
                    weight * scale * frame[f].im
                };
            }
        }
        Ok(vec![Some(Tensor::from_vec(
            &[self.frames, bins, 2],
            gspec,
        )?)])
    }
}

/// Scale-invariant SNR in dB against a captured reference, unclamped, both
/// signals mean-centered. Used directly as the (negated) training objective.
#[derive(Debug)]
pub struct SiSnrOp {
    reference: Vec<f64>,
    ref_energy: f64,
    pub eps: f64,
}

/// Guard that keeps the value finite when the projection collapses; only
/// active below 1e-30 of projected energy.
const NUM_FLOOR: f64 = 1e-30;

impl SiSnrOp {
    pub fn new(reference: &[f64], eps: f64) -> crate::error::Result<Self> {
        let mean = reference.iter().sum::<f64>() / reference.len().max(1) as f64;
        let centered: Vec<f64> = reference.iter().map(|v| v - mean).collect();
        let energy: f64 = centered.iter().map(|v| v * v).sum();
        if energy <= 0.0 {
            return Err(crate::error::Error::input(
                "si-snr reference must not be all-zero",
            ));
        }
        Ok(SiSnrOp {
            reference: centered,
            ref_energy: energy,
            eps,
        })
    }

    fn project(&self, est: &[f64]) -> (Vec<f64>, f64, f64, f64) {
        let n = est.len();
        let mean = est.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = est.iter().map(|v| v - mean).collect();
        let dot: f64 = centered
            .iter()
            .zip(&self.reference)
            .map(|(a, b)| a * b)
            .sum();
        let alpha = dot / self.ref_energy;
        let num = alpha * alpha * self.ref_energy;
        let den: f64 = centered
            .iter()
            .zip(&self.reference)
            .map(|(e, r)| {
                let err = e - alpha * r;
                err * err
            })
            .sum();
        (centered, alpha, num, den)
    }

    pub fn forward(&self, est: &Tensor) -> AdResult<Tensor> {
        if est.shape() != [self.reference.len()] {
            return Err(ad_shape_err(
                "si_snr",
                format!("est {:?} vs ref len {}", est.shape(), self.reference.len()),
            ));
        }
        let (_, _, num, den) = self.project(est.data());
        let value = 10.0 * ((num + NUM_FLOOR) / (den + self.eps)).log10();
        Ok(Tensor::scalar(value))
    }
}

impl CustomOp for SiSnrOp {
    fn name(&self) -> &'static str {
        "si_snr"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> AdResult<Vec<Option<Tensor>>> {
        let est = inputs[0].data();
        let n = est.len();
        let (centered, alpha, num, den) = self.project(est);
        let k = 10.0 / std::f64::consts::LN_10 * grad_out.data()[0];
        let inv_num = 1.0 / (num + NUM_FLOOR);
        let inv_den = 1.0 / (den + self.eps);
        // d num / d e = 2 alpha r ; d den / d e = 2 (e - alpha r)
        let mut grad: Vec<f64> = (0..n)
            .map(|i| {
                let err = centered[i] - alpha * self.reference[i];
                k * (2.0 * alpha * self.reference[i] * inv_num - 2.0 * err * inv_den)
            })
            .collect();
        // Chain through the mean-centering of the estimate.
        let gmean = grad.iter().sum::<f64>() / n as f64;
        for v in &mut grad {
            *v -= gmean;
        }
        Ok(vec![Some(Tensor::from_vec(&[n], grad)?)])
    }
}

fn dims3(a: &Array3<Complex64>) -> (usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2])
}
