//! Complex ratio filters, covariance statistics, the conventional MVDR
//! baseline, and beamformer application.
//!
//! ```
//! use beamsep::beam::{apply_crf, ComplexRatioFilter};
//! use beamsep::dsp::{stft, StftConfig, Waveform};
//!
//! // The identity filter (unit center tap) passes the spectrogram through.
//! let wave = Waveform::from_mono((0..4000).map(|i| (i as f64 * 0.03).sin()).collect(), 16_000)?;
//! let spec = stft(&wave, &StftConfig::default())?;
//! let crf = ComplexRatioFilter::identity(spec.frames(), spec.bins(), 1, 1);
//! let filtered = apply_crf(&spec, &crf)?;
//! assert!(filtered.iter().zip(spec.data.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
//! # Ok::<(), beamsep::Error>(())
//! ```

use ndarray::{Array2, Array3, Array4, Array5};
use num_complex::Complex64;

use crate::dsp::MultiChannelSpectrogram;
use crate::error::{Error, Result};

/// Floor for the covariance normalization denominator.
pub const COV_DENOM_FLOOR: f64 = 1e-10;

/// Default diagonal-loading factor for MVDR inversion.
pub const DIAG_LOAD_DEFAULT: f64 = 1e-5;

/// Per-source complex filter taps over a (2L+1) x (2L+1) TF neighborhood,
/// `taps[t, f, m, tau_t, tau_f]`. The center slice `(L, L)` is the cRM.
#[derive(Debug, Clone)]
pub struct ComplexRatioFilter {
    pub taps: Array5<Complex64>,
    pub context: usize,
}

impl ComplexRatioFilter {
    pub fn new(taps: Array5<Complex64>, context: usize) -> Result<Self> {
        let k = 2 * context + 1;
        if taps.shape()[3] != k || taps.shape()[4] != k {
            return Err(Error::shape(format!(
                "tap window {:?} does not match context {}",
                &taps.shape()[3..],
                context
            )));
        }
        Ok(ComplexRatioFilter { taps, context })
    }

    /// Identity filter: center tap one, everything else zero.
    pub fn identity(t_len: usize, bins: usize, channels: usize, context: usize) -> Self {
        let k = 2 * context + 1;
        let mut taps = Array5::<Complex64>::zeros((t_len, bins, channels, k, k));
        for t in 0..t_len {
            for f in 0..bins {
                for m in 0..channels {
                    taps[[t, f, m, context, context]] = Complex64::new(1.0, 0.0);
                }
            }
        }
        ComplexRatioFilter { taps, context }
    }

    /// The center mask `cRM(t, f, m)`.
    pub fn center_mask(&self) -> Array3<Complex64> {
        let (t_len, bins, channels) = (
            self.taps.shape()[0],
            self.taps.shape()[1],
            self.taps.shape()[2],
        );
        let mut out = Array3::<Complex64>::zeros((t_len, bins, channels));
        for t in 0..t_len {
            for f in 0..bins {
                for m in 0..channels {
                    out[[t, f, m]] = self.taps[[t, f, m, self.context, self.context]];
                }
            }
        }
        out
    }
}

/// Per-(t,f) Hermitian M x M matrices, `matrices[t, f, i, j]`.
#[derive(Debug, Clone)]
pub struct CovarianceSequence {
    pub matrices: Array4<Complex64>,
}

impl CovarianceSequence {
    pub fn frames(&self) -> usize {
        self.matrices.shape()[0]
    }
    pub fn bins(&self) -> usize {
        self.matrices.shape()[1]
    }
    pub fn channels(&self) -> usize {
        self.matrices.shape()[2]
    }

    /// Sum over frames: `[F, M, M]` utterance-pooled statistics.
    pub fn pooled(&self) -> Array3<Complex64> {
        let (t_len, bins, m) = (self.frames(), self.bins(), self.channels());
        let mut out = Array3::<Complex64>::zeros((bins, m, m));
        for t in 0..t_len {
            for f in 0..bins {
                for i in 0..m {
                    for j in 0..m {
                        out[[f, i, j]] += self.matrices[[t, f, i, j]];
                    }
                }
            }
        }
        out
    }
}

/// Per-(t,f), per-speaker complex combination weights, `w[t, f, m, c]`.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    pub w: Array4<Complex64>,
}

impl BeamformerWeights {
    pub fn speakers(&self) -> usize {
        self.w.shape()[3]
    }
}

/// Filter-and-sum over the TF neighborhood:
/// `S(t,f,m) = sum_{tau_t, tau_f} taps(t+tau_t, f+tau_f, m)[tau] * Y(t+tau_t, f+tau_f, m)`
/// with zero padding at the borders. The tap used for an offset is read from
/// the filter stored at that offset position.
pub fn apply_crf(
    y: &MultiChannelSpectrogram,
    crf: &ComplexRatioFilter,
) -> Result<Array3<Complex64>> {
    let (t_len, bins, channels) = (y.frames(), y.bins(), y.channels());
    if crf.taps.shape()[0] != t_len
        || crf.taps.shape()[1] != bins
        || crf.taps.shape()[2] != channels
    {
        return Err(Error::shape(format!(
            "filter {:?} vs spectrogram [{t_len}, {bins}, {channels}]",
            crf.taps.shape()
        )));
    }
    let l = crf.context as isize;
    let mut out = Array3::<Complex64>::zeros((t_len, bins, channels));
    for t in 0..t_len {
        for f in 0..bins {
            for m in 0..channels {
                let mut acc = Complex64::new(0.0, 0.0);
                for dt in -l..=l {
                    let tt = t as isize + dt;
                    if tt < 0 || tt >= t_len as isize {
                        continue;
                    }
                    for df in -l..=l {
                        let ff = f as isize + df;
                        if ff < 0 || ff >= bins as isize {
                            continue;
                        }
                        let tap = crf.taps[[
                            tt as usize,
                            ff as usize,
                            m,
                            (dt + l) as usize,
                            (df + l) as usize,
                        ]];
                        acc += tap * y.data[[tt as usize, ff as usize, m]];
                    }
                }
                out[[t, f, m]] = acc;
            }
        }
    }
    Ok(out)
}

/// Frame-wise covariance: outer product of the filtered snapshot normalized
/// by the per-frequency center-mask energy
/// `D(f) = max(sum_{t,m} |cRM(t,f,m)|^2, 1e-10)`.
pub fn covariance(
    s_hat: &Array3<Complex64>,
    crm_center: &Array3<Complex64>,
) -> Result<CovarianceSequence> {
    if s_hat.shape() != crm_center.shape() {
        return Err(Error::shape(format!(
            "s_hat {:?} vs center mask {:?}",
            s_hat.shape(),
            crm_center.shape()
        )));
    }
    let (t_len, bins, m) = (s_hat.shape()[0], s_hat.shape()[1], s_hat.shape()[2]);
    if t_len == 0 {
        return Err(Error::input("covariance needs at least one frame"));
    }
    let mut denom = vec![0.0f64; bins];
    for t in 0..t_len {
        for f in 0..bins {
            for ch in 0..m {
                denom[f] += crm_center[[t, f, ch]].norm_sqr();
            }
        }
    }
    for d in &mut denom {
        *d = d.max(COV_DENOM_FLOOR);
    }
    let mut out = Array4::<Complex64>::zeros((t_len, bins, m, m));
    for t in 0..t_len {
        for f in 0..bins {
            let inv = 1.0 / denom[f];
            for i in 0..m {
                for j in 0..m {
                    out[[t, f, i, j]] = s_hat[[t, f, i]] * s_hat[[t, f, j]].conj() * inv;
                }
            }
        }
    }
    Ok(CovarianceSequence { matrices: out })
}

/// Concatenate per-speaker speech/noise covariances into the real feature
/// tensor `[T, F, 4 C M^2]`: blocks `[S_1, N_1, ..., S_C, N_C]`, each matrix
/// flattened row-major with every complex entry expanded to (re, im).
pub fn concat_cov(
    speech: &[CovarianceSequence],
    noise: &[CovarianceSequence],
) -> Result<Array3<f64>> {
    if speech.len() != noise.len() || speech.is_empty() {
        return Err(Error::shape(format!(
            "{} speech vs {} noise covariance sequences",
            speech.len(),
            noise.len()
        )));
    }
    let (t_len, bins, m) = (speech[0].frames(), speech[0].bins(), speech[0].channels());
    for cs in speech.iter().chain(noise.iter()) {
        if cs.frames() != t_len || cs.bins() != bins || cs.channels() != m {
            return Err(Error::shape("covariance sequences disagree on shape"));
        }
    }
    let c = speech.len();
    let width = 4 * c * m * m;
    let mut out = Array3::<f64>::zeros((t_len, bins, width));
    for t in 0..t_len {
        for f in 0..bins {
            let mut col = 0;
            for s in 0..c {
                for cs in [&speech[s], &noise[s]] {
                    for i in 0..m {
                        for j in 0..m {
                            let v = cs.matrices[[t, f, i, j]];
                            out[[t, f, col]] = v.re;
                            out[[t, f, col + 1]] = v.im;
                            col += 2;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Solve `A x = b` for a small complex system by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n` and is consumed.
fn solve_complex(mut a: Vec<Complex64>, mut b: Vec<Complex64>, n: usize) -> Result<Vec<Complex64>> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].norm_sqr();
        for r in col + 1..n {
            let mag = a[r * n + col].norm_sqr();
            if mag > best {
                best = mag;
                pivot = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::numeric("singular matrix in MVDR solve"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = Complex64::new(1.0, 0.0) / a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] * inv;
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= factor * v;
            }
            let bv = b[col];
            b[r] -= factor * bv;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

/// MVDR weights for one speaker from utterance-pooled covariances:
/// `w(f) = (Phi_N + dI)^{-1} Phi_S u / trace((Phi_N + dI)^{-1} Phi_S)`
/// with `d = diag_load * trace(Phi_N) / M` and `u` the reference one-hot.
/// Weights are broadcast over frames. Bins where the trace term collapses
/// fall back to the reference-channel selector and are flagged.
pub struct MvdrResult {
    pub weights: BeamformerWeights,
    pub degenerate_bins: Vec<bool>,
}

pub fn mvdr_weights(
    phi_s: &CovarianceSequence,
    phi_n: &CovarianceSequence,
    ref_channel: usize,
    diag_load_factor: f64,
) -> Result<MvdrResult> {
    let (t_len, bins, m) = (phi_s.frames(), phi_s.bins(), phi_s.channels());
    if phi_n.frames() != t_len || phi_n.bins() != bins || phi_n.channels() != m {
        return Err(Error::shape("speech/noise covariance shapes differ"));
    }
    if ref_channel >= m {
        return Err(Error::input(format!(
            "reference channel {ref_channel} out of range 0..{m}"
        )));
    }
    let ps = phi_s.pooled();
    let pn = phi_n.pooled();

    let mut w_per_bin = Array2::<Complex64>::zeros((bins, m));
    let mut degenerate = vec![false; bins];
    for f in 0..bins {
        let mut trace_n = 0.0;
        for i in 0..m {
            trace_n += pn[[f, i, i]].re;
        }
        let delta = diag_load_factor * trace_n / m as f64;
        // Columns of (Phi_N + dI)^{-1} Phi_S, solved column-wise.
        let mut a = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] = pn[[f, i, j]];
            }
            a[i * m + i] += Complex64::new(delta, 0.0);
        }
        let mut num = vec![Complex64::new(0.0, 0.0); m]; // (.)^{-1} Phi_S u
        let mut trace = Complex64::new(0.0, 0.0);
        let mut ok = true;
        for j in 0..m {
            let col: Vec<Complex64> = (0..m).map(|i| ps[[f, i, j]]).collect();
            match solve_complex(a.clone(), col, m) {
                Ok(x) => {
                    trace += x[j];
                    if j == ref_channel {
                        num.copy_from_slice(&x);
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || trace.norm() < 1e-12 {
            degenerate[f] = true;
            w_per_bin[[f, ref_channel]] = Complex64::new(1.0, 0.0);
            continue;
        }
        for i in 0..m {
            w_per_bin[[f, i]] = num[i] / trace;
        }
    }

    let mut w = Array4::<Complex64>::zeros((t_len, bins, m, 1));
    for t in 0..t_len {
        for f in 0..bins {
            for i in 0..m {
                w[[t, f, i, 0]] = w_per_bin[[f, i]];
            }
        }
    }
    Ok(MvdrResult {
        weights: BeamformerWeights { w },
        degenerate_bins: degenerate,
    })
}

/// `out(t,f,c) = w(t,f,.,c)^H Y(t,f,.)` — conjugation on the weights.
pub fn apply_beamformer(
    weights: &BeamformerWeights,
    y: &MultiChannelSpectrogram,
) -> Result<Array3<Complex64>> {
    let (t_len, bins, m) = (y.frames(), y.bins(), y.channels());
    let ws = weights.w.shape();
    if ws[0] != t_len || ws[1] != bins || ws[2] != m {
        return Err(Error::shape(format!(
            "weights {ws:?} vs spectrogram [{t_len}, {bins}, {m}]"
        )));
    }
    let c = ws[3];
    let mut out = Array3::<Complex64>::zeros((t_len, bins, c));
    for t in 0..t_len {
        for f in 0..bins {
            for s in 0..c {
                let mut acc = Complex64::new(0.0, 0.0);
                for ch in 0..m {
                    acc += weights.w[[t, f, ch, s]].conj() * y.data[[t, f, ch]];
                }
                out[[t, f, s]] = acc;
            }
        }
    }
    Ok(out)
}

/// Eigenvalues of a Hermitian matrix via cyclic complex Jacobi rotations.
/// Returns them in ascending order.
pub fn hermitian_eigenvalues(a: &Array2<Complex64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape("eigenvalues need a square matrix"));
    }
    let mut m: Vec<Complex64> = a.iter().cloned().collect();
    let scale: f64 = m
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[p * n + q].norm());
            }
        }
        if off < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.norm() < 1e-16 * scale {
                    continue;
                }
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                let phase = apq / apq.norm();
                let theta = 0.5 * (2.0 * apq.norm()).atan2(app - aqq);
                let (c, s_mag) = (theta.cos(), theta.sin());
                let s = phase.conj() * s_mag;
                // Unitary rotation in the (p, q) plane:
                //   new_p = c * row_p + conj(s) * row_q
                //   new_q = -s * row_p + c * row_q
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk + s.conj() * mqk;
                    m[q * n + k] = -s * mpk + c * mqk;
                }
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp + s * mkq;
                    m[k * n + q] = -s.conj() * mkp + c * mkq;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i].re).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

/// Hermitian within `tol` (entrywise against the conjugate transpose).
pub fn is_hermitian(a: &Array2<Complex64>, tol: f64) -> bool {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            if (a[[i, j]] - a[[j, i]].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, t: usize, f: usize, m: usize) -> MultiChannelSpectrogram {
        let mut data = Array3::<Complex64>::zeros((t, f, m));
        for v in data.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        MultiChannelSpectrogram {
            data,
            config: StftConfig::default(),
            num_samples: 0,
        }
    }

    fn random_crf(rng: &mut ChaCha8Rng, t: usize, f: usize, m: usize, l: usize) -> ComplexRatioFilter {
        let k = 2 * l + 1;
        let mut taps = Array5::<Complex64>::zeros((t, f, m, k, k));
        for v in taps.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        ComplexRatioFilter { taps, context: l }
    }

    /// Literal double loop over the declared formula, kept dumb on purpose.
    fn apply_crf_bruteforce(
        y: &MultiChannelSpectrogram,
        crf: &ComplexRatioFilter,
    ) -> Array3<Complex64> {
        let (t_len, bins, channels) = (y.frames(), y.bins(), y.channels());
        let l = crf.context as isize;
        let mut out = Array3::<Complex64>::zeros((t_len, bins, channels));
        for t in 0..t_len as isize {
            for f in 0..bins as isize {
                for m in 0..channels {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for dt in -l..=l {
                        for df in -l..=l {
                            let (tt, ff) = (t + dt, f + df);
                            if tt >= 0 && tt < t_len as isize && ff >= 0 && ff < bins as isize {
                                acc += crf.taps
                                    [[tt as usize, ff as usize, m, (dt + l) as usize, (df + l) as usize]]
                                    * y.data[[tt as usize, ff as usize, m]];
                            }
                        }
                    }
                    out[[t as usize, f as usize, m]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_filters_pass_spectrogram_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_spec(&mut rng, 4, 5, 3);
        for l in [0usize, 1] {
            let crf = ComplexRatioFilter::identity(4, 5, 3, l);
            let s = apply_crf(&y, &crf).unwrap();
            for (a, b) in s.iter().zip(y.data.iter()) {
                assert!((a - b).norm() < 1e-15, "context {l}");
            }
        }
    }

    #[test]
    fn apply_crf_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (t, f, m) = (
                rng.random_range(1..5),
                rng.random_range(1..5),
                rng.random_range(1..4),
            );
            let y = random_spec(&mut rng, t, f, m);
            let crf = random_crf(&mut rng, t, f, m, 1);
            let fast = apply_crf(&y, &crf).unwrap();
            let slow = apply_crf_bruteforce(&y, &crf);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_crf_is_linear_in_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y1 = random_spec(&mut rng, 4, 6, 2);
        let y2 = random_spec(&mut rng, 4, 6, 2);
        let crf = random_crf(&mut rng, 4, 6, 2, 1);
        let (a, b) = (Complex64::new(1.3, -0.2), Complex64::new(-0.4, 0.9));
        let mut mixed = y1.clone();
        for (v, (x, y)) in mixed.data.iter_mut().zip(y1.data.iter().zip(y2.data.iter())) {
            *v = a * x + b * y;
        }
        let s_mixed = apply_crf(&mixed, &crf).unwrap();
        let s1 = apply_crf(&y1, &crf).unwrap();
        let s2 = apply_crf(&y2, &crf).unwrap();
        for i in 0..s_mixed.len() {
            let expect = a * s1.as_slice().unwrap()[i] + b * s2.as_slice().unwrap()[i];
            assert!((s_mixed.as_slice().unwrap()[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn covariance_of_unit_vector_is_rank_one_projector() {
        let mut s = Array3::<Complex64>::zeros((1, 1, 3));
        s[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        // Center mask with unit energy so the denominator is exactly 1.
        let mut crm = Array3::<Complex64>::zeros((1, 1, 3));
        crm[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        let cov = covariance(&s, &crm).unwrap();
        let mut trace = Complex64::new(0.0, 0.0);
        for i in 0..3 {
            trace += cov.matrices[[0, 0, i, i]];
            for j in 0..3 {
                let expect = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert!((cov.matrices[[0, 0, i, j]] - expect).norm() < 1e-15);
            }
        }
        assert!((trace.re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (t_len, bins, m) = (5, 3, 3);
            let s = random_spec(&mut rng, t_len, bins, m).data;
            let crm = random_spec(&mut rng, t_len, bins, m).data;
            let cov = covariance(&s, &crm).unwrap();
            for f in 0..bins {
                let mut denom = 0.0;
                for t in 0..t_len {
                    for ch in 0..m {
                        denom += crm[[t, f, ch]].norm_sqr();
                    }
                }
                let denom = denom.max(COV_DENOM_FLOOR);
                for t in 0..t_len {
                    for i in 0..m {
                        for j in 0..m {
                            let expect = s[[t, f, i]] * s[[t, f, j]].conj() / denom;
                            assert!((cov.matrices[[t, f, i, j]] - expect).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn covariance_is_hermitian_psd_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spec(&mut rng, 6, 4, 4).data;
        let crm = random_spec(&mut rng, 6, 4, 4).data;
        let cov = covariance(&s, &crm).unwrap();
        for t in 0..6 {
            for f in 0..4 {
                let mat = cov
                    .matrices
                    .index_axis(ndarray::Axis(0), t)
                    .index_axis(ndarray::Axis(0), f)
                    .to_owned();
                assert!(is_hermitian(&mat, 1e-10));
                let eig = hermitian_eigenvalues(&mat).unwrap();
                let trace: f64 = eig.iter().sum();
                assert!(eig[0] >= -1e-8 * trace.abs().max(1e-30));
                // Rank one: all but the top eigenvalue vanish.
                for &e in &eig[..eig.len() - 1] {
                    assert!(e.abs() < 1e-8 * trace.abs().max(1e-30) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_cov_widths_and_zero_case() {
        let zero = |t: usize, f: usize, m: usize| CovarianceSequence {
            matrices: Array4::zeros((t, f, m, m)),
        };
        // C=1, M=2 -> width 16.
        let out = concat_cov(&[zero(2, 3, 2)], &[zero(2, 3, 2)]).unwrap();
        assert_eq!(out.shape(), &[2, 3, 16]);
        assert!(out.iter().all(|&v| v == 0.0));
        // C=3, M=15 -> width 2700, the paper-scale input width.
        let out = concat_cov(
            &[zero(1, 1, 15), zero(1, 1, 15), zero(1, 1, 15)],
            &[zero(1, 1, 15), zero(1, 1, 15), zero(1, 1, 15)],
        )
        .unwrap();
        assert_eq!(out.shape()[2], 2700);
    }

    #[test]
    fn concat_cov_layout_matches_block_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 2;
        let mk = |rng: &mut ChaCha8Rng| {
            let mut mats = Array4::<Complex64>::zeros((1, 1, m, m));
            for v in mats.iter_mut() {
                *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            CovarianceSequence { matrices: mats }
        };
        let (s1, n1, s2, n2) = (mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let out = concat_cov(
            &[s1.clone(), s2.clone()],
            &[n1.clone(), n2.clone()],
        )
        .unwrap();
        assert_eq!(out.shape()[2], 4 * 2 * m * m);
        let blocks = [&s1, &n1, &s2, &n2];
        let mut col = 0;
        for b in blocks {
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(out[[0, 0, col]], b.matrices[[0, 0, i, j]].re);
                    assert_eq!(out[[0, 0, col + 1]], b.matrices[[0, 0, i, j]].im);
                    col += 2;
                }
            }
        }
    }

    #[test]
    fn mvdr_identity_covariances_select_reference_channel() {
        // With identity covariances the trace normalization yields exactly
        // u / M: a pure (scaled) reference-channel selector. Si-SNR is
        // scale-invariant, so the 1/M factor is immaterial downstream.
        let (t_len, bins, m) = (3, 4, 3);
        let mut mats = Array4::<Complex64>::zeros((t_len, bins, m, m));
        for t in 0..t_len {
            for f in 0..bins {
                for i in 0..m {
                    mats[[t, f, i, i]] = Complex64::new(1.0 / t_len as f64, 0.0);
                }
            }
        }
        let cov = CovarianceSequence { matrices: mats };
        let res = mvdr_weights(&cov, &cov, 1, 0.0).unwrap();
        for t in 0..t_len {
            for f in 0..bins {
                for i in 0..m {
                    let expect = if i == 1 { 1.0 / m as f64 } else { 0.0 };
                    assert!((res.weights.w[[t, f, i, 0]] - expect).norm() < 1e-12);
                }
            }
        }
        assert!(res.degenerate_bins.iter().all(|&d| !d));

        // Applying those weights reproduces the reference channel up to the
        // exact 1/M scaling.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y = random_spec(&mut rng, t_len, bins, m);
        let out = apply_beamformer(&res.weights, &y).unwrap();
        for t in 0..t_len {
            for f in 0..bins {
                let expect = y.data[[t, f, 1]] / m as f64;
                assert!((out[[t, f, 0]] - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn mvdr_rank_one_speech_in_white_noise_is_distortionless() {
        // Phi_S = v v^H with a unit-modulus steering vector, Phi_N = I:
        // w = v * conj(v_ref) / M and w^H v = v_ref.
        let m = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<Complex64> = (0..m)
            .map(|_| {
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::new(th.cos(), th.sin())
            })
            .collect();
        let mut phi_s = Array4::<Complex64>::zeros((1, 1, m, m));
        let mut phi_n = Array4::<Complex64>::zeros((1, 1, m, m));
        for i in 0..m {
            phi_n[[0, 0, i, i]] = Complex64::new(1.0, 0.0);
            for j in 0..m {
                phi_s[[0, 0, i, j]] = v[i] * v[j].conj();
            }
        }
        let res = mvdr_weights(
            &CovarianceSequence { matrices: phi_s },
            &CovarianceSequence { matrices: phi_n },
            0,
            0.0,
        )
        .unwrap();
        let mut why = Complex64::new(0.0, 0.0);
        for i in 0..m {
            let expect = v[i] * v[0].conj() / m as f64;
            assert!((res.weights.w[[0, 0, i, 0]] - expect).norm() < 1e-10);
            why += res.weights.w[[0, 0, i, 0]].conj() * v[i];
        }
        // Distortionless towards the steering vector.
        assert!((why / v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn mvdr_is_invariant_to_covariance_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 3;
        let rand_psd = |rng: &mut ChaCha8Rng| {
            // A A^H + small ridge, pooled over 2 frames.
            let mut mats = Array4::<Complex64>::zeros((2, 2, m, m));
            for t in 0..2 {
                for f in 0..2 {
                    let a: Vec<Complex64> = (0..m * m)
                        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect();
                    for i in 0..m {
                        for j in 0..m {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for k in 0..m {
                                acc += a[i * m + k] * a[j * m + k].conj();
                            }
                            mats[[t, f, i, j]] = acc;
                            if i == j {
                                mats[[t, f, i, j]] += Complex64::new(0.1, 0.0);
                            }
                        }
                    }
                }
            }
            CovarianceSequence { matrices: mats }
        };
        let phi_s = rand_psd(&mut rng);
        let phi_n = rand_psd(&mut rng);
        let base = mvdr_weights(&phi_s, &phi_n, 0, DIAG_LOAD_DEFAULT).unwrap();
        let scale = |cs: &CovarianceSequence, g: f64| CovarianceSequence {
            matrices: cs.matrices.mapv(|v| v * g),
        };
        let scaled = mvdr_weights(&scale(&phi_s, 37.5), &scale(&phi_n, 37.5), 0, DIAG_LOAD_DEFAULT)
            .unwrap();
        for (a, b) in base.weights.w.iter().zip(scaled.weights.w.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn degenerate_trace_falls_back_to_reference_selector() {
        let m = 3;
        let mut phi_n = Array4::<Complex64>::zeros((1, 1, m, m));
        for i in 0..m {
            phi_n[[0, 0, i, i]] = Complex64::new(1.0, 0.0);
        }
        let phi_s = Array4::<Complex64>::zeros((1, 1, m, m));
        let res = mvdr_weights(
            &CovarianceSequence { matrices: phi_s },
            &CovarianceSequence { matrices: phi_n },
            2,
            0.0,
        )
        .unwrap();
        assert!(res.degenerate_bins[0]);
        for i in 0..m {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((res.weights.w[[0, 0, i, 0]] - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn apply_beamformer_matches_scalar_loop_and_selectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_spec(&mut rng, 2, 2, 3);

        // One-hot reference weights reproduce the reference channel.
        let mut w = Array4::<Complex64>::zeros((2, 2, 3, 1));
        for t in 0..2 {
            for f in 0..2 {
                w[[t, f, 1, 0]] = Complex64::new(1.0, 0.0);
            }
        }
        let out = apply_beamformer(&BeamformerWeights { w }, &y).unwrap();
        for t in 0..2 {
            for f in 0..2 {
                assert_eq!(out[[t, f, 0]], y.data[[t, f, 1]]);
            }
        }

        // Zero weights give zero output.
        let w = Array4::<Complex64>::zeros((2, 2, 3, 2));
        let out = apply_beamformer(&BeamformerWeights { w }, &y).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));

        // Random weights against the scalar loop.
        for _ in 0..20 {
            let y = random_spec(&mut rng, 2, 2, 3);
            let mut w = Array4::<Complex64>::zeros((2, 2, 3, 2));
            for v in w.iter_mut() {
                *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let bw = BeamformerWeights { w };
            let out = apply_beamformer(&bw, &y).unwrap();
            for t in 0..2 {
                for f in 0..2 {
                    for c in 0..2 {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for ch in 0..3 {
                            acc += bw.w[[t, f, ch, c]].conj() * y.data[[t, f, ch]];
                        }
                        assert!((out[[t, f, c]] - acc).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn hermitian_eigenvalues_on_known_matrices() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let mut a = Array2::<Complex64>::zeros((2, 2));
        a[[0, 0]] = Complex64::new(2.0, 0.0);
        a[[0, 1]] = Complex64::new(0.0, 1.0);
        a[[1, 0]] = Complex64::new(0.0, -1.0);
        a[[1, 1]] = Complex64::new(2.0, 0.0);
        let eig = hermitian_eigenvalues(&a).unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);

        // Rank-1 outer product: eigenvalues are {0, 0, 0, ||v||^2}.
        let v = [
            Complex64::new(0.3, -0.7),
            Complex64::new(-0.2, 0.5),
            Complex64::new(0.9, 0.1),
            Complex64::new(-0.4, -0.6),
        ];
        let mut outer = Array2::<Complex64>::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                outer[[i, j]] = v[i] * v[j].conj();
            }
        }
        let norm2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        let eig = hermitian_eigenvalues(&outer).unwrap();
        assert!((eig[3] - norm2).abs() < 1e-12);
        for &e in &eig[..3] {
            assert!(e.abs() < 1e-12);
        }

        // Random Hermitian: both the trace and the Frobenius norm must be
        // carried into the spectrum (the latter catches stalled rotations).
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let n = 4;
            let mut h = Array2::<Complex64>::zeros((n, n));
            for i in 0..n {
                h[[i, i]] = Complex64::new(rng.random_range(-2.0..2.0), 0.0);
                for j in i + 1..n {
                    let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    h[[i, j]] = v;
                    h[[j, i]] = v.conj();
                }
            }
            let eig = hermitian_eigenvalues(&h).unwrap();
            let trace: f64 = (0..n).map(|i| h[[i, i]].re).sum();
            assert!((eig.iter().sum::<f64>() - trace).abs() < 1e-10);
            let frob: f64 = h.iter().map(|x| x.norm_sqr()).sum();
            let spec: f64 = eig.iter().map(|e| e * e).sum();
            assert!((frob - spec).abs() < 1e-9 * frob.max(1.0));
        }
    }
}
