//! Windowed STFT analysis/synthesis and audio buffers.
//!
//! Framing is "centered": the signal is reflect-padded by `fft_size/2` at
//! both ends so frame `t` is centered on sample `t * hop`. Synthesis uses
//! window-squared overlap-add normalization, which reconstructs exactly for
//! any window with non-vanishing overlap energy; COLA of the analysis window
//! is still validated because the rest of the toolkit assumes it.
//!
//! ```
//! use beamsep::dsp::{stft, istft, StftConfig, Waveform};
//!
//! let samples: Vec<f64> = (0..16_000)
//!     .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
//!     .collect();
//! let wave = Waveform::from_mono(samples, 16_000)?;
//! let spec = stft(&wave, &StftConfig::default())?;
//! assert_eq!(spec.bins(), 257); // one-sided spectrum of a 512-point FFT
//!
//! let back = istft(&spec)?;
//! let err: f64 = back.samples.iter().zip(wave.samples.iter())
//!     .map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
//!     / wave.energy().sqrt();
//! assert!(err < 1e-10);
//! # Ok::<(), beamsep::Error>(())
//! ```

pub mod wav;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Multi-channel time-domain audio, `samples[channel][n]`.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::input("sample_rate must be positive"));
        }
        if samples.nrows() == 0 {
            return Err(Error::input("waveform needs at least one channel"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("waveform contains non-finite samples"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn from_mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(
            Array2::from_shape_vec((1, n), samples).expect("1 x n"),
            sample_rate,
        )
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, m: usize) -> Vec<f64> {
        self.samples.row(m).to_vec()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic (DFT-even) window coefficients; required for exact COLA of
    /// the Hann window at 50% overlap.
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
    /// Reflect-pad by `fft_size/2` on both ends so frames are centered.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            fft_size: 512,
            hop: 256,
            window: WindowKind::Hann,
            sample_rate: 16_000,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frequency in Hz of one-sided bin `f`.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.hop == 0 {
            return Err(Error::config("fft_size and hop must be positive"));
        }
        if self.fft_size % self.hop != 0 {
            return Err(Error::config(format!(
                "hop {} must divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        self.check_cola()
    }

    /// Constant-overlap-add check: the shifted window sum must be constant
    /// over the steady-state interior.
    fn check_cola(&self) -> Result<()> {
        let w = self.window.coefficients(self.fft_size);
        let span = 3 * self.fft_size;
        let mut ola = vec![0.0; span];
        let mut start = 0;
        while start + self.fft_size <= span {
            for (i, &v) in w.iter().enumerate() {
                ola[start + i] += v;
            }
            start += self.hop;
        }
        let interior = &ola[self.fft_size..span - self.fft_size];
        let reference = interior[0];
        for &v in interior {
            if (v - reference).abs() > 1e-10 {
                return Err(Error::config(format!(
                    "window/hop pair violates COLA: overlap-add varies between {reference} and {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Complex time-frequency tensor, axes `[frame, bin, channel]`.
#[derive(Debug, Clone)]
pub struct MultiChannelSpectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    /// Original signal length, used to trim synthesis output.
    pub num_samples: usize,
}

impl MultiChannelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Number of analysis frames for a signal of `num_samples` under `cfg`.
pub fn frame_count(num_samples: usize, cfg: &StftConfig) -> usize {
    if cfg.center {
        if num_samples == 0 {
            0
        } else {
            num_samples / cfg.hop + 1
        }
    } else if num_samples < cfg.fft_size {
        0
    } else {
        (num_samples - cfg.fft_size) / cfg.hop + 1
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.len() < pad + 1 {
        return Err(Error::input(format!(
            "signal of {} samples is too short to reflect-pad by {}",
            x.len(),
            pad
        )));
    }
    let mut out = Vec::with_capacity(x.len() + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[x.len() - 2 - i]);
    }
    Ok(out)
}

/// Short-time Fourier transform of every channel; one-sided spectrum.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<MultiChannelSpectrogram> {
    cfg.validate()?;
    if w.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("stft input contains non-finite samples"));
    }
    let n = w.num_samples();
    let t_len = frame_count(n, cfg);
    if t_len == 0 {
        return Err(Error::input("signal is empty or too short for one frame"));
    }
    let bins = cfg.bins();
    let channels = w.channels();
    let window = cfg.window.coefficients(cfg.fft_size);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);

    let mut out = Array3::<Complex64>::zeros((t_len, bins, channels));
    let mut frame = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for m in 0..channels {
        let raw = w.channel(m);
        let padded = if cfg.center {
            reflect_pad(&raw, cfg.fft_size / 2)?
        } else {
            raw
        };
        for t in 0..t_len {
            let start = t * cfg.hop;
            for i in 0..cfg.fft_size {
                let v = if start + i < padded.len() {
                    padded[start + i]
                } else {
                    0.0
                };
                frame[i] = Complex64::new(v * window[i], 0.0);
            }
            fft.process(&mut frame);
            for f in 0..bins {
                out[[t, f, m]] = frame[f];
            }
        }
    }
    Ok(MultiChannelSpectrogram {
        data: out,
        config: *cfg,
        num_samples: n,
    })
}

/// Inverse STFT via window-squared overlap-add.
pub fn istft(spec: &MultiChannelSpectrogram) -> Result<Waveform> {
    let cfg = &spec.config;
    cfg.validate()?;
    let (t_len, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    if bins != cfg.bins() {
        return Err(Error::shape(format!(
            "{} bins vs fft_size {}",
            bins, cfg.fft_size
        )));
    }
    let window = cfg.window.coefficients(cfg.fft_size);
    let padded_len = (t_len - 1) * cfg.hop + cfg.fft_size;
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);

    // Window-square normalization shared by all channels.
    let mut wsum = vec![0.0; padded_len];
    for t in 0..t_len {
        for i in 0..cfg.fft_size {
            wsum[t * cfg.hop + i] += window[i] * window[i];
        }
    }

    let pad = if cfg.center { cfg.fft_size / 2 } else { 0 };
    let out_len = if spec.num_samples > 0 {
        spec.num_samples
    } else {
        padded_len.saturating_sub(2 * pad)
    };
    let mut samples = Array2::<f64>::zeros((channels, out_len));
    let mut spectrum = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let scale = 1.0 / cfg.fft_size as f64;
    for m in 0..channels {
        let mut acc = vec![0.0; padded_len];
        for t in 0..t_len {
            for f in 0..bins {
                spectrum[f] = spec.data[[t, f, m]];
            }
            for f in bins..cfg.fft_size {
                spectrum[f] = spec.data[[t, cfg.fft_size - f, m]].conj();
            }
            ifft.process(&mut spectrum);
            for i in 0..cfg.fft_size {
                acc[t * cfg.hop + i] += spectrum[i].re * scale * window[i];
            }
        }
        for i in 0..out_len {
            let j = i + pad;
            let denom = wsum[j];
            samples[[m, i]] = if denom > 1e-12 { acc[j] / denom } else { 0.0 };
        }
    }
    Waveform::new(samples, cfg.sample_rate)
}

/// Full linear convolution via FFT, length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut fa = vec![Complex64::new(0.0, 0.0); size];
    let mut fb = vec![Complex64::new(0.0, 0.0); size];
    for (i, &v) in a.iter().enumerate() {
        fa[i].re = v;
    }
    for (i, &v) in b.iter().enumerate() {
        fb[i].re = v;
    }
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}
