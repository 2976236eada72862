//! Input features for the filter estimator: log-power spectra, interaural
//! phase differences, far-field steering vectors, and per-speaker
//! directional features.
//!
//! ```
//! use beamsep::features::steering_vector;
//! use beamsep::sim::ArrayGeometry;
//! use beamsep::dsp::StftConfig;
//!
//! // Broadside (90 degrees) sees zero inter-mic delay: every steering
//! // phase is exactly 1.
//! let geom = ArrayGeometry::linear_x(&[0.0, 0.04, 0.12, 0.28], [1.0, 1.0, 1.0]);
//! let sv = steering_vector(90.0, &geom, &StftConfig::default(), 343.0)?;
//! assert!(sv.values.iter().all(|v| (v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12));
//! # Ok::<(), beamsep::Error>(())
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::dsp::{MultiChannelSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::sim::ArrayGeometry;

/// Floor inside the log for power spectra.
pub const LPS_FLOOR: f64 = 1e-10;

/// Phase of a bin, with the zero-magnitude convention pinned to 0.
fn phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        0.0
    } else {
        c.im.atan2(c.re)
    }
}

/// `log(|Y_ch|^2 + 1e-10)`, natural log.
pub fn log_power_spectra(spec: &MultiChannelSpectrogram, ch: usize) -> Result<Array2<f64>> {
    if ch >= spec.channels() {
        return Err(Error::input(format!(
            "channel {ch} out of range 0..{}",
            spec.channels()
        )));
    }
    let (t_len, bins) = (spec.frames(), spec.bins());
    let mut out = Array2::<f64>::zeros((t_len, bins));
    for t in 0..t_len {
        for f in 0..bins {
            out[[t, f]] = (spec.data[[t, f, ch]].norm_sqr() + LPS_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Default pair list: every microphone against mic 0.
pub fn default_pairs(channels: usize) -> Vec<(usize, usize)> {
    (1..channels).map(|m| (m, 0)).collect()
}

/// Interaural phase differences as (cos, sin) planes, `[T, F, 2P]`,
/// interleaved per pair.
pub fn ipd(
    spec: &MultiChannelSpectrogram,
    pairs: &[(usize, usize)],
) -> Result<Array3<f64>> {
    for &(a, b) in pairs {
        if a == b || a >= spec.channels() || b >= spec.channels() {
            return Err(Error::input(format!("bad microphone pair ({a},{b})")));
        }
    }
    let (t_len, bins) = (spec.frames(), spec.bins());
    let mut out = Array3::<f64>::zeros((t_len, bins, 2 * pairs.len()));
    for t in 0..t_len {
        for f in 0..bins {
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let d = phase(spec.data[[t, f, a]]) - phase(spec.data[[t, f, b]]);
                out[[t, f, 2 * p]] = d.cos();
                out[[t, f, 2 * p + 1]] = d.sin();
            }
        }
    }
    Ok(out)
}

/// Far-field plane-wave steering vector for a linear array:
/// `v_m(f) = exp(-j 2 pi f_hz (x_m cos theta) / c)`, unit modulus everywhere.
#[derive(Debug, Clone)]
pub struct SteeringVector {
    /// `[F, M]` complex phases.
    pub values: Array2<Complex64>,
    pub doa_deg: f64,
}

pub fn steering_vector(
    doa_deg: f64,
    geometry: &ArrayGeometry,
    cfg: &StftConfig,
    speed_of_sound: f64,
) -> Result<SteeringVector> {
    if !(0.0..=180.0).contains(&doa_deg) {
        return Err(Error::input(format!("DOA {doa_deg} outside [0, 180]")));
    }
    if !geometry.is_linear() {
        return Err(Error::input(
            "far-field steering model requires a linear array",
        ));
    }
    let along = geometry.positions_along_axis();
    let bins = cfg.bins();
    let cos_t = doa_deg.to_radians().cos();
    let mut values = Array2::<Complex64>::zeros((bins, along.len()));
    for f in 0..bins {
        let f_hz = cfg.bin_hz(f);
        for (m, &x) in along.iter().enumerate() {
            let tau = x * cos_t / speed_of_sound;
            let angle = -2.0 * std::f64::consts::PI * f_hz * tau;
            values[[f, m]] = Complex64::new(angle.cos(), angle.sin());
        }
    }
    Ok(SteeringVector { values, doa_deg })
}

/// Directional feature: mean over the pair list of
/// `cos(angle(v_m1) - angle(v_m2) - (angle(Y_m1) - angle(Y_m2)))`.
pub fn directional_feature(
    spec: &MultiChannelSpectrogram,
    steering: &SteeringVector,
    pairs: &[(usize, usize)],
) -> Result<Array2<f64>> {
    if steering.values.ncols() != spec.channels() {
        return Err(Error::shape(format!(
            "steering for {} channels, spectrogram has {}",
            steering.values.ncols(),
            spec.channels()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::input("empty pair list"));
    }
    let (t_len, bins) = (spec.frames(), spec.bins());
    let mut out = Array2::<f64>::zeros((t_len, bins));
    let inv_p = 1.0 / pairs.len() as f64;
    for f in 0..bins {
        // Steering phase differences are frame-independent.
        let v_diff: Vec<f64> = pairs
            .iter()
            .map(|&(a, b)| phase(steering.values[[f, a]]) - phase(steering.values[[f, b]]))
            .collect();
        for t in 0..t_len {
            let mut acc = 0.0;
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let y_diff = phase(spec.data[[t, f, a]]) - phase(spec.data[[t, f, b]]);
                acc += (v_diff[p] - y_diff).cos();
            }
            out[[t, f]] = acc * inv_p;
        }
    }
    Ok(out)
}

/// The estimator's input stack.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub lps: Array2<f64>,
    /// `[T, F, 2P]`
    pub ipd: Array3<f64>,
    /// `[T, F, C]`, one plane per speaker slot.
    pub df: Array3<f64>,
}

impl FeatureStack {
    /// Build the stack for a mixture spectrogram and per-speaker DOAs.
    pub fn compute(
        spec: &MultiChannelSpectrogram,
        geometry: &ArrayGeometry,
        doas_deg: &[f64],
        speed_of_sound: f64,
    ) -> Result<Self> {
        let pairs = default_pairs(spec.channels());
        let lps = log_power_spectra(spec, 0)?;
        let ipd = ipd(spec, &pairs)?;
        let (t_len, bins) = (spec.frames(), spec.bins());
        let mut df = Array3::<f64>::zeros((t_len, bins, doas_deg.len()));
        for (c, &doa) in doas_deg.iter().enumerate() {
            let sv = steering_vector(doa, geometry, &spec.config, speed_of_sound)?;
            let plane = directional_feature(spec, &sv, &pairs)?;
            for t in 0..t_len {
                for f in 0..bins {
                    df[[t, f, c]] = plane[[t, f]];
                }
            }
        }
        let stack = FeatureStack { lps, ipd, df };
        stack.validate()?;
        Ok(stack)
    }

    pub fn frames(&self) -> usize {
        self.lps.nrows()
    }

    pub fn bins(&self) -> usize {
        self.lps.ncols()
    }

    pub fn ipd_planes(&self) -> usize {
        self.ipd.shape()[2]
    }

    pub fn speakers(&self) -> usize {
        self.df.shape()[2]
    }

    /// Total width per frame when flattened plane-major: `F * (1 + 2P + C)`.
    pub fn width(&self) -> usize {
        self.bins() * (1 + self.ipd_planes() + self.speakers())
    }

    pub fn validate(&self) -> Result<()> {
        let (t_len, bins) = (self.frames(), self.bins());
        if self.ipd.shape()[0] != t_len
            || self.ipd.shape()[1] != bins
            || self.df.shape()[0] != t_len
            || self.df.shape()[1] != bins
        {
            return Err(Error::shape("feature planes disagree on [T, F]"));
        }
        if self.ipd_planes() % 2 != 0 {
            return Err(Error::shape("ipd must hold (cos, sin) plane pairs"));
        }
        for t in 0..t_len {
            for f in 0..bins {
                for p in 0..self.ipd_planes() / 2 {
                    let c = self.ipd[[t, f, 2 * p]];
                    let s = self.ipd[[t, f, 2 * p + 1]];
                    if (c * c + s * s - 1.0).abs() > 1e-9 {
                        return Err(Error::numeric("ipd plane is not on the unit circle"));
                    }
                }
                for c in 0..self.speakers() {
                    let v = self.df[[t, f, c]];
                    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                        return Err(Error::numeric("df outside [-1, 1]"));
                    }
                }
            }
        }
        if !self.lps.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite lps"));
        }
        Ok(())
    }

    /// Flatten to `[T, F*(1+2P+C)]`, plane-major: LPS bins, then each IPD
    /// plane, then each DF plane.
    pub fn concat(&self) -> Array2<f64> {
        let (t_len, bins) = (self.frames(), self.bins());
        let width = self.width();
        let mut out = Array2::<f64>::zeros((t_len, width));
        for t in 0..t_len {
            let mut col = 0;
            for f in 0..bins {
                out[[t, col]] = self.lps[[t, f]];
                col += 1;
            }
            for p in 0..self.ipd_planes() {
                for f in 0..bins {
                    out[[t, col]] = self.ipd[[t, f, p]];
                    col += 1;
                }
            }
            for c in 0..self.speakers() {
                for f in 0..bins {
                    out[[t, col]] = self.df[[t, f, c]];
                    col += 1;
                }
            }
        }
        out
    }
}

/// Debug dump: `u8` dtype tag (1 = f64), `u8` rank, little-endian `u64` dims,
/// then raw little-endian values.
pub fn dump_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::shape("dump_tensor dims/data mismatch"));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&[1u8, dims.len() as u8])?;
    for &d in dims {
        f.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
