//! Training objective, metrics, and the train/evaluate/separate harness.
//!
//! ```
//! use beamsep::pipeline::si_snr;
//!
//! let reference: Vec<f64> = (0..480).map(|i| (i as f64 * 0.05).sin()).collect();
//! // A perfect estimate pins the reporting clamp; rescaling changes nothing.
//! assert_eq!(si_snr(&reference, &reference)?, 60.0);
//! let double: Vec<f64> = reference.iter().map(|v| v * 2.0).collect();
//! assert_eq!(si_snr(&double, &reference)?, 60.0);
//! # Ok::<(), beamsep::Error>(())
//! ```

pub mod config;
pub mod eval;
pub mod train;

use crate::error::{Error, Result};

/// Epsilon inside the Si-SNR log denominator.
pub const SI_SNR_EPS: f64 = 1e-8;

/// Reporting clamp in dB.
pub const SI_SNR_CLAMP_DB: f64 = 60.0;

/// DOA fed to unused speaker slots; outside the sampler's [20, 160] range.
pub const PADDING_DOA_DEG: f64 = 0.0;

/// Scale-invariant SNR in dB between single-channel signals, mean-centered,
/// clamped to +-60 dB for reporting. The all-zero estimate maps to the lower
/// clamp; an all-zero reference is rejected.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::input(format!(
            "si_snr length mismatch: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    let n = est.len() as f64;
    let rmean = reference.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|v| v - rmean).collect();
    let r_energy: f64 = r.iter().map(|v| v * v).sum();
    if r_energy <= 0.0 {
        return Err(Error::input("si_snr reference is all-zero"));
    }
    let emean = est.iter().sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|v| v - emean).collect();
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let alpha = dot / r_energy;
    let num = alpha * alpha * r_energy;
    let den: f64 = e
        .iter()
        .zip(&r)
        .map(|(ev, rv)| {
            let err = ev - alpha * rv;
            err * err
        })
        .sum();
    if num <= 0.0 {
        return Ok(-SI_SNR_CLAMP_DB);
    }
    let value = 10.0 * (num / (den + SI_SNR_EPS)).log10();
    Ok(value.clamp(-SI_SNR_CLAMP_DB, SI_SNR_CLAMP_DB))
}

/// Per-utterance loss: negative Si-SNR averaged over active speaker slots.
/// Utterances with no active slot are the caller's error to filter.
pub fn si_snr_loss_utterance(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    active: &[bool],
) -> Result<f64> {
    if estimates.len() != references.len() || estimates.len() != active.len() {
        return Err(Error::input("loss slot arity mismatch"));
    }
    let n_active = active.iter().filter(|&&a| a).count();
    if n_active == 0 {
        return Err(Error::input("utterance has no active speakers"));
    }
    let mut acc = 0.0;
    for ((est, reference), &is_active) in estimates.iter().zip(references).zip(active) {
        if is_active {
            acc += si_snr(est, reference)?;
        }
    }
    Ok(-acc / n_active as f64)
}

/// Batch loss: mean of per-utterance losses.
pub fn si_snr_loss_batch(utterances: &[(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>)]) -> Result<f64> {
    if utterances.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let mut acc = 0.0;
    for (est, refs, active) in utterances {
        acc += si_snr_loss_utterance(est, refs, active)?;
    }
    Ok(acc / utterances.len() as f64)
}
