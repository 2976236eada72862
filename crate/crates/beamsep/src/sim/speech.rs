//! Deterministic speech-like dry signals for desk-scale corpora.
//!
//! Harmonic excitation with a drifting fundamental, two formant resonators,
//! a syllabic on/off envelope, and a weak aspiration floor. Not speech, but
//! broadband, non-stationary, and distinct across seeds, which is what the
//! separation objectives need.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Second-order resonator (constant-peak-gain bandpass biquad).
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(center_hz: f64, bandwidth_hz: f64, fs: f64) -> Self {
        let r = (-std::f64::consts::PI * bandwidth_hz / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * center_hz / fs;
        Resonator {
            b0: (1.0 - r * r) / 2.0,
            a1: -2.0 * r * theta.cos(),
            a2: r * r,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Generate `n` samples of a speech-like signal at `fs` Hz.
pub fn synth_speech(rng: &mut ChaCha8Rng, n: usize, fs: u32) -> Vec<f64> {
    let fs = fs as f64;
    let mut f0: f64 = rng.random_range(100.0..220.0);
    let f0_base = f0;
    let mut phase = 0.0f64;

    let mut formant1 = Resonator::new(rng.random_range(300.0..800.0), 120.0, fs);
    let mut formant2 = Resonator::new(rng.random_range(900.0..2400.0), 220.0, fs);

    // Syllabic envelope: alternating voiced bursts and pauses with smoothed
    // edges.
    let mut envelope = vec![0.0; n];
    let mut pos = 0usize;
    let mut voiced = rng.random_bool(0.8);
    while pos < n {
        let seconds = if voiced {
            rng.random_range(0.12..0.35)
        } else {
            rng.random_range(0.04..0.18)
        };
        let len = ((seconds * fs) as usize).max(1).min(n - pos);
        if voiced {
            for v in &mut envelope[pos..pos + len] {
                *v = 1.0;
            }
        }
        pos += len;
        voiced = !voiced;
    }
    // One-pole smoothing (~15 ms) to avoid clicks.
    let alpha = (-1.0 / (0.015 * fs)).exp();
    let mut e = 0.0;
    for v in &mut envelope {
        e = alpha * e + (1.0 - alpha) * *v;
        *v = e;
    }

    let harmonics = 24;
    let mut out = vec![0.0; n];
    for (i, sample) in out.iter_mut().enumerate() {
        // Slow random-walk pitch bounded around its base.
        f0 += rng.random_range(-0.5..0.5);
        f0 = f0.clamp(f0_base * 0.7, f0_base * 1.4);
        phase += 2.0 * std::f64::consts::PI * f0 / fs;
        if phase > 2.0 * std::f64::consts::PI {
            phase -= 2.0 * std::f64::consts::PI;
        }
        let mut v = 0.0;
        for h in 1..=harmonics {
            let fh = f0 * h as f64;
            if fh > 4000.0 {
                break;
            }
            v += (phase * h as f64).sin() / h as f64;
        }
        let shaped = formant1.process(v) + 0.7 * formant2.process(v) + 0.15 * v;
        let aspiration = rng.random_range(-1.0..1.0) * 0.02;
        *sample = envelope[i] * shaped + aspiration;
    }

    // Normalize to 0.08 RMS.
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let g = 0.08 / rms;
        for v in &mut out {
            *v *= g;
        }
    }
    out
}
