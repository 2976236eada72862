//! Image-source room impulse responses for rectangular rooms.
//!
//! Uniform frequency-independent reflection coefficient on all six walls,
//! derived from the target T60 by Sabine's formula:
//!   beta = sqrt(1 - min(1, 0.1611 * V / (S * t60)))
//! Fractional tap delays are placed with an 81-tap Hann-windowed sinc
//! kernel, so integer-sample delays collapse to exact unit impulses.
//!
//! ```
//! use beamsep::sim::{rir::image_source_rir, RoomSpec};
//!
//! // Anechoic room: the free-field response is a single spherical-decay
//! // impulse at distance/c. Distance chosen to land on a whole sample.
//! let room = RoomSpec { dimensions: [8.0, 5.0, 3.0], t60: 0.0,
//!                       reflection_order: 0, speed_of_sound: 343.0 };
//! let d = 343.0 * 50.0 / 16_000.0;
//! let h = image_source_rir(&room, [1.0, 2.0, 1.5], [1.0 + d, 2.0, 1.5], 16_000)?;
//! let peak = 1.0 / (4.0 * std::f64::consts::PI * d);
//! assert!((h[50] - peak).abs() < 1e-12);
//! # Ok::<(), beamsep::Error>(())
//! ```

use crate::error::{Error, Result};
use crate::sim::RoomSpec;

/// Half-width of the fractional-delay kernel in samples (81 taps total).
pub const SINC_HALF_WIDTH: usize = 40;

const SABINE: f64 = 0.1611;

/// Uniform wall reflection coefficient for the room; the flag reports the
/// anechoic clamp for T60 values too small for the geometry.
pub fn reflection_coefficient(room: &RoomSpec) -> (f64, bool) {
    if room.t60 <= 0.0 {
        return (0.0, false);
    }
    let [lx, ly, lz] = room.dimensions;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    let absorption = SABINE * volume / (surface * room.t60);
    if absorption >= 1.0 {
        (0.0, true)
    } else {
        ((1.0 - absorption).sqrt(), false)
    }
}

fn windowed_sinc(x: f64) -> f64 {
    let h = SINC_HALF_WIDTH as f64;
    if x.abs() > h {
        return 0.0;
    }
    let sinc = if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    };
    let win = 0.5 * (1.0 + (std::f64::consts::PI * x / h).cos());
    sinc * win
}

fn inside(room: &RoomSpec, p: [f64; 3]) -> bool {
    (0..3).all(|i| p[i] > 0.0 && p[i] < room.dimensions[i])
}

/// Room impulse response between one source and one microphone.
///
/// Taps at image delays `d/c` with `1/(4 pi d)` spherical attenuation and
/// `beta^r` for `r` wall reflections; images are enumerated up to
/// `room.reflection_order` total reflections.
pub fn image_source_rir(
    room: &RoomSpec,
    src: [f64; 3],
    mic: [f64; 3],
    sample_rate: u32,
) -> Result<Vec<f64>> {
    room.validate()?;
    if src == mic {
        return Err(Error::input("source and microphone coincide"));
    }
    if !inside(room, src) || !inside(room, mic) {
        return Err(Error::input("source and microphone must be strictly inside the room"));
    }
    let (beta, clamped) = reflection_coefficient(room);
    if clamped {
        eprintln!(
            "warning: t60 {}s is below what this room supports; clamping to anechoic",
            room.t60
        );
    }
    let order = room.reflection_order as i64;
    let c = room.speed_of_sound;
    let fs = sample_rate as f64;

    struct Tap {
        delay_samples: f64,
        amplitude: f64,
    }
    let mut taps: Vec<Tap> = Vec::new();
    let mut max_delay = 0.0f64;
    // Allen-Berkley image indexing: per axis the image coordinate is
    // (1-2q)*src + 2m*L with q in {0,1}, and the axis contributes
    // |m - q| + |m| wall reflections.
    let m_range = order / 2 + 1;
    for q in 0..2i64 {
        for mx in -m_range..=m_range {
            let rx = (mx - q).abs() + mx.abs();
            if rx > order {
                continue;
            }
            let ix = (1 - 2 * q) as f64 * src[0] + 2.0 * mx as f64 * room.dimensions[0];
            for jq in 0..2i64 {
                for my in -m_range..=m_range {
                    let ry = (my - jq).abs() + my.abs();
                    if rx + ry > order {
                        continue;
                    }
                    let iy = (1 - 2 * jq) as f64 * src[1] + 2.0 * my as f64 * room.dimensions[1];
                    for kq in 0..2i64 {
                        for mz in -m_range..=m_range {
                            let rz = (mz - kq).abs() + mz.abs();
                            let refl = rx + ry + rz;
                            if refl > order {
                                continue;
                            }
                            let iz =
                                (1 - 2 * kq) as f64 * src[2] + 2.0 * mz as f64 * room.dimensions[2];
                            let dx = ix - mic[0];
                            let dy = iy - mic[1];
                            let dz = iz - mic[2];
                            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                            let amplitude = beta.powi(refl as i32)
                                / (4.0 * std::f64::consts::PI * dist.max(1e-3));
                            if amplitude == 0.0 && refl > 0 {
                                continue;
                            }
                            let delay = dist / c * fs;
                            max_delay = max_delay.max(delay);
                            taps.push(Tap {
                                delay_samples: delay,
                                amplitude,
                            });
                        }
                    }
                }
            }
        }
    }

    let len = max_delay.ceil() as usize + SINC_HALF_WIDTH + 1;
    let mut rir = vec![0.0; len];
    for tap in &taps {
        let lo = (tap.delay_samples - SINC_HALF_WIDTH as f64).ceil() as i64;
        let hi = (tap.delay_samples + SINC_HALF_WIDTH as f64).floor() as i64;
        for n in lo..=hi {
            if n < 0 || n as usize >= len {
                continue;
            }
            rir[n as usize] += tap.amplitude * windowed_sinc(n as f64 - tap.delay_samples);
        }
    }
    Ok(rir)
}
