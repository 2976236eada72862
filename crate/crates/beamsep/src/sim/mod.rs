//! Synthetic multi-channel scenes: reverberant overlapped speech with
//! ground-truth per-speaker references, DOAs, and noise.

pub mod corpus;
pub mod rir;
pub mod speech;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{fft_convolve, Waveform};
use crate::error::{Error, Result};

/// Largest supported speaker count per scene.
pub const MAX_SPEAKERS: usize = 3;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArrayGeometry {
    /// Absolute microphone positions in meters.
    pub mic_positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    /// Desk-scale default: 4-microphone non-uniform linear array along x.
    pub const DESK_LAYOUT_X: [f64; 4] = [0.0, 0.04, 0.12, 0.28];

    /// Linear array along the x axis with the given intra-array offsets,
    /// placed at `origin`.
    pub fn linear_x(offsets: &[f64], origin: [f64; 3]) -> Self {
        ArrayGeometry {
            mic_positions: offsets
                .iter()
                .map(|&x| [origin[0] + x, origin[1], origin[2]])
                .collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels() < 2 {
            return Err(Error::config("array needs at least 2 microphones"));
        }
        for (i, a) in self.mic_positions.iter().enumerate() {
            for b in self.mic_positions.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::config("duplicate microphone positions"));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        for v in &mut c {
            *v /= self.channels() as f64;
        }
        c
    }

    /// Unit vector from mic 0 towards the last mic, defined for linear arrays.
    pub fn axis(&self) -> [f64; 3] {
        let a = self.mic_positions[0];
        let b = self.mic_positions[self.channels() - 1];
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / norm, d[1] / norm, d[2] / norm]
    }

    /// Collinearity within 1e-9 m of the axis through mic 0 and the last mic.
    pub fn is_linear(&self) -> bool {
        let a = self.mic_positions[0];
        let u = self.axis();
        self.mic_positions.iter().all(|p| {
            let d = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
            let proj = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
            let res = [
                d[0] - proj * u[0],
                d[1] - proj * u[1],
                d[2] - proj * u[2],
            ];
            (res[0] * res[0] + res[1] * res[1] + res[2] * res[2]).sqrt() < 1e-9
        })
    }

    /// Along-axis positions relative to mic 0, meters.
    pub fn positions_along_axis(&self) -> Vec<f64> {
        let a = self.mic_positions[0];
        let u = self.axis();
        self.mic_positions
            .iter()
            .map(|p| (p[0] - a[0]) * u[0] + (p[1] - a[1]) * u[1] + (p[2] - a[2]) * u[2])
            .collect()
    }

    /// DOA of a point in degrees at the array centroid, measured so that a
    /// far-field wave from angle `theta` reaches microphone `m` with the
    /// relative phase `exp(-j w x_m cos(theta) / c)` of the steering model:
    /// 0 degrees is endfire on the mic-0 side, 90 broadside, 180 endfire
    /// beyond the last microphone.
    pub fn doa_of(&self, pos: [f64; 3]) -> f64 {
        let c = self.centroid();
        let u = self.axis();
        let d = [pos[0] - c[0], pos[1] - c[1], pos[2] - c[2]];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let cos = -(d[0] * u[0] + d[1] * u[1] + d[2] * u[2]) / norm;
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RoomSpec {
    /// Extents in meters.
    pub dimensions: [f64; 3],
    /// Reverberation time in seconds; 0 for anechoic.
    pub t60: f64,
    pub reflection_order: usize,
    pub speed_of_sound: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        RoomSpec {
            dimensions: [6.0, 5.0, 3.0],
            t60: 0.0,
            reflection_order: 0,
            speed_of_sound: 343.0,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| d <= 0.0) {
            return Err(Error::config("room dimensions must be positive"));
        }
        if self.t60 < 0.0 {
            return Err(Error::config("t60 must be non-negative"));
        }
        if self.speed_of_sound <= 0.0 {
            return Err(Error::config("speed of sound must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum NoiseKind {
    /// Spatially uncorrelated Gaussian noise per microphone.
    DiffuseWhite,
    /// White noise emitted from a point in the room.
    PointSource { position: [f64; 3] },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SourceSpec {
    pub position: [f64; 3],
    pub doa_deg: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneConfig {
    pub room: RoomSpec,
    pub array: ArrayGeometry,
    /// Speakers sorted by ascending DOA; this ordering defines the
    /// SPK1/SPK2/SPK3 slots everywhere downstream.
    pub sources: Vec<SourceSpec>,
    /// Target level of each interferer relative to speaker 0, dB.
    pub sir_db: Vec<f64>,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.array.validate()?;
        let c = self.sources.len();
        if c == 0 || c > MAX_SPEAKERS {
            return Err(Error::config(format!(
                "speaker count {c} outside 1..={MAX_SPEAKERS}"
            )));
        }
        if self.sir_db.len() + 1 != c {
            return Err(Error::config(format!(
                "expected {} sir_db entries for {} speakers, got {}",
                c - 1,
                c,
                self.sir_db.len()
            )));
        }
        for w in self.sources.windows(2) {
            if w[1].doa_deg < w[0].doa_deg {
                return Err(Error::config("sources must be sorted by ascending DOA"));
            }
        }
        for (i, a) in self.sources.iter().enumerate() {
            for b in self.sources.iter().skip(i + 1) {
                if (a.doa_deg - b.doa_deg).abs() < 1.0 {
                    return Err(Error::config("speaker DOAs must be at least 1 degree apart"));
                }
            }
        }
        let margin = 1e-3;
        for p in self
            .sources
            .iter()
            .map(|s| s.position)
            .chain(self.array.mic_positions.iter().copied())
        {
            for i in 0..3 {
                if p[i] < margin || p[i] > self.room.dimensions[i] - margin {
                    return Err(Error::config("sources and microphones must be inside the room"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub mixture: Waveform,
    pub reverberant_refs: Vec<Waveform>,
    pub noise: Waveform,
    pub doas: Vec<f64>,
}

impl SceneOutput {
    pub fn speakers(&self) -> usize {
        self.reverberant_refs.len()
    }
}

/// Interfering signal for speaker `i`: all other reverberant speakers plus
/// the background noise, summed in the same grouping order used to build the
/// mixture so `refs[0] + interfering_noise(0)` reproduces it bit-exactly.
pub fn interfering_noise(scene: &SceneOutput, i: usize) -> Result<Waveform> {
    if i >= scene.speakers() {
        return Err(Error::input(format!(
            "speaker index {i} out of range 0..{}",
            scene.speakers()
        )));
    }
    let mut acc = scene.noise.samples.clone();
    for (j, r) in scene.reverberant_refs.iter().enumerate().rev() {
        if j != i {
            acc += &r.samples;
        }
    }
    Waveform::new(acc, scene.noise.sample_rate)
}

fn scale_wave(w: &mut Array2<f64>, g: f64) {
    w.mapv_inplace(|v| v * g);
}

fn energy(w: &Array2<f64>) -> f64 {
    w.iter().map(|v| v * v).sum()
}

fn gaussian_noise(rng: &mut ChaCha8Rng, channels: usize, n: usize) -> Array2<f64> {
    // Box-Muller on uniform draws keeps determinism entirely in our hands.
    let mut out = Array2::<f64>::zeros((channels, n));
    for m in 0..channels {
        for i in 0..n {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            out[[m, i]] =
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
    out
}

/// Synthesize a scene: convolve each dry signal with per-microphone RIRs,
/// rescale interferers to the target SIRs and the noise to the target SNR,
/// and form the mixture as refs + noise.
pub fn simulate_scene(
    cfg: &SceneConfig,
    dry: &[Vec<f64>],
    sample_rate: u32,
) -> Result<SceneOutput> {
    cfg.validate()?;
    if dry.len() != cfg.sources.len() {
        return Err(Error::input(format!(
            "{} dry signals for {} sources",
            dry.len(),
            cfg.sources.len()
        )));
    }
    let n = dry.iter().map(|d| d.len()).min().unwrap_or(0);
    if n == 0 {
        return Err(Error::input("dry signals are empty"));
    }
    let channels = cfg.array.channels();

    let mut refs: Vec<Array2<f64>> = Vec::with_capacity(cfg.sources.len());
    for (src, d) in cfg.sources.iter().zip(dry) {
        let mut image = Array2::<f64>::zeros((channels, n));
        for (m, mic) in cfg.array.mic_positions.iter().enumerate() {
            let h = rir::image_source_rir(&cfg.room, src.position, *mic, sample_rate)?;
            let conv = fft_convolve(&d[..n], &h);
            for i in 0..n {
                image[[m, i]] = conv[i];
            }
        }
        refs.push(image);
    }

    // Interferer levels: speaker 0 is the SIR reference.
    let e0 = energy(&refs[0]);
    if e0 <= 0.0 {
        return Err(Error::numeric("reference speaker has zero energy"));
    }
    for (j, sir) in cfg.sir_db.iter().enumerate() {
        let ej = energy(&refs[j + 1]);
        if ej <= 0.0 {
            return Err(Error::numeric(format!("speaker {} has zero energy", j + 1)));
        }
        let g = (e0 / (ej * 10f64.powf(sir / 10.0))).sqrt();
        scale_wave(&mut refs[j + 1], g);
    }

    // Noise level against the energy of the summed references.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise = match cfg.noise_kind {
        NoiseKind::DiffuseWhite => gaussian_noise(&mut rng, channels, n),
        NoiseKind::PointSource { position } => {
            let white: Vec<f64> = {
                let w = gaussian_noise(&mut rng, 1, n);
                w.row(0).to_vec()
            };
            let mut out = Array2::<f64>::zeros((channels, n));
            for (m, mic) in cfg.array.mic_positions.iter().enumerate() {
                let h = rir::image_source_rir(&cfg.room, position, *mic, sample_rate)?;
                let conv = fft_convolve(&white, &h);
                for i in 0..n {
                    out[[m, i]] = conv[i];
                }
            }
            out
        }
    };
    let mut ref_sum = refs[0].clone();
    for r in refs.iter().skip(1) {
        ref_sum += r;
    }
    let e_refs = energy(&ref_sum);
    let e_noise = energy(&noise);
    if e_noise <= 0.0 {
        return Err(Error::numeric("noise has zero energy"));
    }
    let g_noise = (e_refs / (e_noise * 10f64.powf(cfg.snr_db / 10.0))).sqrt();
    scale_wave(&mut noise, g_noise);

    // Mixture built by accumulating noise first, then refs from the last
    // speaker down; interfering_noise reuses this grouping.
    let mut mixture = noise.clone();
    for r in refs.iter().rev() {
        mixture += r;
    }

    Ok(SceneOutput {
        mixture: Waveform::new(mixture, sample_rate)?,
        reverberant_refs: refs
            .into_iter()
            .map(|r| Waveform::new(r, sample_rate))
            .collect::<Result<_>>()?,
        noise: Waveform::new(noise, sample_rate)?,
        doas: cfg.sources.iter().map(|s| s.doa_deg).collect(),
    })
}
