//! Corpus generation: sample scene parameters from a recipe, synthesize, and
//! write multi-channel WAVs plus a JSONL manifest.
//!
//! Every utterance draws from an RNG stream derived from (corpus seed,
//! utterance index), so corpora are bitwise reproducible and independent of
//! generation order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::write_wav_f32;
use crate::error::{Error, Result};
use crate::sim::speech::synth_speech;
use crate::sim::{
    simulate_scene, ArrayGeometry, NoiseKind, RoomSpec, SceneConfig, SourceSpec, MAX_SPEAKERS,
};

fn default_room_min() -> [f64; 3] {
    [4.0, 4.0, 2.5]
}
fn default_room_max() -> [f64; 3] {
    [10.0, 8.0, 6.0]
}
fn default_t60() -> [f64; 2] {
    [0.05, 0.3]
}
fn default_sir() -> [f64; 2] {
    [-6.0, 6.0]
}
fn default_snr() -> [f64; 2] {
    [18.0, 30.0]
}
fn default_speakers() -> [usize; 2] {
    [1, 2]
}
fn default_utt_seconds() -> [f64; 2] {
    [2.0, 3.0]
}
fn default_array_x() -> Vec<f64> {
    ArrayGeometry::DESK_LAYOUT_X.to_vec()
}
fn default_order() -> usize {
    4
}
fn default_min_doa_sep() -> f64 {
    15.0
}
fn default_sample_rate() -> u32 {
    16_000
}

/// Sampling ranges for corpus generation; defaults are the desk-scale recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecipe {
    #[serde(default = "default_room_min")]
    pub room_min: [f64; 3],
    #[serde(default = "default_room_max")]
    pub room_max: [f64; 3],
    #[serde(default = "default_t60")]
    pub t60: [f64; 2],
    #[serde(default = "default_sir")]
    pub sir_db: [f64; 2],
    #[serde(default = "default_snr")]
    pub snr_db: [f64; 2],
    #[serde(default = "default_speakers")]
    pub speakers: [usize; 2],
    #[serde(default = "default_utt_seconds")]
    pub utt_seconds: [f64; 2],
    /// Intra-array microphone offsets along x, meters.
    #[serde(default = "default_array_x")]
    pub array_x: Vec<f64>,
    #[serde(default = "default_order")]
    pub reflection_order: usize,
    #[serde(default = "default_min_doa_sep")]
    pub min_doa_sep_deg: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

impl Default for CorpusRecipe {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl CorpusRecipe {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            (self.t60[0], self.t60[1], "t60"),
            (self.sir_db[0], self.sir_db[1], "sir_db"),
            (self.snr_db[0], self.snr_db[1], "snr_db"),
            (self.utt_seconds[0], self.utt_seconds[1], "utt_seconds"),
        ];
        for (lo, hi, name) in ranges {
            if lo > hi {
                return Err(Error::config(format!("{name}: min {lo} > max {hi}")));
            }
        }
        for i in 0..3 {
            if self.room_min[i] > self.room_max[i] {
                return Err(Error::config("room_min exceeds room_max"));
            }
        }
        if self.speakers[0] < 1
            || self.speakers[0] > self.speakers[1]
            || self.speakers[1] > MAX_SPEAKERS
        {
            return Err(Error::config(format!(
                "speaker range {:?} outside 1..={MAX_SPEAKERS}",
                self.speakers
            )));
        }
        if self.array_x.len() < 2 {
            return Err(Error::config("array needs at least 2 microphones"));
        }
        if self.utt_seconds[0] <= 0.0 {
            return Err(Error::config("utterance length must be positive"));
        }
        Ok(())
    }

    fn uniform(&self, rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
        if range[0] == range[1] {
            range[0]
        } else {
            rng.random_range(range[0]..range[1])
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPaths {
    /// Stored relative to the manifest's directory so corpora are
    /// relocatable and byte-identical across output locations.
    pub mixture: PathBuf,
    pub refs: Vec<PathBuf>,
    pub noise: PathBuf,
}

impl ManifestPaths {
    fn rebased(&self, base: &Path) -> Self {
        let fix = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        ManifestPaths {
            mixture: fix(&self.mixture),
            refs: self.refs.iter().map(fix).collect(),
            noise: fix(&self.noise),
        }
    }
}

/// One JSON object per corpus line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub paths: ManifestPaths,
    pub doas_deg: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub snr_db: f64,
    pub t60: f64,
    pub room_dims: [f64; 3],
    pub seed: u64,
}

impl ManifestEntry {
    pub fn speakers(&self) -> usize {
        self.doas_deg.len()
    }
}

/// Sample one scene from the recipe using the utterance's derived stream.
fn sample_scene(
    recipe: &CorpusRecipe,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<(SceneConfig, Vec<Vec<f64>>, f64)> {
    let dims = [
        recipe.uniform(rng, [recipe.room_min[0], recipe.room_max[0]]),
        recipe.uniform(rng, [recipe.room_min[1], recipe.room_max[1]]),
        recipe.uniform(rng, [recipe.room_min[2], recipe.room_max[2]]),
    ];
    let t60 = recipe.uniform(rng, recipe.t60);
    let room = RoomSpec {
        dimensions: dims,
        t60,
        reflection_order: recipe.reflection_order,
        speed_of_sound: 343.0,
    };

    // Array along x near the low-y wall, kept in the central x band so every
    // sampled bearing has room in front of it; sources go to the +y side.
    let span = recipe.array_x.iter().cloned().fold(0.0f64, f64::max);
    let margin = 0.4;
    let ox_lo = 0.3 * dims[0];
    let ox_hi = (0.7 * dims[0] - span).max(ox_lo + 0.01);
    let ox = recipe.uniform(rng, [ox_lo, ox_hi]);
    let oy = recipe.uniform(rng, [margin, (margin + 0.2).min(dims[1] / 4.0)]);
    let oz = 1.5f64.clamp(margin, dims[2] - margin);
    let array = ArrayGeometry::linear_x(&recipe.array_x, [ox, oy, oz]);
    let centroid = array.centroid();

    let c = if recipe.speakers[0] == recipe.speakers[1] {
        recipe.speakers[0]
    } else {
        rng.random_range(recipe.speakers[0]..=recipe.speakers[1])
    };

    // Rejection-sample DOAs with the minimum separation, then place each
    // source at a range that stays inside the room.
    let mut doas: Vec<f64> = Vec::with_capacity(c);
    let mut guard = 0;
    while doas.len() < c {
        guard += 1;
        if guard > 10_000 {
            return Err(Error::config(
                "could not sample DOAs with the requested separation",
            ));
        }
        let cand = rng.random_range(20.0..160.0);
        if doas
            .iter()
            .all(|&d: &f64| (d - cand).abs() >= recipe.min_doa_sep_deg)
        {
            doas.push(cand);
        }
    }
    doas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sources = Vec::with_capacity(c);
    for &doa in &doas {
        // DOA 0 is endfire on the mic-0 side, so the bearing into the room
        // flips the along-axis component.
        let th = doa.to_radians();
        let dir = [-th.cos(), th.sin()];
        // Largest range that stays inside the walls along this bearing.
        let mut r_max = f64::INFINITY;
        for i in 0..2 {
            if dir[i] > 1e-9 {
                r_max = r_max.min((dims[i] - margin - centroid[i]) / dir[i]);
            } else if dir[i] < -1e-9 {
                r_max = r_max.min((margin - centroid[i]) / dir[i]);
            }
        }
        if r_max < 0.35 {
            return Err(Error::config("room too small to place sources"));
        }
        let hi = r_max.min(2.2);
        let lo = 0.6f64.min(0.8 * hi);
        let range = if hi - lo > 1e-9 {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        sources.push(SourceSpec {
            position: [
                centroid[0] + range * dir[0],
                centroid[1] + range * dir[1],
                centroid[2],
            ],
            doa_deg: doa,
        });
    }

    let sir_db: Vec<f64> = (1..c).map(|_| recipe.uniform(rng, recipe.sir_db)).collect();
    let snr_db = recipe.uniform(rng, recipe.snr_db);
    let seconds = recipe.uniform(rng, recipe.utt_seconds);
    let n = (seconds * recipe.sample_rate as f64) as usize;
    let dry: Vec<Vec<f64>> = (0..c)
        .map(|_| synth_speech(rng, n, recipe.sample_rate))
        .collect();

    Ok((
        SceneConfig {
            room,
            array,
            sources,
            sir_db,
            snr_db,
            noise_kind: NoiseKind::DiffuseWhite,
            seed,
        },
        dry,
        t60,
    ))
}

/// Generate `n_utts` utterances under `out_dir` and return the manifest,
/// also written to `out_dir/manifest.jsonl`.
pub fn generate_corpus(
    recipe: &CorpusRecipe,
    n_utts: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    recipe.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(n_utts);
    for u in 0..n_utts {
        // Derived stream: same corpus seed, per-utterance stream index.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u as u64 + 1);
        let scene_seed = rng.random::<u64>();
        let (cfg, dry, t60) = sample_scene(recipe, &mut rng, scene_seed)?;
        let scene = simulate_scene(&cfg, &dry, recipe.sample_rate)?;

        let id = format!("utt{u:05}");
        let utt_dir = out_dir.join(&id);
        fs::create_dir_all(&utt_dir)?;
        let rel = PathBuf::from(&id);
        let mixture = rel.join("mixture.wav");
        write_wav_f32(&out_dir.join(&mixture), &scene.mixture)?;
        let mut refs = Vec::with_capacity(scene.speakers());
        for (i, r) in scene.reverberant_refs.iter().enumerate() {
            let p = rel.join(format!("ref{i}.wav"));
            write_wav_f32(&out_dir.join(&p), r)?;
            refs.push(p);
        }
        let noise = rel.join("noise.wav");
        write_wav_f32(&out_dir.join(&noise), &scene.noise)?;

        entries.push(ManifestEntry {
            id,
            paths: ManifestPaths {
                mixture,
                refs,
                noise,
            },
            doas_deg: scene.doas.clone(),
            sir_db: cfg.sir_db.clone(),
            snr_db: cfg.snr_db,
            t60,
            room_dims: cfg.room.dimensions,
            seed: scene_seed,
        });
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    let mut f = fs::File::create(&manifest_path)?;
    for e in &entries {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    // Callers get directly usable absolute paths.
    for e in &mut entries {
        e.paths = e.paths.rebased(out_dir);
    }
    Ok(entries)
}

/// Read a manifest, rebasing the stored relative paths onto its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<ManifestEntry>(l)
                .map(|mut e| {
                    e.paths = e.paths.rebased(base);
                    e
                })
                .map_err(Error::from)
        })
        .collect()
}
