//! Chunk-wise training loop: Adam on the negative Si-SNR of the beamformed
//! estimates against the reverberant clean references at microphone 0.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::optim::{clip_global_norm, Adam, GradBuffer};
use autodiff::{checkpoint, Graph, NodeId};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft, wav::read_wav, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::model::diffops::SiSnrOp;
use crate::model::{BeamformerNetConfig, EstimatorConfig, MimoModel};
use crate::pipeline::config::RunConfig;
use crate::pipeline::{PADDING_DOA_DEG, SI_SNR_EPS};
use crate::sim::corpus::ManifestEntry;

/// Model architecture sidecar written next to checkpoints so evaluation can
/// rebuild the network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub stft: StftConfig,
    pub mics: usize,
    pub speakers: usize,
    pub estimator: EstimatorConfig,
    pub beamformer: BeamformerNetConfig,
}

impl ModelMeta {
    pub fn build(&self, seed: u64) -> Result<MimoModel> {
        MimoModel::new(
            self.stft,
            self.mics,
            self.speakers,
            self.estimator,
            self.beamformer,
            seed,
        )
    }
}

pub fn build_model(run: &RunConfig) -> Result<MimoModel> {
    MimoModel::new(
        run.stft,
        run.mics(),
        run.speaker_slots(),
        run.estimator,
        run.beamformer,
        run.seed,
    )
}

pub fn model_meta(run: &RunConfig) -> ModelMeta {
    ModelMeta {
        stft: run.stft,
        mics: run.mics(),
        speakers: run.speaker_slots(),
        estimator: run.estimator,
        beamformer: run.beamformer,
    }
}

/// Load a trained model from a directory holding `model.json` + `best.ckpt`.
pub fn load_model_dir(dir: &Path) -> Result<MimoModel> {
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
    let mut model = meta.build(0)?;
    checkpoint::load_into(&mut model.store, &dir.join("best.ckpt"))?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct LoadedUtterance {
    pub id: String,
    pub mixture: Waveform,
    pub refs: Vec<Waveform>,
    pub doas: Vec<f64>,
}

pub fn load_utterance(entry: &ManifestEntry) -> Result<LoadedUtterance> {
    let mixture = read_wav(&entry.paths.mixture)?;
    let refs = entry
        .paths
        .refs
        .iter()
        .map(|p| read_wav(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedUtterance {
        id: entry.id.clone(),
        mixture,
        refs,
        doas: entry.doas_deg.clone(),
    })
}

/// Pad the active-speaker DOAs up to the model's slot count.
pub fn padded_doas(doas: &[f64], slots: usize) -> Vec<f64> {
    let mut out = doas.to_vec();
    while out.len() < slots {
        out.push(PADDING_DOA_DEG);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_si_snr: Option<f64>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_val_si_snr: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Full differentiable loss for one chunk: forward pipeline plus the Si-SNR
/// objective over active slots.
pub fn chunk_loss_graph(
    g: &mut Graph,
    model: &MimoModel,
    spec: &crate::dsp::MultiChannelSpectrogram,
    stack: &FeatureStack,
    refs_ch0: &[Vec<f64>],
    active: &[bool],
) -> Result<NodeId> {
    let nodes = model.forward_graph(g, spec, stack)?;
    let n_active = active.iter().filter(|&&a| a).count();
    if n_active == 0 {
        return Err(Error::input("chunk has no active speakers"));
    }
    let mut acc: Option<NodeId> = None;
    for (slot, &is_active) in active.iter().enumerate() {
        if !is_active {
            continue;
        }
        let op = SiSnrOp::new(&refs_ch0[slot], SI_SNR_EPS)?;
        let val = op.forward(g.value(nodes.est_waves[slot]))?;
        let s = g.custom(Box::new(op), &[nodes.est_waves[slot]], val)?;
        acc = Some(match acc {
            None => s,
            Some(prev) => g.add(prev, s)?,
        });
    }
    // Negative mean over active slots.
    g.scale(acc.expect("at least one active slot"), -1.0 / n_active as f64)
        .map_err(Error::from)
}

struct ChunkDraw<'a> {
    entry: &'a ManifestEntry,
    utt: LoadedUtterance,
    offset: usize,
    len: usize,
}

fn draw_chunk<'a>(
    rng: &mut ChaCha8Rng,
    manifest: &'a [ManifestEntry],
    chunk_samples: usize,
) -> Result<ChunkDraw<'a>> {
    let idx = rng.random_range(0..manifest.len());
    let entry = &manifest[idx];
    let utt = load_utterance(entry)?;
    let n = utt.mixture.num_samples();
    let len = chunk_samples.min(n);
    let offset = if n > len { rng.random_range(0..n - len) } else { 0 };
    Ok(ChunkDraw {
        entry,
        utt,
        offset,
        len,
    })
}

fn slice_channels(w: &Waveform, offset: usize, len: usize) -> Waveform {
    let mut out = ndarray::Array2::<f64>::zeros((w.channels(), len));
    for m in 0..w.channels() {
        for i in 0..len {
            out[[m, i]] = w.samples[[m, offset + i]];
        }
    }
    Waveform::new(out, w.sample_rate).expect("slice of valid waveform")
}

/// Mean Si-SNR of the model's separated outputs over active slots of the
/// given utterances (reporting metric, clamped).
pub fn validate(model: &MimoModel, geometry: &crate::sim::ArrayGeometry, utts: &[LoadedUtterance]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for utt in utts {
        let spec = stft(&utt.mixture, &model.stft)?;
        let doas = padded_doas(&utt.doas, model.speakers);
        let stack = FeatureStack::compute(&spec, geometry, &doas, 343.0)?;
        let mut g = Graph::new();
        g.set_grad_enabled(false);
        let nodes = model.forward_graph(&mut g, &spec, &stack)?;
        for (slot, reference) in utt.refs.iter().enumerate() {
            let est = g.value(nodes.est_waves[slot]).data().to_vec();
            acc += crate::pipeline::si_snr(&est, &reference.channel(0))?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::input("no validation slots"));
    }
    Ok(acc / count as f64)
}

/// Train a model on a corpus manifest; writes `metrics.jsonl`, `model.json`,
/// `best.ckpt`, and `last.ckpt` under `out_dir`.
pub fn train(
    run: &RunConfig,
    train_manifest: &[ManifestEntry],
    val_manifest: &[ManifestEntry],
    out_dir: &Path,
) -> Result<TrainReport> {
    run.validate()?;
    if train_manifest.is_empty() {
        return Err(Error::input("empty training manifest"));
    }
    fs::create_dir_all(out_dir)?;
    let cfg = &run.train;
    let mut model = build_model(run)?;
    let geometry = crate::sim::ArrayGeometry::linear_x(&run.recipe.array_x, [0.0, 0.0, 0.0]);
    let chunk_samples = (cfg.chunk_seconds * run.stft.sample_rate as f64) as usize;

    fs::write(
        out_dir.join("model.json"),
        serde_json::to_string_pretty(&model_meta(run))?,
    )?;
    let mut metrics = fs::File::create(out_dir.join("metrics.jsonl"))?;

    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut grads = GradBuffer::zeros_like(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| train_manifest.len().div_ceil(cfg.batch_size))
        .max(1);
    let val_utts: Vec<LoadedUtterance> = {
        let cap = cfg.max_val_utts.unwrap_or(val_manifest.len());
        val_manifest
            .iter()
            .take(cap)
            .map(load_utterance)
            .collect::<Result<_>>()?
    };

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best_val: Option<f64> = None;
    let mut since_best = 0usize;
    let mut warned_big_weights = false;
    let mut global_step = 0usize;
    let best_path = out_dir.join("best.ckpt");

    'outer: for epoch in 0..cfg.max_epochs {
        for _ in 0..steps_per_epoch {
            if let Some(max) = cfg.max_steps {
                if global_step >= max {
                    break 'outer;
                }
            }
            grads.reset();
            let mut loss_acc = 0.0;
            let mut batch_ids = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let draw = draw_chunk(&mut rng, train_manifest, chunk_samples)?;
                batch_ids.push(draw.entry.id.clone());
                let mixture = slice_channels(&draw.utt.mixture, draw.offset, draw.len);
                let refs_ch0: Vec<Vec<f64>> = draw
                    .utt
                    .refs
                    .iter()
                    .map(|r| {
                        r.channel(0)[draw.offset..draw.offset + draw.len].to_vec()
                    })
                    .collect();
                let mut active = vec![false; model.speakers];
                let mut refs_padded = vec![Vec::new(); model.speakers];
                for (s, r) in refs_ch0.into_iter().enumerate() {
                    active[s] = true;
                    refs_padded[s] = r;
                }
                let spec = stft(&mixture, &run.stft)?;
                let doas = padded_doas(&draw.utt.doas, model.speakers);
                let stack = FeatureStack::compute(&spec, &geometry, &doas, 343.0)?;

                let mut g = Graph::new();
                let loss = chunk_loss_graph(&mut g, &model, &spec, &stack, &refs_padded, &active)?;
                let loss_val = g.value(loss).item();
                if !loss_val.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite loss at step {global_step}, batch {batch_ids:?}"
                    )));
                }
                loss_acc += loss_val;
                g.backward(loss)?;
                grads.accumulate(&g, &model.store)?;

                if !warned_big_weights {
                    // Norm monitor on the emitted beamforming weights.
                    let max_w = g
                        .param_bindings()
                        .iter()
                        .find(|(name, _)| name == "bf.head.w")
                        .map(|(_, id)| {
                            g.value(*id).data().iter().fold(0.0f64, |a, &v| a.max(v.abs()))
                        })
                        .unwrap_or(0.0);
                    if max_w > 100.0 {
                        eprintln!("warning: beamformer weights exceed |w| > 100");
                        warned_big_weights = true;
                    }
                }
            }
            let loss_mean = loss_acc / cfg.batch_size as f64;
            grads.scale(1.0 / cfg.batch_size as f64);
            let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.store, &grads);

            let record = StepRecord {
                step: global_step,
                loss: loss_mean,
                grad_norm,
            };
            writeln!(
                metrics,
                "{}",
                serde_json::to_string(&serde_json::json!({
                    "type": "step",
                    "step": record.step,
                    "loss": record.loss,
                    "grad_norm": record.grad_norm,
                }))?
            )?;
            steps.push(record);
            global_step += 1;
        }

        let val = if val_utts.is_empty() {
            None
        } else {
            Some(validate(&model, &geometry, &val_utts)?)
        };
        writeln!(
            metrics,
            "{}",
            serde_json::to_string(&serde_json::json!({
                "type": "epoch",
                "epoch": epoch,
                "val_si_snr": val,
            }))?
        )?;
        epochs.push(EpochRecord {
            epoch,
            val_si_snr: val,
        });

        let improved = match (val, best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => true, // no validation: keep the latest
        };
        if improved {
            best_val = val.or(best_val);
            since_best = 0;
            checkpoint::save(&model.store, &best_path)?;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if !best_path.exists() {
        checkpoint::save(&model.store, &best_path)?;
    }
    checkpoint::save(&model.store, &out_dir.join("last.ckpt"))?;

    Ok(TrainReport {
        steps,
        epochs,
        best_val_si_snr: best_val,
        checkpoint: best_path,
    })
}
