//! Evaluation across the system family and single-utterance separation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use autodiff::Graph;
use ndarray::Array3;
use num_complex::Complex64;
use serde::Serialize;

use crate::beam::{self, ComplexRatioFilter, DIAG_LOAD_DEFAULT};
use crate::dsp::{istft, stft, wav::write_wav_f32, MultiChannelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::model::{BeamformerVariant, MimoModel};
use crate::pipeline::train::{load_utterance, padded_doas, LoadedUtterance};
use crate::pipeline::si_snr;
use crate::sim::corpus::ManifestEntry;
use crate::sim::ArrayGeometry;

/// The evaluable systems: the mixture floor, the masking front end alone,
/// the conventional MVDR on estimated covariances, and the neural
/// beamformer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum System {
    Mixture,
    ConvTasnetStft,
    Mvdr,
    Neural(BeamformerVariant),
}

impl System {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mixture" => Ok(System::Mixture),
            "conv_tasnet_stft" => Ok(System::ConvTasnetStft),
            "mvdr" => Ok(System::Mvdr),
            other => Ok(System::Neural(BeamformerVariant::parse(other)?)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Mixture => "mixture",
            System::ConvTasnetStft => "conv_tasnet_stft",
            System::Mvdr => "mvdr",
            System::Neural(v) => v.name(),
        }
    }

    pub fn all() -> Vec<System> {
        let mut out = vec![System::Mixture, System::ConvTasnetStft, System::Mvdr];
        out.extend(BeamformerVariant::all().into_iter().map(System::Neural));
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemReport {
    pub system: String,
    /// Mean Si-SNR per speaker slot (dB); None where no utterance has that
    /// slot active.
    pub slots: Vec<Option<f64>>,
    pub slot_counts: Vec<usize>,
    /// Pooled mean over all active (utterance, slot) pairs.
    pub average: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: Vec<SystemReport>,
}

impl EvalReport {
    pub fn row(&self, system: &str) -> Option<&SystemReport> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Aligned text table with SPK1/SPK2/SPK3/Ave columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8} {:>8}\n",
            "System/Si-SNR (dB)", "SPK1", "SPK2", "SPK3", "Ave"
        ));
        for row in &self.rows {
            let cell = |v: Option<f64>| match v {
                Some(x) => format!("{x:8.2}"),
                None => format!("{:>8}", "-"),
            };
            out.push_str(&format!(
                "{:<20} {} {} {} {:8.2}\n",
                row.system,
                cell(row.slots.first().copied().flatten()),
                cell(row.slots.get(1).copied().flatten()),
                cell(row.slots.get(2).copied().flatten()),
                row.average
            ));
        }
        out
    }
}

struct SlotAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl SlotAccumulator {
    fn new(slots: usize) -> Self {
        SlotAccumulator {
            sums: vec![0.0; slots],
            counts: vec![0; slots],
        }
    }

    fn add(&mut self, slot: usize, value: f64) {
        self.sums[slot] += value;
        self.counts[slot] += 1;
    }

    fn report(&self, system: &str) -> SystemReport {
        let slots: Vec<Option<f64>> = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
            .collect();
        let total: f64 = self.sums.iter().sum();
        let count: usize = self.counts.iter().sum();
        SystemReport {
            system: system.to_string(),
            slots,
            slot_counts: self.counts.clone(),
            average: if count > 0 { total / count as f64 } else { 0.0 },
        }
    }
}

fn mono_spec(data: ndarray::Array2<Complex64>, template: &MultiChannelSpectrogram) -> MultiChannelSpectrogram {
    let (t_len, bins) = (data.nrows(), data.ncols());
    let mut out = Array3::<Complex64>::zeros((t_len, bins, 1));
    for t in 0..t_len {
        for f in 0..bins {
            out[[t, f, 0]] = data[[t, f]];
        }
    }
    MultiChannelSpectrogram {
        data: out,
        config: template.config,
        num_samples: template.num_samples,
    }
}

fn synthesize_mono(
    spec_tf: ndarray::Array2<Complex64>,
    template: &MultiChannelSpectrogram,
) -> Result<Vec<f64>> {
    let wave = istft(&mono_spec(spec_tf, template))?;
    Ok(wave.channel(0))
}

/// Per-utterance separated estimates from the trained model (neural path).
fn neural_estimates(
    model: &MimoModel,
    spec: &MultiChannelSpectrogram,
    stack: &FeatureStack,
) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    g.set_grad_enabled(false);
    let nodes = model.forward_graph(&mut g, spec, stack)?;
    Ok(nodes
        .est_waves
        .iter()
        .map(|id| g.value(*id).data().to_vec())
        .collect())
}

/// Speech/noise filter estimates for the baseline systems.
fn estimate_crfs(
    model: &MimoModel,
    stack: &FeatureStack,
) -> Result<(Vec<ComplexRatioFilter>, Vec<ComplexRatioFilter>)> {
    let mut g = Graph::new();
    g.set_grad_enabled(false);
    let feats = crate::model::build_slot_features(stack);
    let mut speech = Vec::new();
    let mut noise = Vec::new();
    for f in &feats {
        let node = g.constant(autodiff::Tensor::from_vec(
            &[f.nrows(), f.ncols()],
            f.iter().cloned().collect(),
        )?);
        let (s, n) = model.estimator.forward_slot(&mut g, &model.store, node)?;
        speech.push(model.tensor_to_crf(&g, s)?);
        noise.push(model.tensor_to_crf(&g, n)?);
    }
    Ok((speech, noise))
}

pub struct EvalInputs<'a> {
    pub manifest: &'a [ManifestEntry],
    pub geometry: &'a ArrayGeometry,
    /// Checkpointed models per neural variant.
    pub models: &'a HashMap<BeamformerVariant, MimoModel>,
    /// Model whose estimator feeds the conv-tasnet and MVDR baselines.
    pub estimator_source: Option<&'a MimoModel>,
}

/// Evaluate the requested systems over a test manifest. Slots are ordered by
/// ascending DOA (the manifest convention); per-slot means use only
/// utterances where the slot is active.
pub fn evaluate(inputs: &EvalInputs, systems: &[System]) -> Result<EvalReport> {
    for sys in systems {
        match sys {
            System::Neural(v) => {
                if !inputs.models.contains_key(v) {
                    return Err(Error::config(format!(
                        "missing checkpoint for neural system `{}`",
                        v.name()
                    )));
                }
            }
            System::ConvTasnetStft | System::Mvdr => {
                if inputs.estimator_source.is_none() {
                    return Err(Error::config(format!(
                        "system `{}` needs an estimator checkpoint",
                        sys.name()
                    )));
                }
            }
            System::Mixture => {}
        }
    }
    let slots_max = crate::sim::MAX_SPEAKERS;
    let mut acc: HashMap<&'static str, SlotAccumulator> = systems
        .iter()
        .map(|s| (s.name(), SlotAccumulator::new(slots_max)))
        .collect();

    for entry in inputs.manifest {
        let utt = load_utterance(entry)?;
        let refs_ch0: Vec<Vec<f64>> = utt.refs.iter().map(|r| r.channel(0)).collect();
        let spec = stft(&utt.mixture, &utt_spec_config(inputs, &utt)?)?;

        // One feature stack per distinct model slot count.
        let mut stacks: HashMap<usize, FeatureStack> = HashMap::new();
        let mut stack_for = |slots: usize| -> Result<FeatureStack> {
            if let Some(s) = stacks.get(&slots) {
                return Ok(s.clone());
            }
            let doas = padded_doas(&utt.doas, slots);
            let s = FeatureStack::compute(&spec, inputs.geometry, &doas, 343.0)?;
            stacks.insert(slots, s.clone());
            Ok(s)
        };

        for sys in systems {
            let estimates: Vec<Vec<f64>> = match sys {
                System::Mixture => {
                    let ch0 = utt.mixture.channel(0);
                    (0..utt.refs.len()).map(|_| ch0.clone()).collect()
                }
                System::ConvTasnetStft => {
                    let model = inputs.estimator_source.unwrap();
                    let stack = stack_for(model.speakers)?;
                    let (crf_s, _) = estimate_crfs(model, &stack)?;
                    let mut out = Vec::new();
                    for crf in crf_s.iter().take(utt.refs.len()) {
                        let crm = crf.center_mask();
                        let (t_len, bins) = (spec.frames(), spec.bins());
                        let mut est = ndarray::Array2::<Complex64>::zeros((t_len, bins));
                        for t in 0..t_len {
                            for f in 0..bins {
                                est[[t, f]] = crm[[t, f, 0]] * spec.data[[t, f, 0]];
                            }
                        }
                        out.push(synthesize_mono(est, &spec)?);
                    }
                    out
                }
                System::Mvdr => {
                    let model = inputs.estimator_source.unwrap();
                    let stack = stack_for(model.speakers)?;
                    let (crf_s, crf_n) = estimate_crfs(model, &stack)?;
                    let mut out = Vec::new();
                    for slot in 0..utt.refs.len() {
                        let s_hat = beam::apply_crf(&spec, &crf_s[slot])?;
                        let n_hat = beam::apply_crf(&spec, &crf_n[slot])?;
                        let phi_s = beam::covariance(&s_hat, &crf_s[slot].center_mask())?;
                        let phi_n = beam::covariance(&n_hat, &crf_n[slot].center_mask())?;
                        let res = beam::mvdr_weights(&phi_s, &phi_n, 0, DIAG_LOAD_DEFAULT)?;
                        let separated = beam::apply_beamformer(&res.weights, &spec)?;
                        let (t_len, bins) = (spec.frames(), spec.bins());
                        let mut est = ndarray::Array2::<Complex64>::zeros((t_len, bins));
                        for t in 0..t_len {
                            for f in 0..bins {
                                est[[t, f]] = separated[[t, f, 0]];
                            }
                        }
                        out.push(synthesize_mono(est, &spec)?);
                    }
                    out
                }
                System::Neural(v) => {
                    let model = &inputs.models[v];
                    let stack = stack_for(model.speakers)?;
                    neural_estimates(model, &spec, &stack)?
                }
            };
            let slot_acc = acc.get_mut(sys.name()).expect("accumulator");
            for (slot, reference) in refs_ch0.iter().enumerate() {
                if slot < estimates.len() {
                    slot_acc.add(slot, si_snr(&estimates[slot], reference)?);
                }
            }
        }
    }

    Ok(EvalReport {
        rows: systems
            .iter()
            .map(|s| acc[s.name()].report(s.name()))
            .collect(),
    })
}

fn utt_spec_config(
    inputs: &EvalInputs,
    _utt: &LoadedUtterance,
) -> Result<crate::dsp::StftConfig> {
    // All models in one evaluation share the STFT front end.
    if let Some(m) = inputs.estimator_source {
        return Ok(m.stft);
    }
    if let Some(m) = inputs.models.values().next() {
        return Ok(m.stft);
    }
    Ok(crate::dsp::StftConfig::default())
}

/// Separate one multi-channel recording towards the given DOAs; returns one
/// mono estimate per requested DOA, in request order.
pub fn separate(
    model: &MimoModel,
    geometry: &ArrayGeometry,
    input: &Waveform,
    doas_deg: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if input.channels() != model.mics {
        return Err(Error::input(format!(
            "input has {} channels, model expects {}",
            input.channels(),
            model.mics
        )));
    }
    if doas_deg.is_empty() || doas_deg.len() > model.speakers {
        return Err(Error::input(format!(
            "need between 1 and {} DOAs, got {}",
            model.speakers,
            doas_deg.len()
        )));
    }
    for &d in doas_deg {
        if !(0.0..=180.0).contains(&d) {
            return Err(Error::input(format!("DOA {d} outside [0, 180]")));
        }
    }
    // Slots are ordered by ascending DOA; remember the request order.
    let mut order: Vec<usize> = (0..doas_deg.len()).collect();
    order.sort_by(|&a, &b| doas_deg[a].partial_cmp(&doas_deg[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| doas_deg[i]).collect();

    let spec = stft(input, &model.stft)?;
    let doas = padded_doas(&sorted, model.speakers);
    let stack = FeatureStack::compute(&spec, geometry, &doas, 343.0)?;
    let estimates = neural_estimates(model, &spec, &stack)?;

    let mut out = vec![Vec::new(); doas_deg.len()];
    for (sorted_slot, &request_idx) in order.iter().enumerate() {
        out[request_idx] = estimates[sorted_slot].clone();
    }
    Ok(out)
}

/// CLI wrapper around [`separate`]: writes one mono WAV per requested DOA.
pub fn separate_to_files(
    model: &MimoModel,
    geometry: &ArrayGeometry,
    input_path: &Path,
    doas_deg: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let input = crate::dsp::wav::read_wav(input_path)?;
    let estimates = separate(model, geometry, &input, doas_deg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for (i, (est, &doa)) in estimates.iter().zip(doas_deg).enumerate() {
        let path = out_dir.join(format!("separated_{i}_doa{doa:.0}.wav"));
        let wave = Waveform::from_mono(est.clone(), input.sample_rate)?;
        write_wav_f32(&path, &wave)?;
        paths.push(path);
    }
    Ok(paths)
}
