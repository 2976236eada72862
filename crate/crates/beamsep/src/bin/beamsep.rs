//! Command-line front end: corpus simulation, training, evaluation,
//! separation, and the finite-difference gradient suite.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 numeric failure.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beamsep::error::Error;
use beamsep::model::BeamformerVariant;
use beamsep::pipeline::config::RunConfig;
use beamsep::pipeline::eval::{evaluate, separate_to_files, EvalInputs, System};
use beamsep::pipeline::train::{load_model_dir, train};
use beamsep::sim::corpus::{generate_corpus, read_manifest};
use beamsep::sim::ArrayGeometry;

#[derive(Parser)]
#[command(name = "beamsep", about = "Multi-channel speech separation toolkit")]
struct Cli {
    /// Run configuration JSON; defaults apply for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-channel corpus with a JSONL manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a corpus manifest.
    Train {
        /// Training manifest (manifest.jsonl of a simulated corpus).
        #[arg(long)]
        manifest: PathBuf,
        /// Optional validation manifest for early stopping.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate systems on a test manifest and print the Si-SNR table.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Model directories (model.json + best.ckpt), one per neural system.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Comma-separated systems; defaults to everything evaluable.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        /// Write the machine-readable report here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Separate one multi-channel WAV towards the given DOAs.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated DOAs in degrees.
        #[arg(long, value_delimiter = ',')]
        doas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite and report per-op results.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Simulate { out, n_utts, seed } => {
            let entries = generate_corpus(&config.recipe, n_utts, seed, &out)?;
            println!(
                "wrote {} utterances and {} to {}",
                entries.len(),
                "manifest.jsonl",
                out.display()
            );
            Ok(())
        }
        Command::Train {
            manifest,
            val_manifest,
            out,
        } => {
            let train_entries = read_manifest(&manifest)?;
            let val_entries = match &val_manifest {
                Some(p) => read_manifest(p)?,
                None => Vec::new(),
            };
            let report = train(&config, &train_entries, &val_entries, &out)?;
            println!(
                "trained {} steps; best validation Si-SNR: {}",
                report.steps.len(),
                report
                    .best_val_si_snr
                    .map(|v| format!("{v:.2} dB"))
                    .unwrap_or_else(|| "n/a".into())
            );
            println!("checkpoint: {}", report.checkpoint.display());
            Ok(())
        }
        Command::Evaluate {
            manifest,
            models,
            systems,
            report,
        } => {
            let entries = read_manifest(&manifest)?;
            let mut loaded = HashMap::new();
            let mut first: Option<BeamformerVariant> = None;
            for dir in &models {
                let model = load_model_dir(dir)?;
                let variant = model.beamformer.cfg.variant;
                first.get_or_insert(variant);
                loaded.insert(variant, model);
            }
            let systems: Vec<System> = if systems.is_empty() {
                let mut s = vec![System::Mixture];
                if !loaded.is_empty() {
                    s.push(System::ConvTasnetStft);
                    s.push(System::Mvdr);
                    s.extend(loaded.keys().map(|v| System::Neural(*v)));
                }
                s
            } else {
                systems
                    .iter()
                    .map(|s| System::parse(s))
                    .collect::<Result<_, _>>()?
            };
            let geometry = ArrayGeometry::linear_x(&config.recipe.array_x, [0.0, 0.0, 0.0]);
            let estimator_source = first.and_then(|v| loaded.get(&v));
            let result = evaluate(
                &EvalInputs {
                    manifest: &entries,
                    geometry: &geometry,
                    models: &loaded,
                    estimator_source,
                },
                &systems,
            )?;
            print!("{}", result.to_table());
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Separate {
            model,
            input,
            doas,
            out,
        } => {
            let model = load_model_dir(&model)?;
            let geometry = ArrayGeometry::linear_x(&config.recipe.array_x, [0.0, 0.0, 0.0]);
            let paths = separate_to_files(&model, &geometry, &input, &doas, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Gradcheck => gradcheck(),
    }
}

/// Finite-difference checks over the domain-specific differentiable ops,
/// mirroring the in-tree test suite for interactive use.
fn gradcheck() -> Result<(), Error> {
    use autodiff::{check_gradients, Graph, NodeId, Tensor, FD_STEP};
    use beamsep::model::diffops::{BeamformOp, CovarianceOp, CrfApplyOp, IstftOp, SiSnrOp};
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    let mut failures = 0;
    let mut check = |name: &str,
                     inputs: Vec<Tensor>,
                     build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
        let out_shape = {
            let mut g = Graph::new();
            let ids: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let y = build(&mut g, &ids);
            g.shape(y).to_vec()
        };
        let n: usize = out_shape.iter().product();
        let readout =
            Tensor::from_vec(&out_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        let analytic: Vec<Tensor> = {
            let mut g = Graph::new();
            let ids: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let y = build(&mut g, &ids);
            let r = g.constant(readout.clone());
            let p = g.mul(y, r).unwrap();
            let loss = g.sum_all(p).unwrap();
            g.backward(loss).unwrap();
            ids.iter()
                .zip(&inputs)
                .map(|(id, t)| {
                    g.grad(*id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(t.shape()))
                })
                .collect()
        };
        let mut eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let ids: Vec<_> = ts.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let y = build(&mut g, &ids);
            let r = g.constant(readout.clone());
            let p = g.mul(y, r).unwrap();
            let loss = g.sum_all(p).unwrap();
            g.value(loss).item()
        };
        let report = check_gradients(&mut eval, &inputs, &analytic, 6, FD_STEP, 99);
        let pass = report.max_rel_err < 1e-4;
        println!(
            "{} {name}: max rel err {:.3e} over {} probes",
            if pass { "PASS" } else { "FAIL" },
            report.max_rel_err,
            report.probes
        );
        if !pass {
            failures += 1;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rand_t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let (t_len, bins, m) = (3, 4, 2);
    let mut spec = Array3::<Complex64>::zeros((t_len, bins, m));
    for v in spec.iter_mut() {
        *v = Complex64::new(rand::random::<f64>() - 0.5, rand::random::<f64>() - 0.5);
    }
    let y = Arc::new(spec);

    let taps = rand_t(&[t_len, bins, m, 9, 2]);
    let yc = Arc::clone(&y);
    check("crf_apply", vec![taps], &move |g, ids| {
        let op = CrfApplyOp {
            y: Arc::clone(&yc),
            context: 1,
        };
        let out = op.forward(g.value(ids[0])).unwrap();
        g.custom(Box::new(op), &[ids[0]], out).unwrap()
    });

    let s_hat = rand_t(&[t_len, bins, m, 2]);
    let crm = rand_t(&[t_len, bins, m, 2]);
    check("covariance", vec![s_hat, crm], &|g, ids| {
        let op = CovarianceOp { floor: 1e-10 };
        let out = op.forward(g.value(ids[0]), g.value(ids[1])).unwrap();
        g.custom(Box::new(op), &[ids[0], ids[1]], out).unwrap()
    });

    let w1 = rand_t(&[t_len, bins, m, 2]);
    let w2 = rand_t(&[t_len, bins, m, 2]);
    let yc = Arc::clone(&y);
    check("beamform", vec![w1, w2], &move |g, ids| {
        let op = BeamformOp { y: Arc::clone(&yc) };
        let out = op.forward(&[g.value(ids[0]), g.value(ids[1])]).unwrap();
        g.custom(Box::new(op), &[ids[0], ids[1]], out).unwrap()
    });

    let cfg = beamsep::dsp::StftConfig {
        fft_size: 32,
        hop: 16,
        ..Default::default()
    };
    let frames = 5;
    let spec_t = rand_t(&[frames, cfg.bins(), 2]);
    check("istft", vec![spec_t], &move |g, ids| {
        let op = IstftOp {
            config: cfg,
            frames,
            out_len: (frames - 1) * cfg.hop,
        };
        let out = op.forward(g.value(ids[0])).unwrap();
        g.custom(Box::new(op), &[ids[0]], out).unwrap()
    });

    let reference: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.3).sin()).collect();
    let est = rand_t(&[64]);
    check("si_snr", vec![est], &move |g, ids| {
        let op = SiSnrOp::new(&reference, 1e-8).unwrap();
        let out = op.forward(g.value(ids[0])).unwrap();
        g.custom(Box::new(op), &[ids[0]], out).unwrap()
    });

    if failures > 0 {
        Err(Error::numeric(format!("{failures} gradient checks failed")))
    } else {
        println!("all gradient checks passed");
        Ok(())
    }
}
