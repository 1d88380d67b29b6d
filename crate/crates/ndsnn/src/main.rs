use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndsnn::config::{parse_config, RunConfig};
use ndsnn::gradcheck;
use ndsnn::sparse::{memory_footprint_bits, memory_footprint_bits_exact, FootprintParams};
use ndsnn::trainer;
use ndsnn::Result;

#[derive(Parser)]
#[command(name = "ndsnn", about = "Sparse spiking neural network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.out_dir from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per the config file.
    Train(CommonOverrides),
    /// Evaluate a saved checkpoint on the config's dataset.
    Eval {
        #[command(flatten)]
        common: CommonOverrides,
        /// Checkpoint directory written by `train` or `export-csr`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare BPTT gradients against the forward-mode oracle on random nets.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Build the config's initial masked model and write it as CSR files.
    ExportCsr(CommonOverrides),
    /// Memory footprint of a sparse model plus gradients, in bits.
    EstimateMemory {
        /// Total weight count N.
        #[arg(long)]
        n: u64,
        /// Sparsity ratio in [0, 1].
        #[arg(long)]
        sparsity: f64,
        /// Timesteps t.
        #[arg(long)]
        t: f64,
        /// Bits per weight.
        #[arg(long, default_value_t = 32.0)]
        bw: f64,
        /// Bits per index.
        #[arg(long, default_value_t = 32.0)]
        bidx: f64,
        /// Also print the exact form including per-layer row pointers, using
        /// the architecture from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Relative training cost of a sparse run against a dense reference.
    EstimateCost {
        #[arg(long)]
        r_sparse: f64,
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        r_dense: f64,
    },
}

fn load_with_overrides(common: &CommonOverrides) -> Result<RunConfig> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_thread_cap() -> Result<()> {
    // All work is single-threaded today; the cap only needs to be valid.
    if let Ok(v) = std::env::var("NDSNN_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            ndsnn::Error::Config(format!("NDSNN_THREADS must be a positive integer, got {v:?}"))
        })?;
        if n == 0 {
            return Err(ndsnn::Error::Config(
                "NDSNN_THREADS must be at least 1".into(),
            ));
        }
    }
    Ok(())
}

fn run() -> Result<bool> {
    check_thread_cap()?;
    match Cli::parse().command {
        Command::Train(common) => {
            let cfg = load_with_overrides(&common)?;
            let outcome = trainer::train(&cfg)?;
            for m in &outcome.metrics.epochs {
                println!(
                    "epoch={} loss={:.4} train_acc={:.4} val_acc={:.4} sparsity={:.4} spike_rate={:.4} rel_cost={:.4}",
                    m.epoch, m.loss, m.train_acc, m.val_acc, m.sparsity, m.spike_rate, m.rel_cost
                );
            }
            println!(
                "final val_acc={:.4} sparsity={:.4}",
                outcome.metrics.final_val_acc(),
                outcome.model.global_sparsity()
            );
            Ok(true)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_with_overrides(&common)?;
            let model = trainer::load_checkpoint(&checkpoint)?;
            let dataset = match cfg.data.source {
                ndsnn::config::DataSource::Synthetic => {
                    let mut rng = ndsnn::config::seed_stream(
                        cfg.run.seed,
                        ndsnn::config::SeedDomain::Synth,
                    );
                    ndsnn::data::synth_patterns(
                        cfg.data.classes,
                        cfg.data.features,
                        cfg.data.samples_per_class,
                        cfg.data.noise,
                        &mut rng,
                    )?
                }
                ndsnn::config::DataSource::Idx => ndsnn::data::load_idx(
                    cfg.data.images.as_ref().unwrap(),
                    cfg.data.labels.as_ref().unwrap(),
                )?,
            };
            let acc = trainer::evaluate(&model, &dataset, cfg.data.encoding, cfg.data.batch_size)?;
            println!("accuracy={acc:.6}");
            Ok(true)
        }
        Command::Gradcheck {
            cases,
            seed,
            tolerance,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for _ in 0..cases {
                let (net, params, input, readout_grad) = gradcheck::random_case(&mut rng);
                let report =
                    gradcheck::compare_gradients(&net, &params, &input, &readout_grad, 1e-7)?;
                worst = worst.max(report.max_rel_err);
            }
            let pass = worst <= tolerance;
            println!(
                "gradcheck cases={cases} max_rel_err={worst:.3e} tolerance={tolerance:.1e} {}",
                if pass { "PASS" } else { "FAIL" }
            );
            Ok(pass)
        }
        Command::ExportCsr(common) => {
            let cfg = load_with_overrides(&common)?;
            let out = cfg.run.out_dir.clone().ok_or_else(|| {
                ndsnn::Error::Config("export-csr needs --out or run.out_dir".into())
            })?;
            let model = trainer::build_model(&cfg)?;
            trainer::save_checkpoint(&out, &model, cfg.data.classes)?;
            println!(
                "exported {} layers ({} active / {} total weights) to {}",
                model.layers.len(),
                model.active_weights(),
                model.total_weights(),
                out.display()
            );
            Ok(true)
        }
        Command::EstimateMemory {
            n,
            sparsity,
            t,
            bw,
            bidx,
            config,
        } => {
            let p = FootprintParams {
                bits_per_weight: bw,
                bits_per_index: bidx,
                timesteps: t,
                total_weights: n as f64,
                sparsity,
            };
            let approx = memory_footprint_bits(&p);
            if approx.fract() == 0.0 {
                println!("{} bits", approx as u64);
            } else {
                println!("{approx} bits");
            }
            if let Some(path) = config {
                let cfg = parse_config(&path)?;
                let exact = memory_footprint_bits_exact(&p, &cfg.network.layers);
                println!("exact: {exact} bits");
            }
            Ok(true)
        }
        Command::EstimateCost {
            r_sparse,
            sparsity,
            r_dense,
        } => {
            let cost = trainer::relative_training_cost(r_sparse, sparsity, r_dense)?;
            println!("relative_cost={cost}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
