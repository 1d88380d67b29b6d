//! Training orchestration: masked SGD with momentum, scheduled mask updates,
//! spike-rate tracking, metrics output, and CSR checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{PolicyVariant, RunConfig, SeedDomain, seed_stream, DataSource};
use crate::data::{encode, shuffled_batches, synth_patterns, Dataset, Encoding};
use crate::error::{Error, Result};
use crate::scheduler::{
    apply_update, plan_update, DeathRateSchedule, GrowthPolicy, SparsitySchedule,
};
use crate::snn::{bptt_backward, cross_entropy_with_grad, forward_pass, LifParams};
use crate::sparse::{
    erk_allocate, random_masks, to_csr, write_csr, LayerKind, MaskedLayer,
};
use crate::tensor::Tensor;

/// A trained (or in-training) spiking network.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<MaskedLayer>,
    pub lif: LifParams,
}

impl Model {
    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weight_count()).sum()
    }

    pub fn active_weights(&self) -> usize {
        self.layers.iter().map(|l| l.active_count()).sum()
    }

    pub fn global_sparsity(&self) -> f64 {
        1.0 - self.active_weights() as f64 / self.total_weights() as f64
    }
}

/// SGD with momentum and weight decay, all buffers dense but pinned to zero
/// at inactive positions.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(layers: &[MaskedLayer], lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            learning_rate: lr,
            momentum,
            weight_decay,
            buffers: layers
                .iter()
                .map(|l| Tensor::zeros(l.weights().shape().to_vec()))
                .collect(),
        }
    }

    /// Zeroes momentum at every inactive position of the given layer.
    pub fn repin(&mut self, layer_index: usize, mask: &Tensor) {
        for (b, &m) in self.buffers[layer_index]
            .data_mut()
            .iter_mut()
            .zip(mask.data())
        {
            if m == 0.0 {
                *b = 0.0;
            }
        }
    }
}

/// One masked SGD step:
///   g' = (grad + wd * w) .* M;  buf = momentum * buf + g';  w -= lr * buf.
pub fn masked_sgd_step(
    layer: &mut MaskedLayer,
    grad: &Tensor,
    buffer: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.shape() != layer.weights().shape() {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} vs weights {:?}",
            grad.shape(),
            layer.weights().shape()
        )));
    }
    let mask = layer.mask().clone();
    let n = grad.len();
    let buf = buffer.data_mut();
    let w = layer.weights_mut_masked();
    for i in 0..n {
        let m = mask.data()[i];
        let g = (grad.data()[i] + weight_decay as f32 * w[i]) * m;
        buf[i] = momentum as f32 * buf[i] + g;
        w[i] -= lr as f32 * buf[i];
        if m == 0.0 {
            w[i] = 0.0;
            buf[i] = 0.0;
        }
    }
    Ok(())
}

/// Relative training cost of a sparse run against a dense reference:
/// (R_sparse * density) / R_dense.
pub fn relative_training_cost(r_sparse: f64, sparsity: f64, r_dense: f64) -> Result<f64> {
    if r_dense <= 0.0 {
        return Err(Error::Data(format!(
            "dense spike rate must be positive, got {r_dense}"
        )));
    }
    Ok(r_sparse * (1.0 - sparsity) / r_dense)
}

/// Per-epoch metric record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub iter: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub sparsity: f64,
    pub spike_rate: f64,
    pub rel_cost: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,iter,loss,train_acc,val_acc,sparsity,spike_rate,rel_cost";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for m in &self.epochs {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                m.epoch, m.iter, m.loss, m.train_acc, m.val_acc, m.sparsity, m.spike_rate,
                m.rel_cost
            ));
        }
        out
    }

    pub fn final_val_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |m| m.val_acc)
    }
}

pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub model: Model,
}

fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of argmax readout over the dataset, batched. Ties go to the
/// lowest class index, so the result is invariant to batch partitioning.
pub fn evaluate(model: &Model, dataset: &Dataset, encoding: Encoding, batch_size: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    // Rate-mode evaluation gets its own fixed stream so it is repeatable.
    let mut rng = seed_stream(0, SeedDomain::Encoding);
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let images: Vec<&[f32]> = chunk.iter().map(|&i| dataset.sample(i)).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
        let batch = encode(&images, &labels, encoding, model.lif.timesteps, &mut rng)?;
        let (_, readout) = forward_pass(&model.layers, &model.lif, &batch.spikes_or_currents)?;
        let classes = readout.shape()[1];
        for (b, &label) in labels.iter().enumerate() {
            if argmax_row(&readout.data()[b * classes..(b + 1) * classes]) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let mut rng = seed_stream(cfg.run.seed, SeedDomain::Synth);
            synth_patterns(
                cfg.data.classes,
                cfg.data.features,
                cfg.data.samples_per_class,
                cfg.data.noise,
                &mut rng,
            )
        }
        DataSource::Idx => crate::data::load_idx(
            cfg.data.images.as_ref().unwrap(),
            cfg.data.labels.as_ref().unwrap(),
        ),
    }
}

/// Builds the initial model: ERK allocation at the initial sparsity, random
/// masks, dense init re-masked. Dense policy skips masking entirely.
pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    let lif = LifParams::new(cfg.lif.alpha, cfg.lif.theta, cfg.lif.timesteps)?;
    let kinds = &cfg.network.layers;
    let mut weight_rng = seed_stream(cfg.run.seed, SeedDomain::WeightInit);
    let mut layers: Vec<MaskedLayer> = kinds
        .iter()
        .map(|&k| MaskedLayer::init_dense(k, &mut weight_rng))
        .collect();
    if cfg.policy.variant != PolicyVariant::Dense {
        let init_sparsity = match cfg.policy.variant {
            PolicyVariant::Static => cfg.schedule.theta_f,
            _ => cfg.schedule.theta_i,
        };
        let alloc = erk_allocate(kinds, init_sparsity)?;
        let mut mask_rng = seed_stream(cfg.run.seed, SeedDomain::MaskInit);
        let masks = random_masks(&alloc, kinds, &mut mask_rng)?;
        for (layer, mask) in layers.iter_mut().zip(masks) {
            layer.set_mask(mask)?;
        }
    }
    Ok(Model { layers, lif })
}

/// Runs the full training loop described by the config. Deterministic per
/// config + seed.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let (train_set, val_set) = dataset.split_tail(cfg.data.val_fraction);
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }

    let mut model = build_model(cfg)?;
    let kinds = &cfg.network.layers;
    let mut opt = OptimizerState::new(
        &model.layers,
        cfg.optimizer.learning_rate,
        cfg.optimizer.momentum,
        cfg.optimizer.weight_decay,
    );

    let batches_per_epoch =
        (train_set.len() + cfg.data.batch_size - 1) / cfg.data.batch_size;
    let total_iters = cfg.run.epochs * batches_per_epoch;
    let s = &cfg.schedule;
    let stop_iter = (s.stop_fraction * total_iters as f64).floor() as usize;
    let rounds = if stop_iter > s.t0 {
        (stop_iter - s.t0) / s.delta_t
    } else {
        0
    };

    let sched = if cfg.policy.variant == PolicyVariant::Dense {
        None
    } else {
        let init_alloc = erk_allocate(kinds, s.theta_i)?;
        let final_alloc = erk_allocate(kinds, s.theta_f)?;
        Some(SparsitySchedule::new(
            s.theta_i,
            s.theta_f,
            s.t0,
            s.delta_t,
            rounds,
            init_alloc.per_layer_sparsity(),
            final_alloc.per_layer_sparsity(),
        )?)
    };
    let death_sched = DeathRateSchedule::new(s.d0, s.d_min, s.t0, s.delta_t, rounds)?;
    let policy = cfg.policy.variant.growth().map(|(selection, density)| GrowthPolicy {
        selection,
        density,
    });

    let hidden_neurons: usize = kinds[..kinds.len() - 1]
        .iter()
        .map(|k| match *k {
            LayerKind::Linear { n_out, .. } => n_out,
            LayerKind::Conv { .. } => 0,
        })
        .sum();

    let mut shuffle_rng = seed_stream(cfg.run.seed, SeedDomain::DataShuffle);
    let mut encode_rng = seed_stream(cfg.run.seed, SeedDomain::Encoding);
    let mut growth_rng = seed_stream(cfg.run.seed, SeedDomain::Growth);

    let mut metrics = RunMetrics::default();
    let mut update_log: Vec<String> = Vec::new();
    let mut t: usize = 0;

    for epoch in 0..cfg.run.epochs {
        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        let mut epoch_samples = 0usize;
        let mut spike_sum = 0.0f64;
        let mut spike_slots = 0.0f64;

        for batch_idx in shuffled_batches(train_set.len(), cfg.data.batch_size, &mut shuffle_rng)
        {
            let images: Vec<&[f32]> = batch_idx.iter().map(|&i| train_set.sample(i)).collect();
            let labels: Vec<usize> = batch_idx.iter().map(|&i| train_set.labels[i]).collect();
            let batch = encode(
                &images,
                &labels,
                cfg.data.encoding,
                model.lif.timesteps,
                &mut encode_rng,
            )?;

            let (trace, readout) =
                forward_pass(&model.layers, &model.lif, &batch.spikes_or_currents)?;
            let (loss, readout_grad) = cross_entropy_with_grad(&readout, &labels)?;
            if !loss.is_finite() {
                return Err(Error::State(format!(
                    "loss diverged to {loss} at epoch {epoch}, iteration {t}"
                )));
            }
            let grads = bptt_backward(&trace, &readout_grad, &model.layers, &model.lif)?;

            epoch_loss += loss as f64 * labels.len() as f64;
            let classes = readout.shape()[1];
            for (b, &label) in labels.iter().enumerate() {
                if argmax_row(&readout.data()[b * classes..(b + 1) * classes]) == label {
                    epoch_correct += 1;
                }
            }
            epoch_samples += labels.len();
            for rec in &trace.records {
                spike_sum += rec.spikes.data().iter().map(|&s| s as f64).sum::<f64>();
            }
            spike_slots +=
                (model.lif.timesteps * labels.len() * hidden_neurons) as f64;

            // Cosine-annealed learning rate over the full run.
            let lr = if cfg.optimizer.cosine_lr && total_iters > 1 {
                let frac = t as f64 / total_iters as f64;
                opt.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            } else {
                opt.learning_rate
            };
            for (l, grad) in grads.iter().enumerate() {
                masked_sgd_step(
                    &mut model.layers[l],
                    grad,
                    &mut opt.buffers[l],
                    lr,
                    opt.momentum,
                    opt.weight_decay,
                )?;
            }

            // Drop-and-grow on the update grid, reusing this iteration's
            // dense gradients.
            if let (Some(sched), Some(policy)) = (&sched, &policy) {
                if t > s.t0
                    && (t - s.t0) % s.delta_t == 0
                    && (t - s.t0) / s.delta_t <= sched.n
                {
                    let plan =
                        plan_update(&model.layers, sched, &death_sched, policy, t)?;
                    for row in &plan.layers {
                        let report = apply_update(
                            &mut model.layers[row.layer],
                            row,
                            &grads[row.layer],
                            policy,
                            &mut growth_rng,
                        )?;
                        update_log.push(report.log_line());
                        let mask = model.layers[row.layer].mask().clone();
                        opt.repin(row.layer, &mask);
                    }
                }
            }
            t += 1;
        }

        let spike_rate = if spike_slots > 0.0 {
            spike_sum / spike_slots
        } else {
            0.0
        };
        let sparsity = model.global_sparsity();
        let r_dense = cfg.run.dense_spike_rate_ref.unwrap_or(spike_rate);
        let rel_cost = if r_dense > 0.0 {
            relative_training_cost(spike_rate, sparsity, r_dense)?
        } else {
            0.0
        };
        let val_acc = evaluate(&model, &val_set, cfg.data.encoding, cfg.data.batch_size)?;
        metrics.epochs.push(EpochMetrics {
            epoch,
            iter: t,
            loss: epoch_loss / epoch_samples as f64,
            train_acc: epoch_correct as f64 / epoch_samples as f64,
            val_acc,
            sparsity,
            spike_rate,
            rel_cost,
        });
    }

    if let Some(out_dir) = &cfg.run.out_dir {
        write_outputs(out_dir, cfg, &model, &metrics, &update_log)?;
    }

    Ok(TrainOutcome { metrics, model })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layers: Vec<LayerKind>,
    pub alpha: f32,
    pub theta: f32,
    pub timesteps: usize,
    pub class_count: usize,
    pub files: Vec<String>,
}

/// Writes metrics CSV, JSON summary, the resolved config, the mask-update
/// audit log, and per-layer CSR checkpoints with a manifest.
fn write_outputs(
    out_dir: &Path,
    cfg: &RunConfig,
    model: &Model,
    metrics: &RunMetrics,
    update_log: &[String],
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), metrics.to_csv())?;
    let summary = serde_json::json!({
        "final_val_acc": metrics.final_val_acc(),
        "final_sparsity": model.global_sparsity(),
        "epochs": metrics.epochs.len(),
        "active_weights": model.active_weights(),
        "total_weights": model.total_weights(),
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    fs::write(out_dir.join("updates.log"), update_log.join("\n"))?;
    save_checkpoint(out_dir, model, cfg.data.classes)?;
    Ok(())
}

pub fn save_checkpoint(dir: &Path, model: &Model, class_count: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let name = format!("layer_{i}.csr");
        let mut f = fs::File::create(dir.join(&name))?;
        write_csr(&to_csr(layer), &mut f)?;
        f.flush()?;
        files.push(name);
    }
    let manifest = CheckpointManifest {
        layers: model.layers.iter().map(|l| l.kind()).collect(),
        alpha: model.lif.alpha,
        theta: model.lif.theta,
        timesteps: model.lif.timesteps,
        class_count,
        files,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Format {
                message: format!("bad manifest: {e}"),
                offset: 0,
            })?;
    let mut layers = Vec::new();
    for (kind, name) in manifest.layers.iter().zip(&manifest.files) {
        let mut f = fs::File::open(dir.join(name))?;
        let csr = crate::sparse::read_csr(&mut f)?;
        layers.push(crate::sparse::from_csr(&csr, *kind)?);
    }
    Ok(Model {
        layers,
        lif: LifParams::new(manifest.alpha, manifest.theta, manifest.timesteps)?,
    })
}

/// Validates the per-epoch invariants the trainer promises: masked weights
/// and momentum are zero at inactive positions.
#[cfg(test)]
pub fn check_pinning(model: &Model, opt: &OptimizerState) -> bool {
    model.layers.iter().zip(&opt.buffers).all(|(l, b)| {
        l.mask()
            .data()
            .iter()
            .zip(l.weights().data().iter().zip(b.data()))
            .all(|(&m, (&w, &buf))| m == 1.0 || (w == 0.0 && buf == 0.0))
    })
}
