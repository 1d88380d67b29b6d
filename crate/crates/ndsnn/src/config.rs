//! Run configuration: TOML parsing, defaults, cross-field validation, and
//! deterministic seed streams for the independent stochastic components.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Encoding;
use crate::error::{Error, Result};
use crate::scheduler::{DensityMode, GrowthSelection};
use crate::sparse::LayerKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: Vec<LayerKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifConfig {
    pub alpha: f32,
    pub theta: f32,
    pub timesteps: usize,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            alpha: 0.5,
            theta: 1.0,
            timesteps: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub theta_i: f64,
    pub theta_f: f64,
    pub delta_t: usize,
    pub t0: usize,
    pub d0: f64,
    pub d_min: f64,
    /// Mask updates stop at this fraction of total iterations.
    pub stop_fraction: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            theta_i: 0.8,
            theta_f: 0.9,
            delta_t: 100,
            t0: 0,
            d0: 0.5,
            d_min: 0.05,
            stop_fraction: 0.75,
        }
    }
}

/// Which training regime runs: decreasing-density drop-and-grow (the
/// default), the constant-density baselines, a never-updated static mask,
/// or fully dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyVariant {
    Ndsnn,
    Rigl,
    Set,
    Static,
    Dense,
}

impl PolicyVariant {
    pub fn growth(self) -> Option<(GrowthSelection, DensityMode)> {
        match self {
            PolicyVariant::Ndsnn => Some((GrowthSelection::GradientTopK, DensityMode::Decaying)),
            PolicyVariant::Rigl => Some((GrowthSelection::GradientTopK, DensityMode::Constant)),
            PolicyVariant::Set => Some((GrowthSelection::UniformRandom, DensityMode::Constant)),
            PolicyVariant::Static | PolicyVariant::Dense => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub variant: PolicyVariant,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            variant: PolicyVariant::Ndsnn,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub cosine_lr: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            cosine_lr: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_classes() -> usize {
    4
}
fn default_features() -> usize {
    64
}
fn default_samples_per_class() -> usize {
    128
}
fn default_noise() -> f64 {
    0.05
}
fn default_encoding() -> Encoding {
    Encoding::Direct
}
fn default_batch_size() -> usize {
    128
}
fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Reference dense spike rate for the relative-cost metric; when absent
    /// the run's own spike rate is used, making the cost track density.
    pub dense_spike_rate_ref: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            epochs: 20,
            seed: 42,
            out_dir: None,
            dense_spike_rate_ref: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub lif: LifConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    /// Full cross-field validation; every failure names the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.network.layers.is_empty() {
            return Err(Error::Config("network.layers must not be empty".into()));
        }
        let mut expected: Option<usize> = None;
        for (i, kind) in self.network.layers.iter().enumerate() {
            let n_in = match *kind {
                LayerKind::Linear { n_in, .. } => n_in,
                LayerKind::Conv { .. } => {
                    return Err(Error::Config(format!(
                        "network.layers[{i}]: conv layers are not trainable in this engine"
                    )))
                }
            };
            if let Some(e) = expected {
                if n_in != e {
                    return Err(Error::Config(format!(
                        "network.layers[{i}]: expects {n_in} inputs but previous layer emits {e}"
                    )));
                }
            }
            expected = Some(match *kind {
                LayerKind::Linear { n_out, .. } => n_out,
                LayerKind::Conv { .. } => unreachable!(),
            });
        }

        let s = &self.schedule;
        if s.theta_i > s.theta_f {
            return Err(Error::Config(
                "schedule.theta_i must not exceed theta_f".into(),
            ));
        }
        if !(0.0..1.0).contains(&s.theta_i) || !(0.0..1.0).contains(&s.theta_f) {
            return Err(Error::Config(
                "schedule.theta_i and theta_f must be in [0, 1)".into(),
            ));
        }
        if s.delta_t < 1 {
            return Err(Error::Config("schedule.delta_t must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&s.d0) || !(0.0..=1.0).contains(&s.d_min) || s.d_min > s.d0 {
            return Err(Error::Config(
                "schedule.d0/d_min must satisfy 0 <= d_min <= d0 <= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s.stop_fraction) {
            return Err(Error::Config(
                "schedule.stop_fraction must be in [0, 1]".into(),
            ));
        }
        match self.policy.variant {
            PolicyVariant::Rigl | PolicyVariant::Set | PolicyVariant::Static => {
                if (s.theta_i - s.theta_f).abs() > 1e-12 {
                    return Err(Error::Config(
                        "schedule.theta_i must equal theta_f for constant-density policies"
                            .into(),
                    ));
                }
            }
            PolicyVariant::Ndsnn | PolicyVariant::Dense => {}
        }

        if self.optimizer.learning_rate < 0.0 {
            return Err(Error::Config(
                "optimizer.learning_rate must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(Error::Config("optimizer.momentum must be in [0, 1)".into()));
        }

        let d = &self.data;
        match d.source {
            DataSource::Idx => {
                if d.images.is_none() || d.labels.is_none() {
                    return Err(Error::Config(
                        "data.images and data.labels are required for source = \"idx\"".into(),
                    ));
                }
            }
            DataSource::Synthetic => {
                if d.classes == 0 || d.classes > d.features {
                    return Err(Error::Config(
                        "data.classes must satisfy 1 <= classes <= features".into(),
                    ));
                }
                if !(0.0..=1.0).contains(&d.noise) {
                    return Err(Error::Config("data.noise must be in [0, 1]".into()));
                }
            }
        }
        if d.batch_size == 0 {
            return Err(Error::Config("data.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&d.val_fraction) {
            return Err(Error::Config("data.val_fraction must be in [0, 1)".into()));
        }
        if self.run.epochs == 0 {
            return Err(Error::Config("run.epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config file, filling all defaults. Unknown keys
/// are rejected with the key name.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Independent RNG streams derived from one run seed, so toggling one
/// stochastic component does not perturb the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedDomain {
    WeightInit,
    MaskInit,
    DataShuffle,
    Encoding,
    Growth,
    Synth,
}

pub fn seed_stream(seed: u64, domain: SeedDomain) -> ChaCha8Rng {
    let tag: u64 = match domain {
        SeedDomain::WeightInit => 0x5745_4947,
        SeedDomain::MaskInit => 0x4d41_534b,
        SeedDomain::DataShuffle => 0x5348_5546,
        SeedDomain::Encoding => 0x454e_434f,
        SeedDomain::Growth => 0x4752_4f57,
        SeedDomain::Synth => 0x5359_4e54,
    };
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[network]
layers = [
  { kind = "linear", n_in = 64, n_out = 32 },
  { kind = "linear", n_in = 32, n_out = 4 },
]

[data]
source = "synthetic"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.lif.timesteps, 5);
        assert_eq!(cfg.optimizer.momentum, 0.9);
        assert_eq!(cfg.optimizer.weight_decay, 5e-4);
        assert_eq!(cfg.data.batch_size, 128);
        assert_eq!(cfg.policy.variant, PolicyVariant::Ndsnn);
    }

    #[test]
    fn theta_order_is_enforced() {
        let text = format!("{MINIMAL}\n[schedule]\ntheta_i = 0.9\ntheta_f = 0.8\n");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("theta_i must not exceed theta_f"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = format!("{MINIMAL}\n[optimizer]\nmomntum = 0.9\n");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("momntum"), "{err}");
    }

    #[test]
    fn layer_chain_mismatch_names_layer() {
        let text = r#"
[network]
layers = [
  { kind = "linear", n_in = 64, n_out = 32 },
  { kind = "linear", n_in = 16, n_out = 4 },
]
[data]
source = "synthetic"
"#;
        let err = parse_config_str(text).unwrap_err().to_string();
        assert!(err.contains("layers[1]"), "{err}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let echoed = cfg.to_toml();
        let back = parse_config_str(&echoed).unwrap();
        assert_eq!(cfg.to_toml(), back.to_toml());
    }

    #[test]
    fn seed_streams_are_independent_and_stable() {
        use rand::RngCore;
        let mut a = seed_stream(7, SeedDomain::MaskInit);
        let mut b = seed_stream(7, SeedDomain::Growth);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a2 = seed_stream(7, SeedDomain::MaskInit);
        let mut a3 = seed_stream(7, SeedDomain::MaskInit);
        assert_eq!(a2.next_u64(), a3.next_u64());
    }
}
