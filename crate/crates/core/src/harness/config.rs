use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{MethodKind, MethodSettings};
use crate::data::{
    generate_blobs, generate_signals, load_signal_dataset, LabeledDataset, SignalLayout,
    SignalSpec, Split,
};
use crate::editing::PteConfig;
use crate::error::{PteError, Result};
use crate::evaluation::AttackConfig;
use crate::model::{Architecture, TrainConfig};
use crate::probing::ProbeConfig;

/// Where the experiment's train/test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian clusters on a circle; regenerated from the repeat seed.
    Blobs {
        classes: usize,
        n_per_class: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        separation: f64,
    },
    /// Multi-harmonic synthetic vibration signals; regenerated from the repeat seed.
    Signals {
        classes: usize,
        n_per_class: usize,
        channels: usize,
        length: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Raw `f32` recordings listed in a manifest, windowed on load. The same
    /// files are used for every repeat.
    Files {
        train: PathBuf,
        test: PathBuf,
        channels: usize,
        window: usize,
        stride: usize,
        labels: Vec<String>,
    },
}

fn default_blob_dim() -> usize {
    2
}

fn default_noise() -> f64 {
    0.3
}

impl DatasetSpec {
    pub fn classes(&self) -> usize {
        match self {
            DatasetSpec::Blobs { classes, .. } | DatasetSpec::Signals { classes, .. } => *classes,
            DatasetSpec::Files { labels, .. } => labels.len(),
        }
    }

    /// `(train, test)` for one repeat. Relative file paths resolve against `base`.
    pub fn build(&self, seed: u64, base: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Blobs {
                classes,
                n_per_class,
                dim,
                separation,
            } => generate_blobs(*classes, *n_per_class, *dim, *separation, seed),
            DatasetSpec::Signals {
                classes,
                n_per_class,
                channels,
                length,
                noise,
            } => {
                let mut spec = SignalSpec::new(*classes, *n_per_class, *channels, *length);
                spec.noise = *noise;
                generate_signals(&spec, seed)
            }
            DatasetSpec::Files {
                train,
                test,
                channels,
                window,
                stride,
                labels,
            } => {
                let layout = |split| SignalLayout {
                    channels: *channels,
                    window: *window,
                    stride: *stride,
                    labels: labels.clone(),
                    split,
                };
                Ok((
                    load_signal_dataset(&base.join(train), &layout(Split::Train))?,
                    load_signal_dataset(&base.join(test), &layout(Split::Test))?,
                ))
            }
        }
    }
}

fn default_repeats() -> usize {
    1
}

fn default_methods() -> Vec<MethodKind> {
    vec![MethodKind::Pte]
}

fn default_cap() -> f64 {
    50.0
}

/// One experiment: data, model, forget classes, methods and their settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetSpec,
    /// e.g. `mlp(2,64,64)` or `cnn1d(2,1024)`.
    pub architecture: String,
    pub forget_classes: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodKind>,
    /// Training of the original model.
    pub train: TrainConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub pte: PteConfig,
    /// Settings of the training-based baselines.
    #[serde(default)]
    pub baseline: TrainConfig,
    #[serde(default = "default_cap")]
    pub ascent_loss_cap: f64,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed_base: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PteError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config. A relative `output_dir` or data path is taken
    /// relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PteError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| PteError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let DatasetSpec::Files { train, test, .. } = &mut cfg.dataset {
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(PteError::Config("repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(PteError::Config("no methods configured".into()));
        }
        let arch = self.arch()?;
        if arch.input_shape().iter().product::<usize>() == 0 {
            return Err(PteError::Config("architecture has an empty input".into()));
        }
        crate::data::normalize_forget_classes(&self.forget_classes, self.dataset.classes())
            .map_err(|e| PteError::Config(e.to_string()))?;
        self.train.validate()?;
        self.baseline.validate()?;
        self.probe.validate()?;
        self.pte.validate()?;
        Ok(())
    }

    pub fn arch(&self) -> Result<Architecture> {
        self.architecture.parse()
    }

    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            probe: self.probe.clone(),
            pte: self.pte.clone(),
            baseline: self.baseline.clone(),
            ascent_loss_cap: self.ascent_loss_cap,
        }
    }

    /// Canonical serialization: JSON with fields in declaration order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Identifies the data and evaluation target: dataset, architecture and
    /// forget classes. Runs are only comparable when these agree.
    pub fn data_signature(&self) -> String {
        let mut cf = self.forget_classes.clone();
        cf.sort_unstable();
        cf.dedup();
        let key = serde_json::json!({
            "dataset": self.dataset,
            "architecture": self.architecture,
            "forget_classes": cf,
            "seed_base": self.seed_base,
            "repeats": self.repeats,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    /// Everything that determines the original model of a repeat.
    pub(crate) fn original_model_key(&self) -> String {
        let key = serde_json::json!({
            "dataset": self.dataset,
            "architecture": self.architecture,
            "train": self.train,
        });
        sha256_hex(key.to_string().as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
architecture = "mlp(2,16)"
forget_classes = [0]
output_dir = "out"

[dataset]
kind = "blobs"
classes = 3
n_per_class = 20
separation = 5.0

[train]
epochs = 2
learning_rate = 0.05
batch_size = 16
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.methods, vec![MethodKind::Pte]);
        assert_eq!(cfg.pte, PteConfig::default());
        assert_eq!(cfg.hash(), cfg.clone().hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = format!("{MINIMAL}\n[pte]\nepochs = 3\neta_push = 0.1\neta_pull = 0.01\ntemperature = 2.0\nbogus = 1\n");
        assert!(matches!(
            ExperimentConfig::from_toml(&unknown),
            Err(PteError::Config(_))
        ));
        let zero = MINIMAL.replace("forget_classes = [0]", "forget_classes = [0]\nrepeats = 0");
        assert!(matches!(
            ExperimentConfig::from_toml(&zero),
            Err(PteError::Config(_))
        ));
        let all = MINIMAL.replace("[0]", "[0, 1, 2]");
        assert!(matches!(
            ExperimentConfig::from_toml(&all),
            Err(PteError::Config(_))
        ));
        let method = MINIMAL.replace(
            "forget_classes = [0]",
            "forget_classes = [0]\nmethods = [\"scrub\"]",
        );
        assert!(matches!(
            ExperimentConfig::from_toml(&method),
            Err(PteError::Config(_))
        ));
    }

    #[test]
    fn hash_tracks_every_setting() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.pte.eta_push *= 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.data_signature(), b.data_signature());
        b.forget_classes = vec![1];
        assert_ne!(a.data_signature(), b.data_signature());
    }
}
