//! Run configuration: a TOML document with documented defaults. Unknown keys
//! are rejected, and cross-field constraints are checked by
//! [`RunConfig::validate`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::ClientConfig;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dual class-aware contrastive training with authentication-weighted aggregation.
    Dccfssl,
    /// Supervised FedAvg over the labeled clients only.
    FedavgSlLower,
    /// Supervised FedAvg with every client's labels revealed.
    FedavgSlUpper,
    /// FedAvg with pseudo-label consistency on unlabeled clients.
    FedavgFixmatch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dccfssl => "dccfssl",
            Method::FedavgSlLower => "fedavg-sl-lower",
            Method::FedavgSlUpper => "fedavg-sl-upper",
            Method::FedavgFixmatch => "fedavg-fixmatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Synthetic Gaussian blobs.
    Blobs,
    /// `label,f1,...` text files.
    Text,
    /// CIFAR-10 binary batch files.
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    /// Training files for `text` and `cifar10`, concatenated in order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub train_paths: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            num_classes: 10,
            dim: 16,
            train_per_class: 500,
            test_per_class: 100,
            spread: 1.0,
            train_paths: Vec::new(),
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    /// Dirichlet concentration; ignored for `iid`.
    pub gamma: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            kind: PartitionKind::Dirichlet,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub normalize_repr: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            repr_dim: 32,
            normalize_repr: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub rounds: usize,
    pub num_clients: usize,
    pub labeled_fraction: f64,
    pub clients_per_round: usize,
    pub warmup_fraction: f64,
    /// Trailing fraction of rounds used for the stability statistic.
    pub stability_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub client: ClientConfig,
    pub loss: LossHyper,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Dccfssl,
            rounds: 200,
            num_clients: 50,
            labeled_fraction: 0.1,
            clients_per_round: 20,
            warmup_fraction: 0.5,
            stability_fraction: 0.25,
            out_dir: None,
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            client: ClientConfig::default(),
            loss: LossHyper::default(),
            augment: AugmentConfig::default(),
        }
    }
}

fn toml_error(source_name: &str, err: toml::de::Error) -> Error {
    let message = err.message().to_string();
    // Unknown keys and type mismatches name the offending field in the message.
    let field = message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| source_name.to_string());
    let location = err
        .span()
        .map(|s| format!(" (byte {})", s.start))
        .unwrap_or_default();
    Error::config(field, format!("{message}{location}"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::config(
                "clients_per_round",
                format!(
                    "{} is outside 1..={}",
                    self.clients_per_round, self.num_clients
                ),
            ));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::config("labeled_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1]"));
        }
        if !(self.stability_fraction > 0.0 && self.stability_fraction <= 1.0) {
            return Err(Error::config("stability_fraction", "must lie in (0, 1]"));
        }
        if self.partition.kind == PartitionKind::Dirichlet
            && !(self.partition.gamma > 0.0 && self.partition.gamma.is_finite())
        {
            return Err(Error::config(
                "partition.gamma",
                "must be positive and finite",
            ));
        }
        match self.dataset.kind {
            DatasetKind::Blobs => {
                if self.dataset.num_classes < 2 {
                    return Err(Error::config(
                        "dataset.num_classes",
                        "need at least 2 classes",
                    ));
                }
                if self.dataset.dim < 2 {
                    return Err(Error::config("dataset.dim", "need at least 2 dimensions"));
                }
                if self.dataset.train_per_class == 0 {
                    return Err(Error::config(
                        "dataset.train_per_class",
                        "must be at least 1",
                    ));
                }
                if self.dataset.test_per_class == 0 {
                    return Err(Error::config(
                        "dataset.test_per_class",
                        "must be at least 1",
                    ));
                }
                if !(self.dataset.spread >= 0.0 && self.dataset.spread.is_finite()) {
                    return Err(Error::config("dataset.spread", "must be finite and >= 0"));
                }
            }
            DatasetKind::Text | DatasetKind::Cifar10 => {
                if self.dataset.train_paths.is_empty() {
                    return Err(Error::config(
                        "dataset.train_paths",
                        "file datasets need training files",
                    ));
                }
                if self.dataset.test_path.is_none() {
                    return Err(Error::config(
                        "dataset.test_path",
                        "file datasets need a test file",
                    ));
                }
            }
        }
        if self.model.repr_dim == 0 || self.model.hidden_dims.contains(&0) {
            return Err(Error::config("model", "layer dimensions must be >= 1"));
        }
        self.client.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    /// Number of trailing rounds the stability statistic covers.
    pub fn stability_window(&self, rounds_run: usize) -> usize {
        ((self.stability_fraction * rounds_run as f64).ceil() as usize).clamp(1, rounds_run.max(1))
    }
}

/// The four variants of the contrastive-module ablation. They differ only in
/// the two contrastive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoLcc,
    NoGcc,
    NoDcc,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoLcc,
        Ablation::NoGcc,
        Ablation::NoDcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "dccfssl",
            Ablation::NoLcc => "dccfssl-no-lcc",
            Ablation::NoGcc => "dccfssl-no-gcc",
            Ablation::NoDcc => "dccfssl-no-dcc",
        }
    }

    /// Applies the variant's weights to a copy of `base`.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.method = Method::Dccfssl;
        let (lcc, gcc) = (base.loss.lambda_lcc, base.loss.lambda_gcc);
        (cfg.loss.lambda_lcc, cfg.loss.lambda_gcc) = match self {
            Ablation::Full => (lcc, gcc),
            Ablation::NoLcc => (0.0, gcc),
            Ablation::NoGcc => (lcc, 0.0),
            Ablation::NoDcc => (0.0, 0.0),
        };
        cfg
    }
}

/// Experiment grid: every combination of the listed axes applied to `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub base: RunConfig,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub partitions: Vec<PartitionKind>,
    #[serde(default)]
    pub labeled_fractions: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Expand `dccfssl` into the four contrastive-module variants.
    #[serde(default)]
    pub ablation: bool,
}

/// One expanded grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub config: RunConfig,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sweep: SweepConfig = toml::from_str(text).map_err(|e| toml_error("grid", e))?;
        sweep.base.validate()?;
        Ok(sweep)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Expands the grid in a fixed order; empty axes fall back to the base value.
    pub fn expand(&self) -> Result<Vec<SweepRun>> {
        let methods = if self.methods.is_empty() {
            vec![self.base.method]
        } else {
            self.methods.clone()
        };
        let partitions = if self.partitions.is_empty() {
            vec![self.base.partition.kind]
        } else {
            self.partitions.clone()
        };
        let fractions = if self.labeled_fractions.is_empty() {
            vec![self.base.labeled_fraction]
        } else {
            self.labeled_fractions.clone()
        };
        let seeds = if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        };

        let mut runs = Vec::new();
        for &method in &methods {
            let variants: Vec<(String, RunConfig)> = if method == Method::Dccfssl && self.ablation {
                Ablation::ALL
                    .iter()
                    .map(|a| (a.name().to_string(), a.apply(&self.base)))
                    .collect()
            } else {
                let mut cfg = self.base.clone();
                cfg.method = method;
                vec![(method.as_str().to_string(), cfg)]
            };
            for (variant, cfg) in &variants {
                for &partition in &partitions {
                    for &fraction in &fractions {
                        for &seed in &seeds {
                            let mut c = cfg.clone();
                            c.partition.kind = partition;
                            c.labeled_fraction = fraction;
                            c.seed = seed;
                            let partition_name = match partition {
                                PartitionKind::Iid => "iid",
                                PartitionKind::Dirichlet => "noniid",
                            };
                            let name = format!("{variant}_{partition_name}_lf{fraction}_s{seed}");
                            c.out_dir = Some(self.out_dir.join(&name));
                            c.validate()?;
                            runs.push(SweepRun { name, config: c });
                        }
                    }
                }
            }
        }
        Ok(runs)
    }
}
