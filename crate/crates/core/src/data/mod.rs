//! Samples, client shards, partitioning across clients, and the weak/strong
//! view generators used by local training.

mod augment;
mod cifar;
mod partition;
mod synth;
mod text;

pub use augment::{augment_strong, augment_weak, AugmentConfig};
pub use cifar::{parse_cifar10, read_cifar10_binary, CIFAR10_FEATURES, CIFAR10_RECORD_LEN};
pub use partition::{assign_roles, partition_dirichlet, partition_iid, MAX_DIRICHLET_ATTEMPTS};
pub use synth::{blob_means, split_per_class, synthesize_blobs};
pub use text::{parse_samples, read_samples, samples_to_text, write_samples};

use crate::error::{Error, Result};

/// A feature vector with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label: Some(label),
        }
    }

    pub fn unlabeled(features: Vec<f64>) -> Self {
        Self {
            features,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Labeled,
    Unlabeled,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
        }
    }
}

/// One client's local shard.
///
/// Unlabeled clients keep their ground truth in a sealed side table: training
/// code sees `label == None` on every sample, and only evaluation diagnostics
/// read [`ClientDataset::oracle_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    samples: Vec<Sample>,
    role: Role,
    sealed: Option<Vec<Option<usize>>>,
}

impl ClientDataset {
    /// Builds a labeled shard. Every sample must carry a label.
    pub fn new_labeled(client_id: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::State(format!("client {client_id} has no samples")));
        }
        if let Some(pos) = samples.iter().position(|s| s.label.is_none()) {
            return Err(Error::Precondition(format!(
                "labeled client {client_id} has an unlabeled sample at index {pos}"
            )));
        }
        Ok(Self {
            client_id,
            samples,
            role: Role::Labeled,
            sealed: None,
        })
    }

    /// Builds an unlabeled shard, moving any labels into the sealed table.
    pub fn new_unlabeled(client_id: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::State(format!("client {client_id} has no samples")));
        }
        let mut sealed = Vec::with_capacity(samples.len());
        let samples = samples
            .into_iter()
            .map(|mut s| {
                sealed.push(s.label.take());
                s
            })
            .collect();
        Ok(Self {
            client_id,
            samples,
            role: Role::Unlabeled,
            sealed: Some(sealed),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_labeled(&self) -> bool {
        self.role == Role::Labeled
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ground truth for evaluation oracles. For labeled clients these are the
    /// visible labels; for unlabeled clients, the sealed ones.
    pub fn oracle_labels(&self) -> Vec<Option<usize>> {
        match &self.sealed {
            Some(sealed) => sealed.clone(),
            None => self.samples.iter().map(|s| s.label).collect(),
        }
    }

    /// Converts to a labeled shard by unsealing hidden labels.
    pub fn into_unsealed(self) -> Result<Self> {
        match self.sealed {
            None => Ok(self),
            Some(sealed) => {
                let samples = self
                    .samples
                    .into_iter()
                    .zip(sealed)
                    .map(|(mut s, l)| {
                        s.label = l;
                        s
                    })
                    .collect();
                ClientDataset::new_labeled(self.client_id, samples)
            }
        }
    }

    /// Converts to an unlabeled shard, sealing labels.
    pub fn into_sealed(self) -> Result<Self> {
        match self.role {
            Role::Unlabeled => Ok(self),
            Role::Labeled => ClientDataset::new_unlabeled(self.client_id, self.samples),
        }
    }

    /// Per-class histogram of the oracle labels.
    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut hist = vec![0; num_classes];
        for l in self.oracle_labels().into_iter().flatten() {
            if l < num_classes {
                hist[l] += 1;
            }
        }
        hist
    }
}

/// Number of classes implied by the labels: one past the largest label.
pub fn infer_num_classes(samples: &[Sample]) -> Result<usize> {
    samples
        .iter()
        .filter_map(|s| s.label)
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Precondition("cannot infer class count without labels".into()))
}

/// Checks the feature length and label range of every sample.
pub fn validate_samples(samples: &[Sample], dim: usize, num_classes: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(Error::Shape(format!(
                "sample {i} has {} features, expected {dim}",
                s.features.len()
            )));
        }
        if let Some(l) = s.label {
            if l >= num_classes {
                return Err(Error::Precondition(format!(
                    "sample {i} has label {l} outside 0..{num_classes}"
                )));
            }
        }
    }
    Ok(())
}
