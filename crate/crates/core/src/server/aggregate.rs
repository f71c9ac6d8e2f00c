//! Authentication-reweighted aggregation of models (AMA) and class
//! prototypes (APA), plus the server-side prototype ledger.

use crate::data::Role;
use crate::error::{Error, Result};
use crate::matrix::norm;
use crate::model::{ModelParams, MIN_REPR_NORM};

/// Server-side class prototypes. A class is absent until some client has
/// authenticated samples of it.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrototypes {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

impl GlobalPrototypes {
    /// All classes absent.
    pub fn empty(num_classes: usize, dim: usize) -> Self {
        Self {
            dim,
            vectors: vec![None; num_classes],
        }
    }

    pub fn from_vectors(dim: usize, vectors: Vec<Option<Vec<f64>>>) -> Result<Self> {
        for (k, v) in vectors.iter().enumerate() {
            if let Some(v) = v {
                if v.len() != dim {
                    return Err(Error::Shape(format!(
                        "prototype {k} has dimension {}, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::State(format!("prototype {k} is not finite")));
                }
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.vectors.get(class).and_then(|v| v.as_deref())
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.get(class).is_some()
    }

    /// Present classes with their vectors, in class order.
    pub fn present(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.vectors
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
    }

    pub fn present_count(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }
}

/// One client's per-class prototypes `o` and authentication counts `v`.
/// A class with zero count has no prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPrototypes {
    pub vectors: Vec<Option<Vec<f64>>>,
    pub counts: Vec<u64>,
}

impl LocalPrototypes {
    pub fn absent(num_classes: usize) -> Self {
        Self {
            vectors: vec![None; num_classes],
            counts: vec![0; num_classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Latest local prototypes of every registered client, with the labeled-count
/// expansion factor `mu = m / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeLedger {
    roles: Vec<Role>,
    entries: Vec<Option<LocalPrototypes>>,
    mu: f64,
    num_classes: usize,
    dim: usize,
    normalize: bool,
}

impl PrototypeLedger {
    /// `roles[i]` is the role of client `i`. With no unlabeled clients the
    /// factor is irrelevant to the weighted means and is set to 1.
    pub fn new(roles: Vec<Role>, num_classes: usize, dim: usize, normalize: bool) -> Result<Self> {
        let n = roles.iter().filter(|&&r| r == Role::Labeled).count();
        let m = roles.len() - n;
        if n == 0 {
            return Err(Error::Precondition(
                "prototype ledger needs at least one labeled client".into(),
            ));
        }
        let mu = if m == 0 { 1.0 } else { m as f64 / n as f64 };
        Ok(Self {
            entries: vec![None; roles.len()],
            roles,
            mu,
            num_classes,
            dim,
            normalize,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn clients(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, client: usize) -> Role {
        self.roles[client]
    }

    pub fn entry(&self, client: usize) -> Option<&LocalPrototypes> {
        self.entries.get(client).and_then(Option::as_ref)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn effective_count(&self, client: usize, count: u64) -> f64 {
        match self.roles[client] {
            Role::Labeled => self.mu * count as f64,
            Role::Unlabeled => count as f64,
        }
    }

    /// APA weights `(client, weight)` of one class in ascending client order.
    /// Empty when no client holds authenticated samples of the class.
    pub fn class_weights(&self, class: usize) -> Vec<(usize, f64)> {
        let contributions: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let e = e.as_ref()?;
                let c = *e.counts.get(class)?;
                (c > 0 && e.vectors[class].is_some()).then(|| (i, self.effective_count(i, c)))
            })
            .collect();
        let total: f64 = contributions.iter().map(|&(_, w)| w).sum();
        if total <= 0.0 {
            return Vec::new();
        }
        contributions
            .into_iter()
            .map(|(i, w)| (i, w / total))
            .collect()
    }

    fn check_update(&self, client: usize, update: &LocalPrototypes) -> Result<()> {
        if client >= self.roles.len() {
            return Err(Error::State(format!("client {client} is not registered")));
        }
        if update.vectors.len() != self.num_classes || update.counts.len() != self.num_classes {
            return Err(Error::Shape(format!(
                "client {client} sent {} prototypes and {} counts for {} classes",
                update.vectors.len(),
                update.counts.len(),
                self.num_classes
            )));
        }
        for (k, (v, &c)) in update.vectors.iter().zip(&update.counts).enumerate() {
            match v {
                Some(v) if v.len() != self.dim => {
                    return Err(Error::Shape(format!(
                        "client {client} prototype {k} has dimension {}, expected {}",
                        v.len(),
                        self.dim
                    )))
                }
                None if c > 0 => {
                    return Err(Error::State(format!(
                        "client {client} counts {c} samples for class {k} but sent no prototype"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Dump as text: one line per client and class,
    /// `client,role,class,count,v1 v2 ...` (`-` for an absent vector).
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("client,role,class,count,vector\n");
        for (i, role) in self.roles.iter().enumerate() {
            for k in 0..self.num_classes {
                let (count, vector) = match self.entry(i) {
                    Some(e) => (
                        e.counts[k],
                        e.vectors[k]
                            .as_ref()
                            .map(|v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")),
                    ),
                    None => (0, None),
                };
                writeln!(
                    out,
                    "{i},{},{k},{count},{}",
                    role.as_str(),
                    vector.unwrap_or_else(|| "-".into())
                )
                .expect("write to string");
            }
        }
        out
    }
}

/// Weighted model average with weights `A_i / sum(A)`. When no client
/// authenticated anything the unweighted mean is returned. Models must be
/// given in ascending client-id order.
pub fn ama(models: &[ModelParams], auth_totals: &[u64]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::Precondition("cannot aggregate zero models".into()));
    }
    if models.len() != auth_totals.len() {
        return Err(Error::Shape(format!(
            "{} models but {} authentication totals",
            models.len(),
            auth_totals.len()
        )));
    }
    let arch = models[0].arch();
    if let Some(i) = models.iter().position(|m| m.arch() != arch) {
        return Err(Error::Shape(format!(
            "model {i} has a different architecture"
        )));
    }
    let total: u64 = auth_totals.iter().sum();
    let weights: Vec<f64> = if total == 0 {
        vec![1.0 / models.len() as f64; models.len()]
    } else {
        auth_totals
            .iter()
            .map(|&a| a as f64 / total as f64)
            .collect()
    };
    let mut acc: Vec<f64> = models[0].values().iter().map(|v| weights[0] * v).collect();
    for (m, &w) in models.iter().zip(&weights).skip(1) {
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += w * v;
        }
    }
    ModelParams::from_values(arch.clone(), acc)
}

/// Unweighted mean, the FedAvg baseline aggregation used here.
pub fn uniform_average(models: &[ModelParams]) -> Result<ModelParams> {
    ama(models, &vec![1; models.len()])
}

/// Records this round's local prototypes in the ledger and recomputes the
/// global prototypes from all ledger entries. Classes with zero effective
/// count keep their previous value.
pub fn apa(
    ledger: &mut PrototypeLedger,
    updates: &[(usize, LocalPrototypes)],
    previous: &GlobalPrototypes,
) -> Result<GlobalPrototypes> {
    if previous.dim() != ledger.dim || previous.num_classes() != ledger.num_classes {
        return Err(Error::Shape(format!(
            "previous prototypes are {} classes x {}, ledger expects {} x {}",
            previous.num_classes(),
            previous.dim(),
            ledger.num_classes,
            ledger.dim
        )));
    }
    for (client, update) in updates {
        ledger.check_update(*client, update)?;
    }
    for (client, update) in updates {
        ledger.entries[*client] = Some(update.clone());
    }

    let mut vectors = Vec::with_capacity(ledger.num_classes);
    for class in 0..ledger.num_classes {
        let weights = ledger.class_weights(class);
        if weights.is_empty() {
            vectors.push(previous.get(class).map(<[f64]>::to_vec));
            continue;
        }
        let mut acc = vec![0.0; ledger.dim];
        for (client, w) in weights {
            let o = ledger.entries[client]
                .as_ref()
                .and_then(|e| e.vectors[class].as_ref())
                .expect("weighted entries carry a prototype");
            for (a, v) in acc.iter_mut().zip(o) {
                *a += w * v;
            }
        }
        if ledger.normalize {
            let n = norm(&acc);
            if n >= MIN_REPR_NORM {
                acc.iter_mut().for_each(|v| *v /= n);
            }
        }
        vectors.push(Some(acc));
    }
    GlobalPrototypes::from_vectors(ledger.dim, vectors)
}
