//! Local training for labeled and unlabeled clients, followed by
//! authentication counting and local prototype extraction with the updated
//! model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment_strong, augment_weak, AugmentConfig, ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    consistency_loss, gcc_labeled, gcc_unlabeled, lcc_labeled, lcc_unlabeled, pseudo_label,
    supervised_loss, total_labeled, total_unlabeled, ContrastiveBatch, LossGrad, LossHyper,
    LossParts,
};
use crate::matrix::{argmax, Matrix};
use crate::model::{ModelParams, MIN_REPR_NORM};
use crate::rng::Rng;
use crate::server::{GlobalPrototypes, LocalPrototypes};

/// Which view of the local data feeds authentication and prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthView {
    #[default]
    Raw,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub auth_view: AuthView,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 1,
            batch_size: 32,
            auth_view: AuthView::Raw,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("client.lr", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("client.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything a local training task needs besides data and model.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSettings {
    pub client: ClientConfig,
    pub hyper: LossHyper,
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub client_id: usize,
    pub params: ModelParams,
    pub prototypes: LocalPrototypes,
    pub total_auth: u64,
    pub samples: usize,
    /// Mean total loss over the steps taken (0 when no step was taken).
    pub mean_loss: f64,
}

/// Value, components and parameter gradient of one client objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub parts: LossParts,
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Pseudo labels and their confidences, held fixed while differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTargets {
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

pub fn pseudo_targets(params: &ModelParams, weak: &Matrix) -> Result<PseudoTargets> {
    let (labels, confidences) = pseudo_label(&params.predict(weak)?);
    Ok(PseudoTargets {
        labels,
        confidences,
    })
}

fn add_scaled(acc: &mut Matrix, part: &LossGrad, scale: f64) -> Result<()> {
    if scale == 1.0 {
        acc.add_assign(&part.grad)
    } else {
        let mut g = part.grad.clone();
        g.scale(scale);
        acc.add_assign(&g)
    }
}

/// Labeled objective: cross-entropy on the weak views plus the weighted
/// local and global contrastive terms on the strong views (`strong` holds two
/// rows per image, siblings adjacent).
pub fn labeled_objective(
    params: &ModelParams,
    weak: &Matrix,
    strong: &Matrix,
    labels: &[usize],
    prototypes: &GlobalPrototypes,
    h: &LossHyper,
) -> Result<Objective> {
    let fwd = params.forward(weak)?;
    let basic = supervised_loss(&fwd.probs, labels)?;
    let mut grad = params.backward(
        &fwd,
        crate::model::Upstream {
            repr: None,
            logits: Some(&basic.grad),
        },
    )?;
    let mut parts = LossParts {
        basic: basic.value,
        ..LossParts::default()
    };

    if h.lambda_lcc != 0.0 || h.lambda_gcc != 0.0 {
        if strong.rows() != 2 * labels.len() {
            return Err(Error::Shape(format!(
                "{} strong views for {} images",
                strong.rows(),
                labels.len()
            )));
        }
        let sfwd = params.forward(strong)?;
        let batch = ContrastiveBatch::labeled(sfwd.repr.clone(), labels)?;
        let mut d_repr = Matrix::zeros(strong.rows(), params.arch().repr_dim);
        if h.lambda_lcc != 0.0 {
            let lcc = lcc_labeled(&batch, h);
            parts.lcc = lcc.value;
            add_scaled(&mut d_repr, &lcc, h.lambda_lcc)?;
        }
        if h.lambda_gcc != 0.0 {
            let gcc = gcc_labeled(&batch, prototypes, h)?;
            parts.gcc = gcc.value;
            add_scaled(&mut d_repr, &gcc, h.lambda_gcc)?;
        }
        let g = params.backward(
            &sfwd,
            crate::model::Upstream {
                repr: Some(&d_repr),
                logits: None,
            },
        )?;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok(Objective {
        value: total_labeled(&parts, h),
        parts,
        grad,
    })
}

/// Unlabeled objective with fixed pseudo targets: consistency cross-entropy
/// on the first strong view of each image, plus the masked contrastive terms
/// on both strong views.
pub fn unlabeled_objective(
    params: &ModelParams,
    strong: &Matrix,
    targets: &PseudoTargets,
    prototypes: &GlobalPrototypes,
    h: &LossHyper,
) -> Result<Objective> {
    let images = targets.labels.len();
    if strong.rows() != 2 * images {
        return Err(Error::Shape(format!(
            "{} strong views for {images} images",
            strong.rows()
        )));
    }
    let sfwd = params.forward(strong)?;
    let classes = params.arch().num_classes;
    let first_views = Matrix::from_rows((0..images).map(|k| sfwd.probs.row(2 * k)), classes)?;
    let basic = consistency_loss(&targets.labels, &targets.confidences, &first_views, h)?;
    let mut d_logits = Matrix::zeros(strong.rows(), classes);
    for k in 0..images {
        d_logits.row_mut(2 * k).copy_from_slice(basic.grad.row(k));
    }
    let mut parts = LossParts {
        basic: basic.value,
        ..LossParts::default()
    };
    let mut d_repr = Matrix::zeros(strong.rows(), params.arch().repr_dim);
    if h.lambda_lcc != 0.0 || h.lambda_gcc != 0.0 {
        let batch = ContrastiveBatch::pseudo_labeled(
            sfwd.repr.clone(),
            &targets.labels,
            &targets.confidences,
        )?;
        if h.lambda_lcc != 0.0 {
            let lcc = lcc_unlabeled(&batch, h);
            parts.lcc = lcc.value;
            add_scaled(&mut d_repr, &lcc, h.lambda_lcc)?;
        }
        if h.lambda_gcc != 0.0 {
            let gcc = gcc_unlabeled(&batch, prototypes, h)?;
            parts.gcc = gcc.value;
            add_scaled(&mut d_repr, &gcc, h.lambda_gcc)?;
        }
    }
    let grad = params.backward(
        &sfwd,
        crate::model::Upstream {
            repr: Some(&d_repr),
            logits: Some(&d_logits),
        },
    )?;
    Ok(Objective {
        value: total_unlabeled(&parts, h),
        parts,
        grad,
    })
}

/// E epochs of mini-batch SGD over shuffled local data, then authentication
/// and prototypes computed with the updated model.
pub fn local_train(
    init: &ModelParams,
    prototypes: &GlobalPrototypes,
    data: &ClientDataset,
    settings: &LocalSettings,
    rng: &mut Rng,
    round: usize,
) -> Result<LocalResult> {
    if data.is_empty() {
        return Err(Error::State(format!(
            "client {} has no data",
            data.client_id
        )));
    }
    let dim = init.arch().input_dim;
    let h = &settings.hyper;
    let aug = &settings.augment;
    let need_contrast = h.lambda_lcc != 0.0 || h.lambda_gcc != 0.0;
    let mut params = init.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_index = 0;
    let mut loss_sum = 0.0;

    for _ in 0..settings.client.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.client.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples()[i]).collect();
            let mut weak_rows = Vec::with_capacity(samples.len() * dim);
            let mut strong_rows = Vec::with_capacity(2 * samples.len() * dim);
            for s in &samples {
                weak_rows.extend(augment_weak(s, aug, rng));
                if need_contrast || !data.is_labeled() {
                    strong_rows.extend(augment_strong(s, aug, rng));
                    strong_rows.extend(augment_strong(s, aug, rng));
                }
            }
            let weak = Matrix::from_vec(samples.len(), dim, weak_rows)?;
            let strong = Matrix::from_vec(strong_rows.len() / dim, dim, strong_rows)?;

            let objective = if data.is_labeled() {
                let labels: Vec<usize> = samples
                    .iter()
                    .map(|s| s.label.expect("labeled client samples carry labels"))
                    .collect();
                labeled_objective(&params, &weak, &strong, &labels, prototypes, h)?
            } else {
                let targets = pseudo_targets(&params, &weak)?;
                unlabeled_objective(&params, &strong, &targets, prototypes, h)?
            };
            if !objective.value.is_finite() || objective.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    round,
                    client: data.client_id,
                    batch: batch_index,
                    detail: format!("loss {} ({:?})", objective.value, objective.parts),
                });
            }
            loss_sum += objective.value;
            params = params.sgd_step(&objective.grad, settings.client.lr)?;
            batch_index += 1;
        }
    }

    let auth = match settings.client.auth_view {
        AuthView::Raw => compute_authentication(&params, data, h)?,
        AuthView::Weak => {
            let views: Vec<Vec<f64>> = data
                .samples()
                .iter()
                .map(|s| augment_weak(s, aug, rng))
                .collect();
            authenticate_views(&params, data, &views, h)?
        }
    };
    let prototypes = local_prototypes_from(&params, &auth)?;
    Ok(LocalResult {
        client_id: data.client_id,
        total_auth: auth.total,
        samples: data.len(),
        prototypes,
        params,
        mean_loss: if batch_index == 0 {
            0.0
        } else {
            loss_sum / batch_index as f64
        },
    })
}

/// Per-sample authentication outcome for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Authentication {
    /// Whether each sample authenticates.
    pub flags: Vec<bool>,
    /// True class (labeled) or pseudo class (unlabeled) of each sample.
    pub classes: Vec<usize>,
    /// Per-class number of authenticated samples.
    pub counts: Vec<u64>,
    pub total: u64,
    inputs: Matrix,
}

/// A labeled sample authenticates when classified correctly; an unlabeled one
/// when its top predicted probability reaches the threshold. Uses the raw
/// features.
pub fn compute_authentication(
    params: &ModelParams,
    data: &ClientDataset,
    h: &LossHyper,
) -> Result<Authentication> {
    let views: Vec<Vec<f64>> = data.samples().iter().map(|s| s.features.clone()).collect();
    authenticate_views(params, data, &views, h)
}

fn authenticate_views(
    params: &ModelParams,
    data: &ClientDataset,
    views: &[Vec<f64>],
    h: &LossHyper,
) -> Result<Authentication> {
    let dim = params.arch().input_dim;
    let inputs = Matrix::from_rows(views.iter().map(Vec::as_slice), dim)?;
    let probs = params.predict(&inputs)?;
    let classes_n = params.arch().num_classes;
    let mut flags = Vec::with_capacity(data.len());
    let mut classes = Vec::with_capacity(data.len());
    let mut counts = vec![0u64; classes_n];
    for (r, sample) in data.samples().iter().enumerate() {
        let row = probs.row(r);
        let predicted = argmax(row);
        let (ok, class) = match sample.label {
            Some(label) if data.is_labeled() => (predicted == label, label),
            _ => (h.is_confident(row[predicted]), predicted),
        };
        if ok {
            counts[class] += 1;
        }
        flags.push(ok);
        classes.push(class);
    }
    let total = counts.iter().sum();
    Ok(Authentication {
        flags,
        classes,
        counts,
        total,
        inputs,
    })
}

/// Per-class mean representation of authenticated samples, renormalized when
/// the model normalizes representations. Classes without authenticated
/// samples are absent.
pub fn compute_local_prototypes(
    params: &ModelParams,
    data: &ClientDataset,
    auth: &Authentication,
) -> Result<LocalPrototypes> {
    if auth.flags.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} authentication flags for {} samples",
            auth.flags.len(),
            data.len()
        )));
    }
    local_prototypes_from(params, auth)
}

fn local_prototypes_from(params: &ModelParams, auth: &Authentication) -> Result<LocalPrototypes> {
    let arch = params.arch();
    let mut out = LocalPrototypes::absent(arch.num_classes);
    if auth.total == 0 {
        return Ok(out);
    }
    let reprs = params.forward_encoder(&auth.inputs)?;
    let mut sums = vec![vec![0.0; arch.repr_dim]; arch.num_classes];
    for (r, (&ok, &class)) in auth.flags.iter().zip(&auth.classes).enumerate() {
        if ok {
            for (s, &v) in sums[class].iter_mut().zip(reprs.row(r)) {
                *s += v;
            }
        }
    }
    for (class, mut sum) in sums.into_iter().enumerate() {
        let count = auth.counts[class];
        if count == 0 {
            continue;
        }
        sum.iter_mut().for_each(|v| *v /= count as f64);
        if arch.normalize_repr {
            let n = crate::matrix::norm(&sum);
            if n >= MIN_REPR_NORM {
                sum.iter_mut().for_each(|v| *v /= n);
            }
        }
        out.vectors[class] = Some(sum);
        out.counts[class] = count;
    }
    Ok(out)
}
