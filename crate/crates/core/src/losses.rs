//! Training objectives for labeled and unlabeled clients.
//!
//! Every loss returns its value together with the gradient with respect to
//! the quantity it consumes: logits for the cross-entropy terms and
//! representation rows for the contrastive terms. Pseudo labels, confidence
//! masks and global prototypes are treated as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax, dot, log_sum_exp, Matrix};
use crate::model::ReprBatch;
use crate::server::GlobalPrototypes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossHyper {
    /// Temperature shared by the local and global contrastive terms.
    pub tau: f64,
    /// Confidence threshold for pseudo labels.
    pub t_thr: f64,
    pub lambda_lcc: f64,
    pub lambda_gcc: f64,
    /// Count the sibling view of the same image as a positive (SupCon style).
    /// Off by default: positives come only from other images.
    pub include_sibling_positive: bool,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            tau: 1.0,
            t_thr: 0.95,
            lambda_lcc: 1.0,
            lambda_gcc: 1.0,
            include_sibling_positive: false,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("loss.tau", "must be positive and finite"));
        }
        if !(self.t_thr > 0.0 && self.t_thr <= 1.0) {
            return Err(Error::config("loss.t_thr", "must lie in (0, 1]"));
        }
        if !(self.lambda_lcc >= 0.0 && self.lambda_lcc.is_finite()) {
            return Err(Error::config("loss.lambda_lcc", "must be finite and >= 0"));
        }
        if !(self.lambda_gcc >= 0.0 && self.lambda_gcc.is_finite()) {
            return Err(Error::config("loss.lambda_gcc", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_confident(&self, confidence: f64) -> bool {
        confidence >= self.t_thr
    }
}

/// A loss value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Two strong views per image, siblings in adjacent rows `2k` and `2k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    reprs: ReprBatch,
    class_ids: Vec<usize>,
    confidences: Vec<f64>,
}

impl ContrastiveBatch {
    pub fn new(reprs: ReprBatch, class_ids: Vec<usize>, confidences: Vec<f64>) -> Result<Self> {
        let rows = reprs.rows();
        if !rows.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "contrastive batch needs an even row count, got {rows}"
            )));
        }
        if class_ids.len() != rows || confidences.len() != rows {
            return Err(Error::Shape(format!(
                "{rows} views but {} class ids and {} confidences",
                class_ids.len(),
                confidences.len()
            )));
        }
        for k in 0..rows / 2 {
            if class_ids[2 * k] != class_ids[2 * k + 1]
                || confidences[2 * k] != confidences[2 * k + 1]
            {
                return Err(Error::Precondition(format!(
                    "sibling views {} and {} disagree on class or confidence",
                    2 * k,
                    2 * k + 1
                )));
            }
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Precondition(format!(
                "confidence {c} outside [0, 1]"
            )));
        }
        Ok(Self {
            reprs,
            class_ids,
            confidences,
        })
    }

    /// Views of a fully labeled batch: per-image labels, confidence 1.
    pub fn labeled(reprs: ReprBatch, image_labels: &[usize]) -> Result<Self> {
        let class_ids = image_labels.iter().flat_map(|&l| [l, l]).collect();
        let confidences = vec![1.0; 2 * image_labels.len()];
        Self::new(reprs, class_ids, confidences)
    }

    /// Views of an unlabeled batch: per-image pseudo labels and confidences.
    pub fn pseudo_labeled(reprs: ReprBatch, pseudo: &[usize], confidences: &[f64]) -> Result<Self> {
        let class_ids = pseudo.iter().flat_map(|&l| [l, l]).collect();
        let conf = confidences.iter().flat_map(|&c| [c, c]).collect();
        Self::new(reprs, class_ids, conf)
    }

    pub fn views(&self) -> usize {
        self.class_ids.len()
    }

    pub fn reprs(&self) -> &ReprBatch {
        &self.reprs
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }
}

/// Mean cross-entropy over rows with nonzero weight, divided by the full row
/// count. Gradient is with respect to the logits feeding `probs`.
fn masked_cross_entropy(probs: &Matrix, targets: &[usize], weights: &[f64]) -> Result<LossGrad> {
    let n = probs.rows();
    if targets.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "{n} prediction rows but {} targets and {} weights",
            targets.len(),
            weights.len()
        )));
    }
    let mut grad = Matrix::zeros(n, probs.cols());
    if n == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let mut value = 0.0;
    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        if t >= probs.cols() {
            return Err(Error::Precondition(format!(
                "label {t} outside 0..{}",
                probs.cols()
            )));
        }
        if w == 0.0 {
            continue;
        }
        value -= w * probs.get(r, t).ln();
        let g = grad.row_mut(r);
        for (gi, &p) in g.iter_mut().zip(probs.row(r)) {
            *gi = w * p / n as f64;
        }
        g[t] -= w / n as f64;
    }
    Ok(LossGrad {
        value: value / n as f64,
        grad,
    })
}

/// Cross-entropy of predictions against true labels, averaged over the batch.
pub fn supervised_loss(probs: &Matrix, labels: &[usize]) -> Result<LossGrad> {
    masked_cross_entropy(probs, labels, &vec![1.0; labels.len()])
}

/// Output of the pseudo-label consistency loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FixMatchOutput {
    pub loss: LossGrad,
    pub pseudo_labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Pseudo labels from the weak view; cross-entropy of the strong view
/// against them on rows whose weak confidence reaches the threshold.
pub fn fixmatch_loss(
    weak_probs: &Matrix,
    strong_probs: &Matrix,
    h: &LossHyper,
) -> Result<FixMatchOutput> {
    if weak_probs.rows() != strong_probs.rows() || weak_probs.cols() != strong_probs.cols() {
        return Err(Error::Shape(format!(
            "weak predictions {}x{} vs strong {}x{}",
            weak_probs.rows(),
            weak_probs.cols(),
            strong_probs.rows(),
            strong_probs.cols()
        )));
    }
    let (pseudo_labels, confidences) = pseudo_label(weak_probs);
    let mask: Vec<bool> = confidences.iter().map(|&c| h.is_confident(c)).collect();
    let loss = consistency_loss(&pseudo_labels, &confidences, strong_probs, h)?;
    Ok(FixMatchOutput {
        loss,
        pseudo_labels,
        confidences,
        mask,
    })
}

/// The consistency term with pseudo labels and confidences already fixed.
pub fn consistency_loss(
    pseudo_labels: &[usize],
    confidences: &[f64],
    strong_probs: &Matrix,
    h: &LossHyper,
) -> Result<LossGrad> {
    if confidences.len() != pseudo_labels.len() {
        return Err(Error::Shape(format!(
            "{} pseudo labels but {} confidences",
            pseudo_labels.len(),
            confidences.len()
        )));
    }
    let weights: Vec<f64> = confidences
        .iter()
        .map(|&c| f64::from(u8::from(h.is_confident(c))))
        .collect();
    masked_cross_entropy(strong_probs, pseudo_labels, &weights)
}

/// Argmax class and its probability for every row.
pub fn pseudo_label(probs: &Matrix) -> (Vec<usize>, Vec<f64>) {
    probs
        .iter_rows()
        .map(|row| {
            let k = argmax(row);
            (k, row[k])
        })
        .unzip()
}

/// Shared body of the local class-aware contrastive losses.
///
/// Anchor `i` contributes only when `anchor_active[i]`; its positives are the
/// views `s != i` of other images (plus the sibling when enabled) with
/// `positive_ok[s]` and the same class. The denominator runs over every
/// `j != i`. The per-anchor weight is `1 / (1 + |S(i)|)` and the sum over
/// anchors is not averaged.
fn local_contrastive(
    batch: &ContrastiveBatch,
    anchor_active: &[bool],
    positive_ok: &[bool],
    h: &LossHyper,
) -> LossGrad {
    let z = batch.reprs.matrix();
    let n = batch.views();
    let mut grad = Matrix::zeros(n, z.cols());
    let mut value = 0.0;
    let mut sims = vec![0.0; n];
    let mut coeff = vec![0.0; n];

    for i in 0..n {
        if !anchor_active[i] {
            continue;
        }
        let zi = z.row(i);
        let positives: Vec<usize> = (0..n)
            .filter(|&s| {
                s != i
                    && (s / 2 != i / 2 || h.include_sibling_positive)
                    && positive_ok[s]
                    && batch.class_ids[s] == batch.class_ids[i]
            })
            .collect();
        if positives.is_empty() {
            continue;
        }
        for (j, s) in sims.iter_mut().enumerate() {
            *s = if j == i {
                f64::NEG_INFINITY
            } else {
                dot(zi, z.row(j)) / h.tau
            };
        }
        let lse = log_sum_exp(sims.iter().copied());
        let weight = 1.0 / (1.0 + positives.len() as f64);
        let count = positives.len() as f64;
        value -= weight * positives.iter().map(|&s| sims[s] - lse).sum::<f64>();

        // d value / d sim_ij = -w (1[j in S] - |S| softmax_ij)
        for (j, c) in coeff.iter_mut().enumerate() {
            *c = if j == i {
                0.0
            } else {
                weight * count * (sims[j] - lse).exp()
            };
        }
        for &s in &positives {
            coeff[s] -= weight;
        }
        for j in 0..n {
            let c = coeff[j] / h.tau;
            if c == 0.0 {
                continue;
            }
            let zj = z.row(j);
            for (g, &v) in grad.row_mut(i).iter_mut().zip(zj) {
                *g += c * v;
            }
            for (g, &v) in grad.row_mut(j).iter_mut().zip(zi) {
                *g += c * v;
            }
        }
    }
    LossGrad { value, grad }
}

/// Shared body of the global class-aware contrastive losses: a softmax over
/// the present global prototypes, evaluated at each active view's class and
/// normalized by the total view count. Views of absent classes contribute 0.
fn global_contrastive(
    batch: &ContrastiveBatch,
    active: &[bool],
    prototypes: &GlobalPrototypes,
    h: &LossHyper,
) -> Result<LossGrad> {
    let z = batch.reprs.matrix();
    let n = batch.views();
    if prototypes.dim() != z.cols() {
        return Err(Error::Shape(format!(
            "prototypes have dimension {}, representations {}",
            prototypes.dim(),
            z.cols()
        )));
    }
    if let Some(&c) = batch
        .class_ids
        .iter()
        .find(|&&c| c >= prototypes.num_classes())
    {
        return Err(Error::State(format!(
            "no prototype slot for class {c} (have {})",
            prototypes.num_classes()
        )));
    }
    let present: Vec<(usize, &[f64])> = prototypes.present().collect();
    let mut grad = Matrix::zeros(n, z.cols());
    let mut value = 0.0;
    if n == 0 {
        return Ok(LossGrad { value, grad });
    }
    let mut logits = vec![0.0; present.len()];
    for i in 0..n {
        let class = batch.class_ids[i];
        if !active[i] || prototypes.get(class).is_none() {
            continue;
        }
        let zi = z.row(i);
        for (l, (_, o)) in logits.iter_mut().zip(&present) {
            *l = dot(zi, o) / h.tau;
        }
        let lse = log_sum_exp(logits.iter().copied());
        let target = present
            .iter()
            .position(|&(k, _)| k == class)
            .expect("class is present");
        value -= (logits[target] - lse) / n as f64;
        // d value / d z_i = -(O_y - sum_k p_k O_k) / (tau n)
        let g = grad.row_mut(i);
        for (idx, (_, o)) in present.iter().enumerate() {
            let p = (logits[idx] - lse).exp();
            let c = (p - f64::from(u8::from(idx == target))) / (h.tau * n as f64);
            for (gi, &ov) in g.iter_mut().zip(o.iter()) {
                *gi += c * ov;
            }
        }
    }
    Ok(LossGrad { value, grad })
}

/// Local class-aware contrastive loss for a labeled client.
pub fn lcc_labeled(batch: &ContrastiveBatch, h: &LossHyper) -> LossGrad {
    let all = vec![true; batch.views()];
    local_contrastive(batch, &all, &all, h)
}

/// Local class-aware contrastive loss for an unlabeled client: anchors and
/// positives are restricted to confident views.
pub fn lcc_unlabeled(batch: &ContrastiveBatch, h: &LossHyper) -> LossGrad {
    let confident: Vec<bool> = batch
        .confidences
        .iter()
        .map(|&c| h.is_confident(c))
        .collect();
    local_contrastive(batch, &confident, &confident, h)
}

/// Global class-aware contrastive loss for a labeled client.
pub fn gcc_labeled(
    batch: &ContrastiveBatch,
    prototypes: &GlobalPrototypes,
    h: &LossHyper,
) -> Result<LossGrad> {
    global_contrastive(batch, &vec![true; batch.views()], prototypes, h)
}

/// Global class-aware contrastive loss for an unlabeled client: only
/// confident views contribute, against their pseudo class.
pub fn gcc_unlabeled(
    batch: &ContrastiveBatch,
    prototypes: &GlobalPrototypes,
    h: &LossHyper,
) -> Result<LossGrad> {
    let confident: Vec<bool> = batch
        .confidences
        .iter()
        .map(|&c| h.is_confident(c))
        .collect();
    global_contrastive(batch, &confident, prototypes, h)
}

/// Component values of a client objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub basic: f64,
    pub lcc: f64,
    pub gcc: f64,
}

/// `basic + lambda_lcc * lcc + lambda_gcc * gcc` for a labeled client.
pub fn total_labeled(parts: &LossParts, h: &LossHyper) -> f64 {
    combine(parts, h)
}

/// `basic + lambda_lcc * lcc + lambda_gcc * gcc` for an unlabeled client.
pub fn total_unlabeled(parts: &LossParts, h: &LossHyper) -> f64 {
    combine(parts, h)
}

fn combine(parts: &LossParts, h: &LossHyper) -> f64 {
    let mut total = parts.basic;
    if h.lambda_lcc != 0.0 {
        total += h.lambda_lcc * parts.lcc;
    }
    if h.lambda_gcc != 0.0 {
        total += h.lambda_gcc * parts.gcc;
    }
    total
}
