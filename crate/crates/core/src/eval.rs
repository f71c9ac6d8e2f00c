//! Test-set metrics, pseudo-label diagnostics and the training-stability
//! statistic.
//!
//! Precision, recall and F1 are macro averages over all classes, with empty
//! denominators counted as 0. AUC is one-vs-rest per class with tied scores
//! counted half; classes with no positives or no negatives are left out of
//! the macro average (0.5 if no class qualifies).

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::losses::LossHyper;
use crate::matrix::{argmax, Matrix};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_auc: f64,
    pub micro_auc: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Metrics of one federated round, evaluated with the new global model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub accuracy: f64,
    pub macro_auc: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub mean_auth_fraction: f64,
    pub pseudo_label_accuracy: Option<f64>,
}

/// Row-major `actual x predicted` counts.
pub fn confusion_matrix(probs: &Matrix, labels: &[usize]) -> Result<Vec<Vec<u64>>> {
    let c = probs.cols();
    if probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let mut cm = vec![vec![0u64; c]; c];
    for (row, &l) in probs.iter_rows().zip(labels) {
        if l >= c {
            return Err(Error::Precondition(format!("label {l} outside 0..{c}")));
        }
        cm[l][argmax(row)] += 1;
    }
    Ok(cm)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1 macro-averaged from a confusion matrix.
pub fn macro_scores(cm: &[Vec<u64>]) -> (f64, f64, f64) {
    let c = cm.len();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = cm[k][k] as f64;
        let predicted: f64 = (0..c).map(|a| cm[a][k] as f64).sum();
        let actual: f64 = cm[k].iter().map(|&v| v as f64).sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += ratio(2.0 * p * r, p + r);
    }
    let c = c as f64;
    (p_sum / c, r_sum / c, f_sum / c)
}

/// Rank-sum AUC with average ranks for ties. None when one side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

pub fn classification_metrics(probs: &Matrix, labels: &[usize]) -> Result<ClassificationMetrics> {
    if labels.is_empty() {
        return Err(Error::State("cannot evaluate an empty test set".into()));
    }
    let cm = confusion_matrix(probs, labels)?;
    let correct: u64 = (0..cm.len()).map(|k| cm[k][k]).sum();
    let accuracy = correct as f64 / labels.len() as f64;
    let (macro_precision, macro_recall, macro_f1) = macro_scores(&cm);

    let mut aucs = Vec::new();
    let mut all_scores = Vec::with_capacity(probs.rows() * probs.cols());
    let mut all_positive = Vec::with_capacity(probs.rows() * probs.cols());
    for k in 0..probs.cols() {
        let scores: Vec<f64> = probs.iter_rows().map(|r| r[k]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Some(a) = binary_auc(&scores, &positive) {
            aucs.push(a);
        }
        all_scores.extend(scores);
        all_positive.extend(positive);
    }
    let macro_auc = if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };
    let micro_auc = binary_auc(&all_scores, &all_positive).unwrap_or(0.5);
    Ok(ClassificationMetrics {
        accuracy,
        macro_auc,
        micro_auc,
        macro_precision,
        macro_recall,
        macro_f1,
    })
}

/// Population standard deviation of the last `window` values.
pub fn stability_std(history: &[f64], window: usize) -> Result<f64> {
    if window == 0 || window > history.len() {
        return Err(Error::Range(format!(
            "window {window} does not fit a history of {} values",
            history.len()
        )));
    }
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
    Ok(var.sqrt())
}

/// Pseudo-label quality on one unlabeled client, measured against its sealed labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelStats {
    pub client_id: usize,
    pub samples: usize,
    pub confident: usize,
    pub correct: usize,
}

impl PseudoLabelStats {
    pub fn coverage(&self) -> f64 {
        ratio(self.confident as f64, self.samples as f64)
    }

    /// Fraction of confident pseudo labels that are right; None without any.
    pub fn accuracy(&self) -> Option<f64> {
        (self.confident > 0).then(|| self.correct as f64 / self.confident as f64)
    }
}

pub fn pseudo_label_report(
    params: &ModelParams,
    clients: &[&ClientDataset],
    h: &LossHyper,
) -> Result<Vec<PseudoLabelStats>> {
    let dim = params.arch().input_dim;
    clients
        .iter()
        .map(|c| {
            let inputs = Matrix::from_rows(c.samples().iter().map(|s| s.features.as_slice()), dim)?;
            let probs = params.predict(&inputs)?;
            let oracle = c.oracle_labels();
            let mut stats = PseudoLabelStats {
                client_id: c.client_id,
                samples: c.len(),
                confident: 0,
                correct: 0,
            };
            for (row, truth) in probs.iter_rows().zip(oracle) {
                let k = argmax(row);
                if h.is_confident(row[k]) {
                    stats.confident += 1;
                    if truth == Some(k) {
                        stats.correct += 1;
                    }
                }
            }
            Ok(stats)
        })
        .collect()
}

/// Pooled accuracy of confident pseudo labels over several clients.
pub fn pooled_pseudo_accuracy(stats: &[PseudoLabelStats]) -> Option<f64> {
    let confident: usize = stats.iter().map(|s| s.confident).sum();
    let correct: usize = stats.iter().map(|s| s.correct).sum();
    (confident > 0).then(|| correct as f64 / confident as f64)
}
