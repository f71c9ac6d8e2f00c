#![allow(dead_code)]

use dccfssl::losses::LossHyper;
use dccfssl::matrix::Matrix;
use dccfssl::model::{Architecture, ModelParams};
use dccfssl::rng::{rng_from, Rng};
use dccfssl::server::GlobalPrototypes;
use rand::Rng as _;

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let values = (0..rows * cols)
        .map(|_| uniform(rng, -scale, scale))
        .collect();
    Matrix::from_vec(rows, cols, values).unwrap()
}

pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// A random contrastive instance: 2N views over `dim` coordinates with
/// per-image classes and confidences.
#[derive(Debug, Clone)]
pub struct Instance {
    pub z: Matrix,
    pub image_classes: Vec<usize>,
    pub image_conf: Vec<f64>,
    pub num_classes: usize,
    pub tau: f64,
}

impl Instance {
    pub fn view_classes(&self) -> Vec<usize> {
        self.image_classes.iter().flat_map(|&c| [c, c]).collect()
    }

    pub fn view_conf(&self) -> Vec<f64> {
        self.image_conf.iter().flat_map(|&c| [c, c]).collect()
    }
}

pub fn random_instance(rng: &mut Rng, max_images: usize, max_dim: usize) -> Instance {
    let images = rng.random_range(1..=max_images);
    let dim = rng.random_range(2..=max_dim);
    let num_classes = rng.random_range(2..=4);
    Instance {
        z: normalize_rows(&random_matrix(rng, 2 * images, dim, 1.0)),
        image_classes: (0..images)
            .map(|_| rng.random_range(0..num_classes))
            .collect(),
        image_conf: (0..images).map(|_| uniform(rng, 0.5, 1.0)).collect(),
        num_classes,
        tau: uniform(rng, 0.3, 1.5),
    }
}

/// Prototypes for some classes; each class is kept with probability `keep`.
pub fn random_prototypes(rng: &mut Rng, classes: usize, dim: usize, keep: f64) -> GlobalPrototypes {
    let vectors = (0..classes)
        .map(|_| {
            (rng.random::<f64>() < keep).then(|| {
                let v: Vec<f64> = (0..dim).map(|_| uniform(rng, -1.0, 1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
        })
        .collect();
    GlobalPrototypes::from_vectors(dim, vectors).unwrap()
}

fn sim(z: &Matrix, i: usize, j: usize, tau: f64) -> f64 {
    let mut s = 0.0;
    for d in 0..z.cols() {
        s += z.get(i, d) * z.get(j, d);
    }
    s / tau
}

/// Local class-aware contrastive loss by direct double loop. `gate[v]` says
/// whether view `v` may act as anchor or positive.
pub fn brute_local(z: &Matrix, classes: &[usize], gate: &[bool], tau: f64, sibling: bool) -> f64 {
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        if !gate[i] {
            continue;
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += sim(z, i, j, tau).exp();
            }
        }
        let mut positives = Vec::new();
        for s in 0..n {
            let same_image = s / 2 == i / 2;
            if s != i && gate[s] && classes[s] == classes[i] && (!same_image || sibling) {
                positives.push(s);
            }
        }
        let mut inner = 0.0;
        for &s in &positives {
            inner += (sim(z, i, s, tau).exp() / denom).ln();
        }
        total -= inner / (1.0 + positives.len() as f64);
    }
    total
}

/// Global class-aware contrastive loss by direct loop over views and present
/// prototypes, averaged over all views.
pub fn brute_global(
    z: &Matrix,
    classes: &[usize],
    gate: &[bool],
    protos: &GlobalPrototypes,
    tau: f64,
) -> f64 {
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        let Some(target) = protos.get(classes[i]) else {
            continue;
        };
        if !gate[i] {
            continue;
        }
        let score = |o: &[f64]| (0..z.cols()).map(|d| z.get(i, d) * o[d]).sum::<f64>() / tau;
        let mut denom = 0.0;
        for k in 0..protos.num_classes() {
            if let Some(o) = protos.get(k) {
                denom += score(o).exp();
            }
        }
        total -= (score(target).exp() / denom).ln();
    }
    total / n as f64
}

pub fn confidence_gate(conf: &[f64], h: &LossHyper) -> Vec<bool> {
    conf.iter().map(|&c| c >= h.t_thr).collect()
}

/// Central finite differences of `f` at `x`.
pub fn finite_diff(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let up = f(&probe);
            probe[k] = orig - step;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error ||a - b|| / max(||b||, floor).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

pub fn small_arch(input_dim: usize, classes: usize, normalize: bool) -> Architecture {
    Architecture {
        input_dim,
        hidden_dims: vec![8],
        repr_dim: 6,
        num_classes: classes,
        normalize_repr: normalize,
    }
}

pub fn random_params(arch: Architecture, seed: u64) -> ModelParams {
    ModelParams::init(arch, &mut rng_from(seed, &[99])).unwrap()
}

/// Population standard deviation of the trailing `window` values, computed
/// with a two-pass sum.
pub fn trailing_std(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    (tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window as f64).sqrt()
}
