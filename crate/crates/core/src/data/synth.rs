use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::rng_from;

const MEANS_STREAM: u64 = 0x6d65_616e;
const POINTS_STREAM: u64 = 0x0070_7473;

/// Class centers used by [`synthesize_blobs`] for a given seed: one standard
/// normal vector per class.
pub fn blob_means(num_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed, &[MEANS_STREAM]);
    (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Isotropic Gaussian blobs, `per_class` points around each of the
/// [`blob_means`]. Output is class-major: all of class 0, then class 1, ...
pub fn synthesize_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "need at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::config("dim", "need at least 2 feature dimensions"));
    }
    if per_class < 1 {
        return Err(Error::config(
            "per_class",
            "need at least 1 sample per class",
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config("spread", "must be finite and non-negative"));
    }
    let means = blob_means(num_classes, dim, seed);
    let mut rng = rng_from(seed, &[POINTS_STREAM]);
    let mut out = Vec::with_capacity(num_classes * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + spread * z
                })
                .collect();
            out.push(Sample::labeled(features, class));
        }
    }
    Ok(out)
}

/// Splits a labeled set into (first `head` of each class, the rest),
/// preserving order within each part.
pub fn split_per_class(samples: Vec<Sample>, head: usize) -> (Vec<Sample>, Vec<Sample>) {
    let mut seen = std::collections::HashMap::<Option<usize>, usize>::new();
    let mut first = Vec::new();
    let mut rest = Vec::new();
    for s in samples {
        let count = seen.entry(s.label).or_insert(0);
        if *count < head {
            first.push(s);
        } else {
            rest.push(s);
        }
        *count += 1;
    }
    (first, rest)
}
