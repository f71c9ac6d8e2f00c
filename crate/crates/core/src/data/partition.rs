use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use super::{ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, Rng};

/// Dirichlet partitions are re-drawn with an incremented seed until no
/// client is empty, at most this many times.
pub const MAX_DIRICHLET_ATTEMPTS: u64 = 100;

/// Random near-equal split: shard sizes differ by at most one.
pub fn partition_iid(
    samples: &[Sample],
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::Precondition(
            "cannot partition an empty dataset".into(),
        ));
    }
    if num_clients > samples.len() {
        return Err(Error::config(
            "num_clients",
            format!("{num_clients} clients exceed {} samples", samples.len()),
        ));
    }
    let mut rng = rng_from(seed, &[0x11d]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);

    let base = samples.len() / num_clients;
    let extra = samples.len() % num_clients;
    let mut cursor = 0;
    (0..num_clients)
        .map(|client| {
            let size = base + usize::from(client < extra);
            let shard = order[cursor..cursor + size]
                .iter()
                .map(|&i| samples[i].clone())
                .collect();
            cursor += size;
            shard_for(client, shard)
        })
        .collect()
}

/// Label-skewed split: each class is divided among clients with proportions
/// drawn from a symmetric Dirichlet(`gamma`).
pub fn partition_dirichlet(
    samples: &[Sample],
    num_clients: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be at least 1"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config("gamma", "must be a positive finite number"));
    }
    if let Some(pos) = samples.iter().position(|s| s.label.is_none()) {
        return Err(Error::Precondition(format!(
            "dirichlet partitioning needs labels; sample {pos} is unlabeled"
        )));
    }
    if num_clients > samples.len() {
        return Err(Error::config(
            "num_clients",
            format!("{num_clients} clients exceed {} samples", samples.len()),
        ));
    }

    let num_classes = super::infer_num_classes(samples)?;
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label.expect("checked above")].push(i);
    }

    for attempt in 0..MAX_DIRICHLET_ATTEMPTS {
        let mut rng = rng_from(derive_seed(seed, &[attempt]), &[0xd1c]);
        let assignment = dirichlet_assignment(&by_class, num_clients, gamma, &mut rng)?;
        if assignment.iter().all(|idx| !idx.is_empty()) {
            return assignment
                .into_iter()
                .enumerate()
                .map(|(client, idx)| {
                    shard_for(
                        client,
                        idx.into_iter().map(|i| samples[i].clone()).collect(),
                    )
                })
                .collect();
        }
    }
    Err(Error::State(format!(
        "dirichlet partition left a client empty after {MAX_DIRICHLET_ATTEMPTS} attempts"
    )))
}

fn dirichlet_assignment(
    by_class: &[Vec<usize>],
    num_clients: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let gamma_dist = Gamma::new(gamma, 1.0)
        .map_err(|e| Error::config("gamma", format!("invalid gamma: {e}")))?;
    let mut clients = vec![Vec::new(); num_clients];
    for members in by_class {
        let mut members = members.clone();
        members.shuffle(rng);
        let draws: Vec<f64> = (0..num_clients).map(|_| gamma_dist.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        let proportions: Vec<f64> = if total > 0.0 {
            draws.iter().map(|d| d / total).collect()
        } else {
            // All gamma draws underflowed; the limit puts the whole class on one client.
            let winner = rng.random_range(0..num_clients);
            (0..num_clients)
                .map(|c| f64::from(u8::from(c == winner)))
                .collect()
        };

        let n = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (client, p) in proportions.iter().enumerate() {
            cumulative += p;
            let end = if client + 1 == num_clients {
                n
            } else {
                ((cumulative * n as f64) as usize).clamp(start, n)
            };
            clients[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    Ok(clients)
}

/// Marks `round(labeled_fraction * count)` clients (at least one) as labeled,
/// uniformly at random; the rest become unlabeled with labels sealed.
pub fn assign_roles(
    clients: Vec<ClientDataset>,
    labeled_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::config("labeled_fraction", "must lie in (0, 1]"));
    }
    if clients.is_empty() {
        return Ok(clients);
    }
    let count =
        ((labeled_fraction * clients.len() as f64).round() as usize).clamp(1, clients.len());
    let mut rng = rng_from(seed, &[0x201e]);
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.shuffle(&mut rng);
    let mut labeled = vec![false; clients.len()];
    for &i in &order[..count] {
        labeled[i] = true;
    }
    clients
        .into_iter()
        .zip(labeled)
        .map(|(c, is_labeled)| {
            if is_labeled {
                c.into_unsealed()
            } else {
                c.into_sealed()
            }
        })
        .collect()
}

fn shard_for(client: usize, samples: Vec<Sample>) -> Result<ClientDataset> {
    if samples.iter().all(|s| s.label.is_some()) {
        ClientDataset::new_labeled(client, samples)
    } else {
        ClientDataset::new_unlabeled(client, samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_blobs, Role};

    fn labeled_points(n: usize, classes: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample::labeled(vec![i as f64, 0.0], i % classes))
            .collect()
    }

    fn sorted_ids(clients: &[ClientDataset]) -> Vec<i64> {
        let mut ids: Vec<i64> = clients
            .iter()
            .flat_map(|c| c.samples().iter().map(|s| s.features[0] as i64))
            .collect();
        ids.sort_unstable();
        ids
    }

    #[test]
    fn iid_exact_division() {
        let clients = partition_iid(&labeled_points(100, 10), 50, 3).unwrap();
        assert_eq!(clients.len(), 50);
        assert!(clients.iter().all(|c| c.len() == 2));
        assert_eq!(sorted_ids(&clients), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn iid_sizes_differ_by_at_most_one() {
        let clients = partition_iid(&labeled_points(103, 10), 7, 3).unwrap();
        let sizes: Vec<usize> = clients.iter().map(ClientDataset::len).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 103);
    }

    #[test]
    fn iid_rejects_more_clients_than_samples() {
        let err = partition_iid(&labeled_points(3, 2), 4, 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn iid_histograms_pass_chi_square() {
        // 10 balanced classes x 100, 5 shards of 200: expected 20 per class.
        // Chi-square with 9 degrees of freedom, 99% quantile 21.666.
        let samples = labeled_points(1000, 10);
        let mut exceed = 0;
        let trials = 40 * 5;
        for seed in 0..40 {
            for c in partition_iid(&samples, 5, seed).unwrap() {
                let hist = c.class_histogram(10);
                let chi: f64 = hist
                    .iter()
                    .map(|&o| {
                        let d = o as f64 - 20.0;
                        d * d / 20.0
                    })
                    .sum();
                if chi > 21.666 {
                    exceed += 1;
                }
            }
        }
        assert!(
            (exceed as f64) / (trials as f64) < 0.05,
            "{exceed}/{trials} shards exceeded the 99% threshold"
        );
    }

    #[test]
    fn dirichlet_conserves_class_totals() {
        let samples = synthesize_blobs(5, 2, 40, 1.0, 9).unwrap();
        let clients = partition_dirichlet(&samples, 8, 1.0, 4).unwrap();
        assert!(clients.iter().all(|c| !c.is_empty()));
        let mut totals = vec![0; 5];
        for c in &clients {
            for (t, h) in totals.iter_mut().zip(c.class_histogram(5)) {
                *t += h;
            }
        }
        assert_eq!(totals, vec![40; 5]);
    }

    #[test]
    fn dirichlet_large_gamma_approaches_uniform() {
        let samples = labeled_points(2000, 10);
        let mut tv_sum = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let clients = partition_dirichlet(&samples, 5, 1000.0, seed).unwrap();
            let mut tv = 0.0;
            for class in 0..10 {
                let counts: Vec<f64> = clients
                    .iter()
                    .map(|c| c.class_histogram(10)[class] as f64)
                    .collect();
                let total: f64 = counts.iter().sum();
                tv += 0.5 * counts.iter().map(|&x| (x / total - 0.2).abs()).sum::<f64>();
            }
            tv_sum += tv / 10.0;
        }
        let mean_tv = tv_sum / seeds as f64;
        assert!(mean_tv < 0.05, "mean total variation {mean_tv}");
    }

    #[test]
    fn dirichlet_requires_labels() {
        let mut samples = labeled_points(10, 2);
        samples[3].label = None;
        assert!(matches!(
            partition_dirichlet(&samples, 2, 1.0, 0).unwrap_err(),
            Error::Precondition(_)
        ));
        assert!(partition_dirichlet(&labeled_points(10, 2), 2, 0.0, 0).is_err());
    }

    #[test]
    fn dirichlet_exhaustion_is_reported() {
        // Two samples of one class over three clients can never fill every client.
        let samples = vec![Sample::labeled(vec![0.0], 0), Sample::labeled(vec![1.0], 0)];
        assert!(partition_dirichlet(&samples, 3, 1.0, 0).is_err());
    }

    #[test]
    fn roles_follow_fraction() {
        let clients = partition_iid(&labeled_points(100, 10), 50, 0).unwrap();
        let assigned = assign_roles(clients.clone(), 0.1, 5).unwrap();
        let labeled = assigned
            .iter()
            .filter(|c| c.role() == Role::Labeled)
            .count();
        assert_eq!(labeled, 5);
        assert!(assigned
            .iter()
            .filter(|c| c.role() == Role::Unlabeled)
            .all(|c| c.samples().iter().all(|s| s.label.is_none())));
        assert_eq!(assigned, assign_roles(clients.clone(), 0.1, 5).unwrap());

        let all = assign_roles(clients.clone(), 1.0, 5).unwrap();
        assert!(all.iter().all(ClientDataset::is_labeled));

        let tiny = assign_roles(clients, 0.001, 5).unwrap();
        assert_eq!(tiny.iter().filter(|c| c.is_labeled()).count(), 1);
    }

    #[test]
    fn roles_reject_bad_fraction() {
        let clients = partition_iid(&labeled_points(10, 2), 2, 0).unwrap();
        assert!(assign_roles(clients.clone(), 0.0, 0).is_err());
        assert!(assign_roles(clients, 1.5, 0).is_err());
    }
}
