//! Round orchestration: client selection, dispatch of the global model and
//! prototypes, concurrent local training, and sequential aggregation.

mod aggregate;

pub use aggregate::{
    ama, apa, uniform_average, GlobalPrototypes, LocalPrototypes, PrototypeLedger,
};

use rand::seq::index;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::client::{local_train, LocalResult, LocalSettings};
use crate::data::{ClientDataset, Role, Sample};
use crate::error::{Error, Result};
use crate::eval::{
    classification_metrics, pooled_pseudo_accuracy, pseudo_label_report, MetricsRecord,
};
use crate::matrix::Matrix;
use crate::model::ModelParams;
use crate::rng::{derive_seed, rng_from, stream, Rng};

/// How local models are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Weights proportional to authentication counts.
    Authenticated,
    /// Plain mean of the selected models.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationSetup {
    pub rounds: usize,
    pub clients_per_round: usize,
    /// Fraction of rounds, from the start, in which only labeled clients are eligible.
    pub warmup_fraction: f64,
    /// Restrict selection to labeled clients for the whole run.
    pub labeled_only: bool,
    pub aggregation: Aggregation,
    pub local: LocalSettings,
    pub seed: u64,
    /// Worker threads for local training. Does not affect results.
    pub workers: usize,
}

/// Clients selected for one round and the seed each one trains with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: usize,
    pub selected: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl RoundPlan {
    /// Seeds every selected client from (run seed, round, client id).
    pub fn new(round: usize, mut selected: Vec<usize>, run_seed: u64) -> Self {
        selected.sort_unstable();
        let seeds = selected
            .iter()
            .map(|&c| derive_seed(run_seed, &[stream::CLIENT, round as u64, c as u64]))
            .collect();
        Self {
            round,
            selected,
            seeds,
        }
    }

    fn validate(&self, total: usize) -> Result<()> {
        if self.selected.is_empty() {
            return Err(Error::Precondition(format!(
                "round {} selects no clients",
                self.round
            )));
        }
        if self.seeds.len() != self.selected.len() {
            return Err(Error::Precondition(
                "one seed per selected client is required".into(),
            ));
        }
        if let Some(&c) = self.selected.iter().find(|&&c| c >= total) {
            return Err(Error::Precondition(format!("client {c} is not registered")));
        }
        if self.selected.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition(
                "selected ids must be distinct and ascending".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `k` distinct ids uniformly from the eligible pool (labeled clients
/// during warm-up, everyone otherwise), returned in ascending order.
pub fn sample_clients(
    total: usize,
    k: usize,
    warmup_labeled_only: bool,
    labeled_ids: &[usize],
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let pool: Vec<usize> = if warmup_labeled_only {
        labeled_ids.to_vec()
    } else {
        (0..total).collect()
    };
    if k == 0 || k > pool.len() {
        return Err(Error::config(
            "clients_per_round",
            format!("cannot select {k} clients from a pool of {}", pool.len()),
        ));
    }
    let mut chosen: Vec<usize> = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Output of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainingHistory {
    pub records: Vec<MetricsRecord>,
    pub final_model: ModelParams,
    pub prototypes: GlobalPrototypes,
    pub ledger: PrototypeLedger,
}

/// Server state plus the simulated clients.
pub struct Federation {
    setup: FederationSetup,
    clients: Vec<ClientDataset>,
    labeled_ids: Vec<usize>,
    test_inputs: Matrix,
    test_labels: Vec<usize>,
    global: ModelParams,
    prototypes: GlobalPrototypes,
    ledger: PrototypeLedger,
    history: Vec<MetricsRecord>,
    pool: rayon::ThreadPool,
}

impl Federation {
    /// `clients[i]` must have `client_id == i`. Prototypes start absent.
    pub fn new(
        setup: FederationSetup,
        clients: Vec<ClientDataset>,
        test: &[Sample],
        init: ModelParams,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("num_clients", "no clients"));
        }
        if let Some((i, _)) = clients.iter().enumerate().find(|(i, c)| c.client_id != *i) {
            return Err(Error::Precondition(format!(
                "client at position {i} has a mismatched id"
            )));
        }
        if setup.clients_per_round == 0 || setup.clients_per_round > clients.len() {
            return Err(Error::config(
                "clients_per_round",
                format!("must lie in 1..={}", clients.len()),
            ));
        }
        let arch = init.arch().clone();
        crate::data::validate_samples(test, arch.input_dim, arch.num_classes)?;
        for c in &clients {
            crate::data::validate_samples(c.samples(), arch.input_dim, arch.num_classes)?;
        }
        let test_labels = test
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Precondition("test samples need labels".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let test_inputs =
            Matrix::from_rows(test.iter().map(|s| s.features.as_slice()), arch.input_dim)?;
        let labeled_ids: Vec<usize> = clients
            .iter()
            .filter(|c| c.is_labeled())
            .map(|c| c.client_id)
            .collect();
        let roles: Vec<Role> = clients.iter().map(ClientDataset::role).collect();
        let ledger =
            PrototypeLedger::new(roles, arch.num_classes, arch.repr_dim, arch.normalize_repr)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(setup.workers.max(1))
            .build()
            .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            prototypes: GlobalPrototypes::empty(arch.num_classes, arch.repr_dim),
            setup,
            clients,
            labeled_ids,
            test_inputs,
            test_labels,
            global: init,
            ledger,
            history: Vec::new(),
            pool,
        })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn prototypes(&self) -> &GlobalPrototypes {
        &self.prototypes
    }

    pub fn ledger(&self) -> &PrototypeLedger {
        &self.ledger
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.history
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn setup(&self) -> &FederationSetup {
        &self.setup
    }

    fn in_warmup(&self, round: usize) -> bool {
        (round as f64) < self.setup.warmup_fraction * self.setup.rounds as f64
    }

    /// Selection for `round`. The count is capped by the eligible pool, which
    /// can be smaller than `clients_per_round` while only labeled clients
    /// are eligible.
    pub fn plan_round(&self, round: usize) -> Result<RoundPlan> {
        let labeled_only = self.setup.labeled_only || self.in_warmup(round);
        let pool = if labeled_only {
            self.labeled_ids.len()
        } else {
            self.clients.len()
        };
        let k = self.setup.clients_per_round.min(pool);
        let mut rng = rng_from(self.setup.seed, &[stream::SELECT, round as u64]);
        let selected = sample_clients(
            self.clients.len(),
            k,
            labeled_only,
            &self.labeled_ids,
            &mut rng,
        )?;
        Ok(RoundPlan::new(round, selected, self.setup.seed))
    }

    /// Runs local training on the planned clients, aggregates, evaluates, and
    /// appends the round's metrics.
    pub fn run_round(&mut self, plan: &RoundPlan) -> Result<MetricsRecord> {
        plan.validate(self.clients.len())?;
        let global = &self.global;
        let prototypes = &self.prototypes;
        let clients = &self.clients;
        let local = &self.setup.local;
        let results: Vec<LocalResult> = self.pool.install(|| {
            plan.selected
                .par_iter()
                .zip(plan.seeds.par_iter())
                .map(|(&id, &seed)| {
                    let mut rng = Rng::seed_from_u64(seed);
                    local_train(
                        global,
                        prototypes,
                        &clients[id],
                        local,
                        &mut rng,
                        plan.round,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let models: Vec<ModelParams> = results.iter().map(|r| r.params.clone()).collect();
        let totals: Vec<u64> = results.iter().map(|r| r.total_auth).collect();
        let new_global = match self.setup.aggregation {
            Aggregation::Authenticated => ama(&models, &totals)?,
            Aggregation::Uniform => uniform_average(&models)?,
        };
        let updates: Vec<(usize, LocalPrototypes)> = results
            .iter()
            .map(|r| (r.client_id, r.prototypes.clone()))
            .collect();
        let new_prototypes = apa(&mut self.ledger, &updates, &self.prototypes)?;
        self.global = new_global;
        self.prototypes = new_prototypes;

        let mean_auth_fraction = results
            .iter()
            .map(|r| r.total_auth as f64 / r.samples as f64)
            .sum::<f64>()
            / results.len() as f64;
        let record = self.evaluate(plan.round + 1, mean_auth_fraction)?;
        self.history.push(record);
        Ok(record)
    }

    fn evaluate(&self, round: usize, mean_auth_fraction: f64) -> Result<MetricsRecord> {
        let probs = self.global.predict(&self.test_inputs)?;
        let m = classification_metrics(&probs, &self.test_labels)?;
        let unlabeled: Vec<&ClientDataset> =
            self.clients.iter().filter(|c| !c.is_labeled()).collect();
        let pseudo_label_accuracy = if unlabeled.is_empty() {
            None
        } else {
            pooled_pseudo_accuracy(&pseudo_label_report(
                &self.global,
                &unlabeled,
                &self.setup.local.hyper,
            )?)
        };
        Ok(MetricsRecord {
            round,
            accuracy: m.accuracy,
            macro_auc: m.macro_auc,
            macro_precision: m.macro_precision,
            macro_f1: m.macro_f1,
            mean_auth_fraction,
            pseudo_label_accuracy,
        })
    }

    /// Runs every remaining round.
    pub fn run(&mut self) -> Result<()> {
        for round in self.history.len()..self.setup.rounds {
            let plan = self.plan_round(round)?;
            self.run_round(&plan)?;
        }
        Ok(())
    }

    pub fn into_history(self) -> TrainingHistory {
        TrainingHistory {
            records: self.history,
            final_model: self.global,
            prototypes: self.prototypes,
            ledger: self.ledger,
        }
    }
}

/// All rounds from the given initial model.
pub fn run_training(
    setup: FederationSetup,
    clients: Vec<ClientDataset>,
    test: &[Sample],
    init: ModelParams,
) -> Result<TrainingHistory> {
    let mut fed = Federation::new(setup, clients, test, init)?;
    fed.run()?;
    Ok(fed.into_history())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn full_pool_is_returned_sorted() {
        let mut rng = rng_from(1, &[]);
        assert_eq!(
            sample_clients(5, 5, false, &[], &mut rng).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn warmup_restricts_to_labeled() {
        let mut rng = rng_from(2, &[]);
        for _ in 0..50 {
            let s = sample_clients(10, 2, true, &[3, 7, 9], &mut rng).unwrap();
            assert!(s.iter().all(|c| [3, 7, 9].contains(c)));
        }
        assert!(matches!(
            sample_clients(10, 4, true, &[3, 7, 9], &mut rng),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn pair_selection_is_uniform() {
        let mut rng = rng_from(3, &[]);
        let draws = 10_000;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *freq
                .entry(sample_clients(5, 2, false, &[], &mut rng).unwrap())
                .or_default() += 1;
        }
        assert_eq!(freq.len(), 10);
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (pair, &n) in &freq {
            assert!(
                (n as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
                "pair {pair:?} drawn {n} times"
            );
        }
    }

    #[test]
    fn plan_seeds_depend_on_round_and_client() {
        let a = RoundPlan::new(0, vec![2, 1], 9);
        assert_eq!(a.selected, vec![1, 2]);
        assert_ne!(a.seeds[0], a.seeds[1]);
        assert_ne!(a.seeds, RoundPlan::new(1, vec![1, 2], 9).seeds);
    }
}
