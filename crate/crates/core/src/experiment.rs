//! Turns a [`RunConfig`] into a federation, runs it, and persists the run's
//! artifacts: the echoed config, the metrics log, the final checkpoint, the
//! prototype ledger dump and a summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::client::LocalSettings;
use crate::config::{DatasetKind, Method, PartitionKind, RunConfig, SweepConfig};
use crate::data::{
    assign_roles, infer_num_classes, partition_dirichlet, partition_iid, read_cifar10_binary,
    read_samples, split_per_class, synthesize_blobs, ClientDataset, Sample,
};
use crate::error::{Error, Result};
use crate::eval::{stability_std, MetricsRecord};
use crate::model::{Architecture, ModelParams};
use crate::rng::{derive_seed, rng_from, stream};
use crate::server::{Aggregation, Federation, FederationSetup, TrainingHistory};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PROTOTYPES_FILE: &str = "prototypes.txt";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const ERROR_FILE: &str = "error.toml";

pub const METRICS_HEADER: &str = "round,accuracy,auc,precision,f1,auth_fraction,pseudo_acc";

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "DCCFSSL_WORKERS";

/// Worker count from the environment, defaulting to the available cores.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(usize::from)
                .unwrap_or(1)
        })
}

/// Data, model and federation settings derived from a config.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub clients: Vec<ClientDataset>,
    pub test: Vec<Sample>,
    pub init: ModelParams,
    pub setup: FederationSetup,
}

fn load_files(paths: &[PathBuf], kind: DatasetKind) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(match kind {
            DatasetKind::Cifar10 => read_cifar10_binary(p)?,
            _ => read_samples(p)?,
        });
    }
    Ok(out)
}

fn load_dataset(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Blobs => {
            let all = synthesize_blobs(
                d.num_classes,
                d.dim,
                d.train_per_class + d.test_per_class,
                d.spread,
                derive_seed(cfg.seed, &[stream::DATA]),
            )?;
            Ok(split_per_class(all, d.train_per_class))
        }
        DatasetKind::Text | DatasetKind::Cifar10 => {
            let train = load_files(&d.train_paths, d.kind)?;
            let test_path = d.test_path.as_ref().expect("validated");
            let test = load_files(std::slice::from_ref(test_path), d.kind)?;
            if train.iter().chain(&test).any(|s| s.label.is_none()) {
                return Err(Error::Precondition(
                    "dataset files must be fully labeled".into(),
                ));
            }
            Ok((train, test))
        }
    }
}

pub fn prepare(cfg: &RunConfig, workers: usize) -> Result<PreparedRun> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Precondition(
            "training and test sets must be nonempty".into(),
        ));
    }
    let input_dim = train[0].features.len();
    let both: Vec<Sample> = train.iter().chain(&test).cloned().collect();
    let num_classes = infer_num_classes(&both)?;
    crate::data::validate_samples(&both, input_dim, num_classes)?;

    let partition_seed = derive_seed(cfg.seed, &[stream::PARTITION]);
    let shards = match cfg.partition.kind {
        PartitionKind::Iid => partition_iid(&train, cfg.num_clients, partition_seed)?,
        PartitionKind::Dirichlet => {
            partition_dirichlet(&train, cfg.num_clients, cfg.partition.gamma, partition_seed)?
        }
    };
    let mut clients = assign_roles(
        shards,
        cfg.labeled_fraction,
        derive_seed(cfg.seed, &[stream::ROLES]),
    )?;
    if cfg.method == Method::FedavgSlUpper {
        clients = clients
            .into_iter()
            .map(ClientDataset::into_unsealed)
            .collect::<Result<_>>()?;
    }

    let arch = Architecture {
        input_dim,
        hidden_dims: cfg.model.hidden_dims.clone(),
        repr_dim: cfg.model.repr_dim,
        num_classes,
        normalize_repr: cfg.model.normalize_repr,
    };
    let init = ModelParams::init(arch, &mut rng_from(cfg.seed, &[stream::INIT]))?;

    let mut hyper = cfg.loss;
    let (aggregation, labeled_only) = match cfg.method {
        Method::Dccfssl => (Aggregation::Authenticated, false),
        Method::FedavgFixmatch => {
            hyper.lambda_lcc = 0.0;
            hyper.lambda_gcc = 0.0;
            (Aggregation::Uniform, false)
        }
        Method::FedavgSlLower | Method::FedavgSlUpper => {
            hyper.lambda_lcc = 0.0;
            hyper.lambda_gcc = 0.0;
            (Aggregation::Uniform, cfg.method == Method::FedavgSlLower)
        }
    };
    let setup = FederationSetup {
        rounds: cfg.rounds,
        clients_per_round: cfg.clients_per_round,
        warmup_fraction: cfg.warmup_fraction,
        labeled_only,
        aggregation,
        local: LocalSettings {
            client: cfg.client.clone(),
            hyper,
            augment: cfg.augment,
        },
        seed: cfg.seed,
        workers,
    };
    Ok(PreparedRun {
        clients,
        test,
        init,
        setup,
    })
}

/// Builds and runs the federation for `cfg` without writing anything.
pub fn train(cfg: &RunConfig, workers: usize) -> Result<TrainingHistory> {
    let prepared = prepare(cfg, workers)?;
    let mut fed = Federation::new(
        prepared.setup,
        prepared.clients,
        &prepared.test,
        prepared.init,
    )?;
    fed.run()?;
    Ok(fed.into_history())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics log text: mandatory header, then one line per round.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.accuracy,
            r.macro_auc,
            r.macro_precision,
            r.macro_f1,
            r.mean_auth_fraction,
            fmt_opt(r.pseudo_label_accuracy)
        )
        .expect("write to string");
    }
    out
}

pub fn parse_metrics_csv(text: &str, source_name: &str) -> Result<Vec<MetricsRecord>> {
    let err = |line: usize, reason: String| Error::Format {
        source_name: source_name.to_string(),
        location: format!("line {line}"),
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((_, h)) => {
            return Err(err(
                1,
                format!("expected header `{METRICS_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(err(1, "missing header".into())),
    }
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(
                lineno,
                format!("expected 7 columns, found {}", fields.len()),
            ));
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| err(lineno, format!("column {}: {e}", idx + 1)))
        };
        let round = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| err(lineno, format!("round: {e}")))?;
        if out.last().is_some_and(|r| r.round >= round) {
            return Err(err(lineno, format!("round {round} does not increase")));
        }
        let pseudo = if fields[6].trim().is_empty() {
            None
        } else {
            Some(num(6)?)
        };
        out.push(MetricsRecord {
            round,
            accuracy: num(1)?,
            macro_auc: num(2)?,
            macro_precision: num(3)?,
            macro_f1: num(4)?,
            mean_auth_fraction: num(5)?,
            pseudo_label_accuracy: pseudo,
        });
    }
    Ok(out)
}

pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text, &path.display().to_string())
}

/// Final numbers of a run, also written as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: Option<f64>,
    pub final_auc: Option<f64>,
    pub final_precision: Option<f64>,
    pub final_f1: Option<f64>,
    pub stability_window: usize,
    pub stability_std: Option<f64>,
    pub labeled_clients: usize,
    pub unlabeled_clients: usize,
    pub mu: f64,
}

impl RunSummary {
    fn new(cfg: &RunConfig, history: &TrainingHistory) -> Result<Self> {
        let last = history.records.last();
        let accuracy: Vec<f64> = history.records.iter().map(|r| r.accuracy).collect();
        let window = cfg.stability_window(accuracy.len());
        let std = if accuracy.is_empty() {
            None
        } else {
            Some(stability_std(&accuracy, window)?)
        };
        let ledger = &history.ledger;
        let labeled = (0..ledger.clients())
            .filter(|&i| ledger.role(i) == crate::data::Role::Labeled)
            .count();
        Ok(Self {
            method: cfg.method.as_str().to_string(),
            seed: cfg.seed,
            rounds: history.records.len(),
            final_accuracy: last.map(|r| r.accuracy),
            final_auc: last.map(|r| r.macro_auc),
            final_precision: last.map(|r| r.macro_precision),
            final_f1: last.map(|r| r.macro_f1),
            stability_window: window,
            stability_std: std,
            labeled_clients: labeled,
            unlabeled_clients: ledger.clients() - labeled,
            mu: ledger.mu(),
        })
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a structured record of `err` into `out_dir`.
pub fn write_error_record(out_dir: &Path, err: &Error) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let record = ErrorRecord {
        kind: err.kind(),
        exit_code: err.exit_code(),
        message: err.to_string(),
    };
    write_file(
        &out_dir.join(ERROR_FILE),
        toml::to_string(&record).expect("error record serializes"),
    )
}

/// Runs one configured experiment and writes its artifacts into `out_dir`.
/// On failure an error record is written there before the error is returned.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path, workers: usize) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let result = (|| {
        let mut echoed = cfg.clone();
        echoed.out_dir = None;
        write_file(&out_dir.join(CONFIG_FILE), echoed.to_toml_string())?;
        let history = train(cfg, workers)?;
        write_file(
            &out_dir.join(METRICS_FILE),
            metrics_to_csv(&history.records),
        )?;
        history
            .final_model
            .write_checkpoint(out_dir.join(CHECKPOINT_FILE))?;
        write_file(&out_dir.join(PROTOTYPES_FILE), history.ledger.to_text())?;
        let summary = RunSummary::new(cfg, &history)?;
        write_file(
            &out_dir.join(SUMMARY_FILE),
            toml::to_string(&summary).expect("summary serializes"),
        )?;
        Ok(summary)
    })();
    if let Err(e) = &result {
        write_error_record(out_dir, e)?;
    }
    result
}

/// Runs every point of a grid, one directory per run, in grid order.
pub fn run_sweep(grid: &SweepConfig, workers: usize) -> Result<Vec<(String, RunSummary)>> {
    grid.expand()?
        .into_iter()
        .map(|run| {
            let dir = run
                .config
                .out_dir
                .clone()
                .expect("sweep runs carry a directory");
            run_experiment(&run.config, &dir, workers).map(|s| (run.name, s))
        })
        .collect()
}
