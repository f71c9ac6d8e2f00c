//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line regardless of output capture; exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use dccfssl::client::{labeled_objective, unlabeled_objective, PseudoTargets};
use dccfssl::config::{Ablation, Method, RunConfig};
use dccfssl::data::Role;
use dccfssl::eval::stability_std;
use dccfssl::experiment::{run_experiment, train, METRICS_FILE};
use dccfssl::losses::{
    consistency_loss, gcc_labeled, gcc_unlabeled, lcc_labeled, lcc_unlabeled, supervised_loss,
    ContrastiveBatch, LossHyper,
};
use dccfssl::matrix::Matrix;
use dccfssl::model::{softmax_rows, ModelParams, ReprBatch};
use dccfssl::rng::{rng_from, Rng};
use dccfssl::server::{
    ama, apa, uniform_average, GlobalPrototypes, LocalPrototypes, PrototypeLedger,
};
use rand::Rng as _;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-6;
const ALGEBRA_TOL: f64 = 1e-12;
const STD_TOL: f64 = 1e-12;
const SWEEP_BAND: f64 = 0.01;
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<String, String>;
type ReprLoss<'a> = &'a dyn Fn(&ContrastiveBatch) -> dccfssl::losses::LossGrad;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn benchmark() -> RunConfig {
    RunConfig::load(fixture("benchmark.toml")).expect("benchmark fixture parses")
}

fn mean_final_accuracy(cfg: &RunConfig) -> Result<f64, String> {
    let mut total = 0.0;
    for &seed in &BENCH_SEEDS {
        let mut c = cfg.clone();
        c.seed = seed;
        let history = train(&c, 1).map_err(|e| format!("seed {seed}: {e}"))?;
        total += history.records.last().ok_or("no rounds recorded")?.accuracy;
    }
    Ok(total / BENCH_SEEDS.len() as f64)
}

fn with_method(base: &RunConfig, method: Method) -> RunConfig {
    let mut cfg = base.clone();
    cfg.method = method;
    cfg
}

// ---------------------------------------------------------------- 1

fn logit_check(rng: &mut Rng, name: &str, worst: &mut (f64, String)) -> Result<(), String> {
    let n = rng.random_range(1..=4);
    let classes = rng.random_range(2..=6);
    let logits = random_matrix(rng, n, classes, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let conf: Vec<f64> = (0..n).map(|_| uniform(rng, 0.5, 1.0)).collect();
    let h = LossHyper {
        t_thr: 0.75,
        ..LossHyper::default()
    };
    let eval = |flat: &[f64]| {
        let probs = softmax_rows(&Matrix::from_vec(n, classes, flat.to_vec()).unwrap());
        if name == "supervised" {
            supervised_loss(&probs, &labels).unwrap()
        } else {
            consistency_loss(&labels, &conf, &probs, &h).unwrap()
        }
    };
    let analytic = eval(logits.as_slice()).grad.into_vec();
    let numeric = finite_diff(logits.as_slice(), FD_STEP, |x| eval(x).value);
    record(name, &analytic, &numeric, worst)
}

fn record(
    name: &str,
    analytic: &[f64],
    numeric: &[f64],
    worst: &mut (f64, String),
) -> Result<(), String> {
    let err = relative_error(analytic, numeric);
    if err > worst.0 {
        *worst = (err, name.to_string());
    }
    ensure(err <= GRAD_TOL, || {
        format!("{name}: relative error {err:.3e}")
    })
}

fn repr_check(rng: &mut Rng, worst: &mut (f64, String)) -> Result<(), String> {
    let inst = random_instance(rng, 4, 16);
    let dim = inst.z.cols();
    let h = LossHyper {
        tau: inst.tau,
        t_thr: 0.75,
        include_sibling_positive: rng.random(),
        ..LossHyper::default()
    };
    let protos = random_prototypes(rng, inst.num_classes, dim, 0.75);
    let rows = inst.z.rows();
    let build = |flat: &[f64], labeled: bool| {
        let reprs = ReprBatch(Matrix::from_vec(rows, dim, flat.to_vec()).unwrap());
        if labeled {
            ContrastiveBatch::labeled(reprs, &inst.image_classes).unwrap()
        } else {
            ContrastiveBatch::pseudo_labeled(reprs, &inst.image_classes, &inst.image_conf).unwrap()
        }
    };
    let z = inst.z.as_slice();
    let losses: [(&str, bool, ReprLoss); 4] = [
        ("local contrastive (labeled)", true, &|b| lcc_labeled(b, &h)),
        ("global contrastive (labeled)", true, &|b| {
            gcc_labeled(b, &protos, &h).unwrap()
        }),
        ("local contrastive (unlabeled)", false, &|b| {
            lcc_unlabeled(b, &h)
        }),
        ("global contrastive (unlabeled)", false, &|b| {
            gcc_unlabeled(b, &protos, &h).unwrap()
        }),
    ];
    for (name, labeled, f) in losses {
        let analytic = f(&build(z, labeled)).grad.into_vec();
        let numeric = finite_diff(z, FD_STEP, |x| f(&build(x, labeled)).value);
        record(name, &analytic, &numeric, worst)?;
    }
    Ok(())
}

fn objective_check(rng: &mut Rng, seed: u64, worst: &mut (f64, String)) -> Result<(), String> {
    let input = rng.random_range(2..=16);
    let classes = rng.random_range(2..=4);
    let arch = small_arch(input, classes, true);
    let params = random_params(arch.clone(), seed);
    let images = rng.random_range(1..=4);
    let weak = random_matrix(rng, images, input, 1.0);
    let strong = random_matrix(rng, 2 * images, input, 1.0);
    let labels: Vec<usize> = (0..images).map(|_| rng.random_range(0..classes)).collect();
    let targets = PseudoTargets {
        labels: labels.clone(),
        confidences: (0..images).map(|_| uniform(rng, 0.5, 1.0)).collect(),
    };
    let protos = random_prototypes(rng, classes, arch.repr_dim, 0.75);
    let h = LossHyper {
        tau: uniform(rng, 0.5, 1.5),
        t_thr: 0.75,
        lambda_lcc: uniform(rng, 0.2, 2.0),
        lambda_gcc: uniform(rng, 0.2, 2.0),
        ..LossHyper::default()
    };
    let at = |v: &[f64]| ModelParams::from_values(arch.clone(), v.to_vec()).unwrap();
    let lab = |p: &ModelParams| labeled_objective(p, &weak, &strong, &labels, &protos, &h).unwrap();
    let unl = |p: &ModelParams| unlabeled_objective(p, &strong, &targets, &protos, &h).unwrap();
    let theta = params.values();
    let numeric = finite_diff(theta, FD_STEP, |x| lab(&at(x)).value);
    record("labeled total", &lab(&params).grad, &numeric, worst)?;
    let numeric = finite_diff(theta, FD_STEP, |x| unl(&at(x)).value);
    record("unlabeled total", &unl(&params).grad, &numeric, worst)
}

fn gradient_correctness() -> Outcome {
    let mut worst = (0.0, String::new());
    for k in 0..20u64 {
        let mut rng = rng_from(0xC1, &[k]);
        logit_check(&mut rng, "supervised", &mut worst)?;
        logit_check(&mut rng, "consistency", &mut worst)?;
        repr_check(&mut rng, &mut worst)?;
        objective_check(&mut rng, k, &mut worst)?;
    }
    Ok(format!(
        "20 instances x 8 objectives, worst relative error {:.2e} ({})",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------- 2

fn loss_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..200u64 {
        let mut rng = rng_from(0xC2, &[k]);
        let mut inst = random_instance(&mut rng, 4, 16);
        match k % 4 {
            0 => inst.image_conf.iter_mut().for_each(|c| *c = 0.1),
            1 => inst.image_conf.iter_mut().for_each(|c| *c = 1.0),
            _ => {}
        }
        let h = LossHyper {
            tau: inst.tau,
            t_thr: 0.75,
            include_sibling_positive: k % 3 == 0,
            ..LossHyper::default()
        };
        let keep = if k % 5 == 0 { 1.0 } else { 0.6 };
        let protos = random_prototypes(&mut rng, inst.num_classes, inst.z.cols(), keep);
        let classes = inst.view_classes();
        let all = vec![true; inst.z.rows()];
        let gate = confidence_gate(&inst.view_conf(), &h);
        let lab =
            ContrastiveBatch::labeled(ReprBatch(inst.z.clone()), &inst.image_classes).unwrap();
        let unl = ContrastiveBatch::pseudo_labeled(
            ReprBatch(inst.z.clone()),
            &inst.image_classes,
            &inst.image_conf,
        )
        .unwrap();
        let sib = h.include_sibling_positive;
        let pairs = [
            (
                "local labeled",
                lcc_labeled(&lab, &h).value,
                brute_local(&inst.z, &classes, &all, h.tau, sib),
            ),
            (
                "global labeled",
                gcc_labeled(&lab, &protos, &h).unwrap().value,
                brute_global(&inst.z, &classes, &all, &protos, h.tau),
            ),
            (
                "local unlabeled",
                lcc_unlabeled(&unl, &h).value,
                brute_local(&inst.z, &classes, &gate, h.tau, sib),
            ),
            (
                "global unlabeled",
                gcc_unlabeled(&unl, &protos, &h).unwrap().value,
                brute_global(&inst.z, &classes, &gate, &protos, h.tau),
            ),
        ];
        for (name, got, want) in pairs {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= ORACLE_TOL, || {
                format!("batch {k} {name}: {got} vs oracle {want}")
            })?;
        }
        if k % 4 == 0 {
            ensure(
                lcc_unlabeled(&unl, &h).value == 0.0
                    && gcc_unlabeled(&unl, &protos, &h).unwrap().value == 0.0,
                || format!("batch {k}: fully masked batch has nonzero loss"),
            )?;
        }
    }
    Ok(format!(
        "200 batches x 4 losses, max abs deviation {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- 3

fn aggregation_algebra() -> Outcome {
    let arch = small_arch(5, 3, true);
    let models: Vec<ModelParams> = (0..4).map(|s| random_params(arch.clone(), s)).collect();
    let mean: Vec<f64> = (0..arch.param_count())
        .map(|p| models.iter().map(|m| m.values()[p]).sum::<f64>() / 4.0)
        .collect();
    let max_dev = |m: &ModelParams| {
        m.values()
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let equal = ama(&models, &[7, 7, 7, 7]).map_err(|e| e.to_string())?;
    let dev = max_dev(&equal);
    ensure(dev <= ALGEBRA_TOL, || {
        format!("equal-count weighting deviates from mean by {dev:e}")
    })?;
    let zero = ama(&models, &[0, 0, 0, 0]).map_err(|e| e.to_string())?;
    let zdev = max_dev(&zero);
    ensure(zdev <= ALGEBRA_TOL, || {
        format!("zero-total guard deviates from mean by {zdev:e}")
    })?;
    let plain = uniform_average(&models).map_err(|e| e.to_string())?;
    ensure(max_dev(&plain) <= ALGEBRA_TOL, || {
        "uniform average differs from mean".into()
    })?;

    let mut ledger = PrototypeLedger::new(
        vec![Role::Labeled, Role::Unlabeled, Role::Unlabeled],
        1,
        1,
        false,
    )
    .map_err(|e| e.to_string())?;
    let update = |v: f64, c: u64| LocalPrototypes {
        vectors: vec![Some(vec![v])],
        counts: vec![c],
    };
    let previous = GlobalPrototypes::empty(1, 1);
    let out = apa(
        &mut ledger,
        &[
            (0, update(1.0, 3)),
            (1, update(0.0, 2)),
            (2, update(0.5, 2)),
        ],
        &previous,
    )
    .map_err(|e| e.to_string())?;
    let o = out.get(0).ok_or("class 0 absent after aggregation")?[0];
    ensure((ledger.mu() - 2.0).abs() <= ALGEBRA_TOL, || {
        format!("mu = {}", ledger.mu())
    })?;
    ensure((o - 0.7).abs() <= ALGEBRA_TOL, || {
        format!("worked example gives {o}, expected 0.7")
    })?;

    let mut rng = rng_from(0xC3, &[]);
    let roles: Vec<Role> = (0..6)
        .map(|i| {
            if i < 2 {
                Role::Labeled
            } else {
                Role::Unlabeled
            }
        })
        .collect();
    let mut ledger = PrototypeLedger::new(roles, 4, 3, true).map_err(|e| e.to_string())?;
    let updates: Vec<(usize, LocalPrototypes)> = (0..6)
        .map(|i| {
            let counts: Vec<u64> = (0..4)
                .map(|k| if k == 3 { 0 } else { rng.random_range(0..5) })
                .collect();
            let vectors = counts
                .iter()
                .map(|&c| {
                    (c > 0).then(|| normalize_rows(&random_matrix(&mut rng, 1, 3, 1.0)).into_vec())
                })
                .collect();
            (i, LocalPrototypes { vectors, counts })
        })
        .collect();
    let held = random_prototypes(&mut rng, 4, 3, 1.0);
    let out = apa(&mut ledger, &updates, &held).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for class in 0..3 {
        let weights = ledger.class_weights(class);
        if weights.is_empty() {
            continue;
        }
        worst = worst.max((weights.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= ALGEBRA_TOL, || {
        format!("class weight mass off by {worst:e}")
    })?;
    ensure(
        ledger.class_weights(3).is_empty() && out.get(3) == held.get(3),
        || "class with zero total did not keep its previous prototype".into(),
    )?;
    Ok(format!(
        "equal-count dev {dev:.1e}, zero-total dev {zdev:.1e}, worked example O = {o}, mass error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- 4

fn labeled_unlabeled_consistency() -> Outcome {
    for k in 0..50u64 {
        let mut rng = rng_from(0xC4, &[k]);
        let inst = random_instance(&mut rng, 4, 16);
        let h = LossHyper {
            tau: inst.tau,
            ..LossHyper::default()
        };
        let protos = random_prototypes(&mut rng, inst.num_classes, inst.z.cols(), 0.7);
        let ones = vec![1.0; inst.image_classes.len()];
        let lab =
            ContrastiveBatch::labeled(ReprBatch(inst.z.clone()), &inst.image_classes).unwrap();
        let unl =
            ContrastiveBatch::pseudo_labeled(ReprBatch(inst.z.clone()), &inst.image_classes, &ones)
                .unwrap();
        ensure(lcc_labeled(&lab, &h) == lcc_unlabeled(&unl, &h), || {
            format!("batch {k}: local terms differ")
        })?;
        ensure(
            gcc_labeled(&lab, &protos, &h).unwrap() == gcc_unlabeled(&unl, &protos, &h).unwrap(),
            || format!("batch {k}: global terms differ"),
        )?;
    }
    Ok("50 batches, values and gradients bit-identical".into())
}

// ---------------------------------------------------------------- 5

fn determinism_config() -> RunConfig {
    let mut cfg = benchmark();
    cfg.partition.kind = dccfssl::config::PartitionKind::Dirichlet;
    cfg.num_clients = 10;
    cfg.labeled_fraction = 0.1;
    cfg.clients_per_round = 4;
    cfg.rounds = 100;
    cfg.dataset.num_classes = 8;
    cfg.dataset.dim = 16;
    cfg
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let cfg = determinism_config();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for (tag, workers) in [("a", 1), ("b", 1), ("c", 4)] {
        let out = dir.path().join(tag);
        let summary = run_experiment(&cfg, &out, workers).map_err(|e| e.to_string())?;
        ensure(summary.labeled_clients == 1, || {
            format!("{} labeled clients", summary.labeled_clients)
        })?;
        logs.push(std::fs::read(out.join(METRICS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1], || "two executions differ".into())?;
    ensure(logs[0] == logs[2], || "1 and 4 workers differ".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} byte logs identical across 3 executions, {secs:.1}s",
        logs[0].len()
    ))
}

// ---------------------------------------------------------------- 6

struct Pilot {
    margins: toml::Table,
}

fn pilot() -> Pilot {
    let text = std::fs::read_to_string(fixture("pilot_margins.toml")).expect("pilot fixture");
    let table: toml::Table = text.parse().expect("pilot fixture parses");
    Pilot {
        margins: table["margins"].as_table().cloned().unwrap_or_default(),
    }
}

impl Pilot {
    fn margin(&self, key: &str) -> f64 {
        self.margins
            .get(key)
            .and_then(|v| v.as_float())
            .unwrap_or(f64::NAN)
    }
}

fn relative_ordering() -> Outcome {
    let start = Instant::now();
    let base = benchmark();
    let dcc = mean_final_accuracy(&with_method(&base, Method::Dccfssl))?;
    let fix = mean_final_accuracy(&with_method(&base, Method::FedavgFixmatch))?;
    let low = mean_final_accuracy(&with_method(&base, Method::FedavgSlLower))?;
    let p = pilot();
    let summary = format!(
        "DCCFSSL {dcc:.4}, FixMatch {fix:.4}, SL-Lower {low:.4}; margins {:+.4} (pilot {:+.4}), {:+.4} (pilot {:+.4}), {:.0}s",
        dcc - fix,
        p.margin("dccfssl_over_fixmatch"),
        fix - low,
        p.margin("fixmatch_over_sl_lower"),
        start.elapsed().as_secs_f64()
    );
    ensure(dcc - fix >= 0.0 && fix - low >= 0.0, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn ablation() -> Outcome {
    let base = benchmark();
    let full = Ablation::Full.apply(&base);
    let full_text = full.to_toml_string();
    for variant in Ablation::ALL {
        let text = variant.apply(&base).to_toml_string();
        let changed: Vec<&str> = full_text
            .lines()
            .zip(text.lines())
            .filter(|(a, b)| a != b)
            .map(|(_, b)| b)
            .collect();
        ensure(full_text.lines().count() == text.lines().count(), || {
            format!("{} config has a different shape", variant.name())
        })?;
        ensure(
            changed
                .iter()
                .all(|l| l.starts_with("lambda_lcc") || l.starts_with("lambda_gcc")),
            || format!("{} changes {changed:?}", variant.name()),
        )?;
    }
    let with = mean_final_accuracy(&full)?;
    let without = mean_final_accuracy(&Ablation::NoDcc.apply(&base))?;
    let msg = format!(
        "full {with:.4} vs no-dcc {without:.4}, margin {:+.4} (pilot {:+.4}); variants differ only in the two weights",
        with - without,
        pilot().margin("dccfssl_over_no_dcc")
    );
    ensure(with >= without, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- 8

fn stability() -> Outcome {
    let base = benchmark();
    let mut parts = Vec::new();
    for variant in [Ablation::Full, Ablation::NoDcc] {
        let cfg = variant.apply(&base);
        let mut stds = Vec::new();
        for &seed in &BENCH_SEEDS {
            let mut c = cfg.clone();
            c.seed = seed;
            let history = train(&c, 1).map_err(|e| e.to_string())?;
            let acc: Vec<f64> = history.records.iter().map(|r| r.accuracy).collect();
            let window = c.stability_window(acc.len());
            ensure(window == acc.len().div_ceil(4), || {
                format!("window {window} for {} rounds", acc.len())
            })?;
            let got = stability_std(&acc, window).map_err(|e| e.to_string())?;
            let want = trailing_std(&acc, window);
            ensure((got - want).abs() <= STD_TOL, || {
                format!("{}: {got} vs {want}", variant.name())
            })?;
            stds.push(got);
        }
        parts.push((variant.name(), stds.iter().sum::<f64>() / stds.len() as f64));
    }
    let direction = if parts[0].1 <= parts[1].1 {
        "lower"
    } else {
        "higher"
    };
    Ok(format!(
        "matches recomputation; mean std {} {:.4}, {} {:.4} (full variant {direction})",
        parts[0].0, parts[0].1, parts[1].0, parts[1].1
    ))
}

// ---------------------------------------------------------------- 9

fn labeled_ratio_sweep() -> Outcome {
    let base = benchmark();
    let mut means = Vec::new();
    for frac in [0.1, 0.5, 1.0] {
        let mut cfg = base.clone();
        cfg.labeled_fraction = frac;
        means.push((frac, mean_final_accuracy(&cfg)?));
    }
    let text = means
        .iter()
        .map(|(f, a)| format!("{f}: {a:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        means.windows(2).all(|w| w[1].1 >= w[0].1 - SWEEP_BAND),
        || text.clone(),
    )?;
    Ok(text)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("loss oracles", loss_oracles),
        ("aggregation algebra", aggregation_algebra),
        (
            "labeled/unlabeled consistency",
            labeled_unlabeled_consistency,
        ),
        ("determinism", determinism),
        ("relative ordering", relative_ordering),
        ("ablation monotonicity", ablation),
        ("stability statistic", stability),
        ("labeled-fraction sweep", labeled_ratio_sweep),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
