use std::error::Error;

use dccfssl::client::{labeled_objective, pseudo_targets, unlabeled_objective, PseudoTargets};
use dccfssl::losses::LossHyper;
use dccfssl::matrix::Matrix;
use dccfssl::model::{Architecture, ModelParams};
use dccfssl::rng::rng_from;
use dccfssl::server::GlobalPrototypes;
use rand::Rng;

fn central_difference(theta: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + step;
            let up = f(&x);
            x[k] = orig - step;
            let down = f(&x);
            x[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let arch = Architecture {
        input_dim: 6,
        hidden_dims: vec![10],
        repr_dim: 5,
        num_classes: 3,
        normalize_repr: true,
    };
    let mut rng = rng_from(17, &[]);
    let params = ModelParams::init(arch.clone(), &mut rng)?;
    let mut random = |rows: usize| {
        Matrix::from_vec(
            rows,
            6,
            (0..rows * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let weak = random(3);
    let strong = random(6);
    let labels = [0, 2, 2];
    let protos = GlobalPrototypes::from_vectors(
        5,
        vec![
            Some(vec![0.6, 0.8, 0.0, 0.0, 0.0]),
            None,
            Some(vec![0.0, 0.0, 1.0, 0.0, 0.0]),
        ],
    )?;
    let h = LossHyper {
        t_thr: 0.3,
        ..LossHyper::default()
    };
    let at = |v: &[f64]| ModelParams::from_values(arch.clone(), v.to_vec()).unwrap();

    let analytic = labeled_objective(&params, &weak, &strong, &labels, &protos, &h)?;
    let numeric = central_difference(params.values(), 1e-5, |v| {
        labeled_objective(&at(v), &weak, &strong, &labels, &protos, &h)
            .unwrap()
            .value
    });
    let err = relative_error(&analytic.grad, &numeric);
    println!(
        "labeled objective {:.6}: relative gradient error {err:.2e}",
        analytic.value
    );
    assert!(err < 1e-3);

    let PseudoTargets {
        labels: pseudo,
        confidences,
    } = pseudo_targets(&params, &weak)?;
    let targets = PseudoTargets {
        labels: pseudo,
        confidences,
    };
    let analytic = unlabeled_objective(&params, &strong, &targets, &protos, &h)?;
    let numeric = central_difference(params.values(), 1e-5, |v| {
        unlabeled_objective(&at(v), &strong, &targets, &protos, &h)
            .unwrap()
            .value
    });
    let err = relative_error(&analytic.grad, &numeric);
    println!(
        "unlabeled objective {:.6} (pseudo labels {:?}): relative gradient error {err:.2e}",
        analytic.value, targets.labels
    );
    assert!(err < 1e-3);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
