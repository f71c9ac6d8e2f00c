// Evaluates every training objective on small hand-built batches.
//
// Strong views come in sibling pairs: rows `2k` and `2k + 1` are two views
// of image `k`. Positives for a view are the views of *other* images with
// the same class.

use std::error::Error;

use dccfssl::losses::{
    fixmatch_loss, gcc_labeled, gcc_unlabeled, lcc_labeled, lcc_unlabeled, supervised_loss,
    ContrastiveBatch, LossHyper,
};
use dccfssl::matrix::Matrix;
use dccfssl::model::ReprBatch;
use dccfssl::server::GlobalPrototypes;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let h = LossHyper::default();

    let uniform = Matrix::from_vec(1, 10, vec![0.1; 10])?;
    let ce = supervised_loss(&uniform, &[4])?;
    println!(
        "cross-entropy of a uniform prediction over 10 classes: {:.6}",
        ce.value
    );
    assert!((ce.value - 10f64.ln()).abs() < 1e-12);

    // Two images of one class with identical unit representations.
    let same = ReprBatch(Matrix::from_vec(
        4,
        2,
        vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
    )?);
    let batch = ContrastiveBatch::labeled(same, &[0, 0])?;
    let local = lcc_labeled(&batch, &h);
    println!(
        "local contrastive, identical views: {:.6} (8/3 ln 3 = {:.6})",
        local.value,
        8.0 / 3.0 * 3f64.ln()
    );

    let protos =
        GlobalPrototypes::from_vectors(2, vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])])?;
    let global = gcc_labeled(&batch, &protos, &h)?;
    println!(
        "global contrastive against two prototypes: {:.6}",
        global.value
    );

    let mut weak = Matrix::zeros(1, 10);
    weak.row_mut(0).fill(0.04 / 9.0);
    weak.set(0, 2, 0.96);
    let fm = fixmatch_loss(&weak, &uniform, &h)?;
    println!(
        "consistency: pseudo label {} at confidence {:.2}, masked in: {}, loss {:.6}",
        fm.pseudo_labels[0], fm.confidences[0], fm.mask[0], fm.loss.value
    );

    let z = ReprBatch(Matrix::from_vec(
        4,
        2,
        vec![1.0, 0.0, 0.8, 0.6, 0.6, 0.8, 0.0, 1.0],
    )?);
    for conf in [0.5, 1.0] {
        let pseudo = ContrastiveBatch::pseudo_labeled(z.clone(), &[0, 0], &[conf, conf])?;
        println!(
            "unlabeled terms at confidence {conf}: local {:.6}, global {:.6}",
            lcc_unlabeled(&pseudo, &h).value,
            gcc_unlabeled(&pseudo, &protos, &h)?.value
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
