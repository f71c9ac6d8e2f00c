use std::error::Error;

use dccfssl::eval::{binary_auc, classification_metrics, confusion_matrix, stability_std};
use dccfssl::matrix::Matrix;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // Ten samples of two classes: five of class 0 all correct, three of five
    // class-1 samples correct.
    let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let p1 = [0.1, 0.2, 0.3, 0.2, 0.1, 0.9, 0.8, 0.7, 0.4, 0.3];
    let probs = Matrix::from_rows(
        p1.iter()
            .map(|&p| [1.0 - p, p])
            .collect::<Vec<_>>()
            .iter()
            .map(|r| &r[..]),
        2,
    )?;
    let cm = confusion_matrix(&probs, &labels)?;
    println!("confusion matrix {cm:?}");
    assert_eq!(cm, vec![vec![5, 0], vec![2, 3]]);
    let m = classification_metrics(&probs, &labels)?;
    println!(
        "accuracy {:.3}, macro precision {:.4}, recall {:.4}, f1 {:.4}, macro auc {:.4}",
        m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1, m.macro_auc
    );
    let ties = binary_auc(&[0.5; 4], &[true, false, true, false]);
    println!("all-tied scores give auc {ties:?}");

    let history = [0.50, 0.60, 0.65, 0.70, 0.72, 0.71, 0.73, 0.72];
    let window = history.len().div_ceil(4);
    println!(
        "accuracy std over the last {window} rounds: {:.5}",
        stability_std(&history, window)?
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
