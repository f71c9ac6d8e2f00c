use std::error::Error;

use dccfssl::config::SweepConfig;
use dccfssl::experiment::run_sweep;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let grid = format!(
        r#"
out_dir = {:?}
methods = ["dccfssl", "fedavg-fixmatch", "fedavg-sl-lower"]
seeds = [0, 1]
ablation = true

[base]
rounds = 15
num_clients = 8
clients_per_round = 3
labeled_fraction = 0.25

[base.dataset]
num_classes = 4
dim = 6
train_per_class = 40
test_per_class = 20
spread = 0.7

[base.model]
hidden_dims = [16]
repr_dim = 8

[base.client]
lr = 0.1
"#,
        dir.path().to_str().ok_or("non-utf8 temp path")?
    );
    let grid = SweepConfig::from_toml_str(&grid)?;
    let runs = grid.expand()?;
    println!("{} grid points", runs.len());
    for (name, summary) in run_sweep(&grid, 2)? {
        println!(
            "{name:<40} accuracy {:.3}",
            summary.final_accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
