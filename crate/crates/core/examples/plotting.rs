// Runs two methods on the same data and renders their accuracy curves and
// stability bars.

use std::error::Error;

use dccfssl::config::{Method, RunConfig};
use dccfssl::experiment::{run_experiment, METRICS_FILE};
use dccfssl::plot::emit_plots;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let mut logs = Vec::new();
    for method in [Method::Dccfssl, Method::FedavgSlLower] {
        let mut cfg = RunConfig {
            method,
            rounds: 12,
            num_clients: 6,
            clients_per_round: 3,
            labeled_fraction: 0.34,
            ..RunConfig::default()
        };
        cfg.dataset.num_classes = 4;
        cfg.dataset.dim = 6;
        cfg.dataset.train_per_class = 30;
        cfg.dataset.test_per_class = 15;
        cfg.model.hidden_dims = vec![12];
        cfg.model.repr_dim = 8;
        cfg.client.lr = 0.1;
        let out = dir.path().join(method.as_str());
        run_experiment(&cfg, &out, 1)?;
        logs.push(out.join(METRICS_FILE));
    }
    let written = emit_plots(&logs, &dir.path().join("plots"))?;
    for path in &written {
        println!(
            "{} ({} bytes)",
            path.file_name().unwrap_or_default().to_string_lossy(),
            std::fs::metadata(path)?.len()
        );
    }
    let table = std::fs::read_to_string(dir.path().join("plots/stability.csv"))?;
    print!("{table}");
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
