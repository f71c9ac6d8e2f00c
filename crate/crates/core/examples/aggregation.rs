// Server-side aggregation: models weighted by authenticated-sample counts
// and prototypes weighted by per-class counts, with labeled clients'
// counts scaled up by the unlabeled-to-labeled ratio.

use std::error::Error;

use dccfssl::data::Role;
use dccfssl::model::{Architecture, ModelParams};
use dccfssl::server::{ama, apa, GlobalPrototypes, LocalPrototypes, PrototypeLedger};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let arch = Architecture {
        input_dim: 1,
        hidden_dims: vec![],
        repr_dim: 1,
        num_classes: 2,
        normalize_repr: false,
    };
    let n = arch.param_count();
    let a = ModelParams::from_values(arch.clone(), vec![0.0; n])?;
    let b = ModelParams::from_values(arch.clone(), vec![1.0; n])?;
    let merged = ama(&[a.clone(), b.clone()], &[1, 3])?;
    println!(
        "authentication counts 1 and 3 -> parameters {:?}",
        merged.values()
    );
    let fallback = ama(&[a, b], &[0, 0])?;
    println!(
        "nothing authenticated -> plain mean {:?}",
        fallback.values()
    );

    let roles = vec![Role::Labeled, Role::Unlabeled, Role::Unlabeled];
    let mut ledger = PrototypeLedger::new(roles, 1, 1, false)?;
    println!("mu = {}", ledger.mu());
    let update = |v: f64, c: u64| LocalPrototypes {
        vectors: vec![Some(vec![v])],
        counts: vec![c],
    };
    let previous = GlobalPrototypes::empty(1, 1);
    let global = apa(
        &mut ledger,
        &[
            (0, update(1.0, 3)),
            (1, update(0.0, 2)),
            (2, update(0.5, 2)),
        ],
        &previous,
    )?;
    let o = global.get(0).ok_or("class 0 missing")?[0];
    println!(
        "class 0 prototype: {o} (weights {:?})",
        ledger.class_weights(0)
    );
    assert!((o - 0.7).abs() < 1e-12);

    // Only client 2 reports next round; the others keep their ledger entries.
    let global = apa(&mut ledger, &[(2, update(1.0, 2))], &global)?;
    println!("after client 2 updates: {:?}", global.get(0));
    print!("{}", ledger.to_text());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
