// Splits a synthetic blob dataset across clients, first evenly and then with
// Dirichlet label skew, and marks a tenth of the clients as labeled.

use std::error::Error;

use dccfssl::data::{assign_roles, partition_dirichlet, partition_iid, synthesize_blobs, Role};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let classes = 5;
    let data = synthesize_blobs(classes, 8, 60, 1.0, 7)?;

    let iid = partition_iid(&data, 10, 1)?;
    let skewed = partition_dirichlet(&data, 10, 1.0, 1)?;
    assert_eq!(iid.iter().map(|c| c.len()).sum::<usize>(), data.len());
    assert_eq!(skewed.iter().map(|c| c.len()).sum::<usize>(), data.len());

    println!("client  iid histogram         dirichlet histogram");
    for (a, b) in iid.iter().zip(&skewed) {
        println!(
            "{:>6}  {:<20}  {:?}",
            a.client_id,
            format!("{:?}", a.class_histogram(classes)),
            b.class_histogram(classes)
        );
    }

    let clients = assign_roles(skewed, 0.1, 2)?;
    let labeled: Vec<usize> = clients
        .iter()
        .filter(|c| c.role() == Role::Labeled)
        .map(|c| c.client_id)
        .collect();
    assert_eq!(labeled.len(), 1);
    let hidden = clients
        .iter()
        .filter(|c| !c.is_labeled())
        .all(|c| c.samples().iter().all(|s| s.label.is_none()));
    assert!(hidden);
    println!("labeled clients: {labeled:?}; unlabeled clients see no labels");
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
