use std::error::Error;

use dccfssl::data::{
    augment_strong, augment_weak, parse_cifar10, parse_samples, samples_to_text, AugmentConfig,
    Sample, CIFAR10_RECORD_LEN,
};
use dccfssl::rng::rng_from;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let sample = Sample::labeled(vec![1.0; 10], 3);
    let cfg = AugmentConfig::default();
    let mut rng = rng_from(5, &[]);
    let weak = augment_weak(&sample, &cfg, &mut rng);
    let strong = augment_strong(&sample, &cfg, &mut rng);
    let zeroed = strong.iter().filter(|&&v| v == 0.0).count();
    assert_eq!(zeroed, cfg.masked_count(10));
    println!("weak:   {weak:.3?}");
    println!("strong: {strong:.3?} ({zeroed} coordinates masked)");

    // Two records in the CIFAR-10 binary layout: a label byte then 3072 pixels.
    let mut bytes = Vec::with_capacity(2 * CIFAR10_RECORD_LEN);
    for label in [4u8, 9] {
        bytes.push(label);
        bytes.extend((0..CIFAR10_RECORD_LEN - 1).map(|i| (i % 256) as u8));
    }
    let images = parse_cifar10(&bytes, "two_records.bin")?;
    assert_eq!(images.len(), 2);
    assert_eq!(images[1].label, Some(9));
    println!(
        "parsed {} images of {} features, first pixel {} and last {}",
        images.len(),
        images[0].features.len(),
        images[0].features[0],
        images[0].features[3071]
    );
    let truncated = parse_cifar10(&bytes[..100], "short.bin").unwrap_err();
    println!("truncated input: {truncated}");

    let text = samples_to_text(&[
        Sample::labeled(vec![0.5, -1.0], 1),
        Sample::unlabeled(vec![2.0, 0.25]),
    ]);
    print!("text format:\n{text}");
    let back = parse_samples(&text, "inline")?;
    assert_eq!(back[1].label, None);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
