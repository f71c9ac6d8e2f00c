use std::path::Path;

use super::Sample;
use crate::error::{Error, Result};

pub const CIFAR10_FEATURES: usize = 3 * 1024;
/// One label byte followed by 3x1024 channel-major pixel bytes.
pub const CIFAR10_RECORD_LEN: usize = 1 + CIFAR10_FEATURES;

/// Reads a CIFAR-10 binary batch file. Pixels are scaled to [0, 1].
pub fn read_cifar10_binary(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes, &path.display().to_string())
}

pub fn parse_cifar10(bytes: &[u8], source_name: &str) -> Result<Vec<Sample>> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_LEN) {
        let offset = bytes.len() / CIFAR10_RECORD_LEN * CIFAR10_RECORD_LEN;
        return Err(Error::Format {
            source_name: source_name.to_string(),
            location: format!("byte offset {offset}"),
            reason: format!(
                "truncated record: {} trailing bytes, expected {CIFAR10_RECORD_LEN}",
                bytes.len() - offset
            ),
        });
    }
    Ok(bytes
        .chunks_exact(CIFAR10_RECORD_LEN)
        .map(|record| {
            let features = record[1..].iter().map(|&p| f64::from(p) / 255.0).collect();
            Sample::labeled(features, usize::from(record[0]))
        })
        .collect())
}
