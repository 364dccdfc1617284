use std::fs;
use std::path::Path;

use super::{HarnessError, Result};
use crate::forge::Dataset;

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;

/// Parses CIFAR-10 binary records: one label byte (0-9) followed by 3072
/// channel-planar pixel bytes, scaled to `[0, 1]` as `value / 255`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(HarnessError::Data {
            offset,
            message: format!(
                "length {} is not a positive multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        });
    }
    let mut features = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(features.capacity());
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(HarnessError::Data {
                offset: i * CIFAR_RECORD,
                message: format!("label {label} outside 0..=9"),
            });
        }
        labels.push(label as usize);
        features.push(record[1..].iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok(Dataset::new(features, labels, 10)?)
}

/// Reads and parses a CIFAR-10 binary batch. An unreadable file is reported
/// as a configuration error, like any other bad input path.
pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_cifar10(&bytes)
}
