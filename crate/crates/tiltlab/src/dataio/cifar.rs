//! CIFAR-10 binary batch format.
//!
//! Each batch file is a concatenation of 3073-byte records: one label
//! byte in `0..=9` followed by 3072 pixel bytes, channel-planar (1024
//! red, 1024 green, 1024 blue, each row-major 32×32).

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;

/// Load one or more CIFAR-10 binary batches into a single dataset.
///
/// The in-memory column keeps the channel-planar byte order, so pixel
/// `(r, c)` of channel `ch` sits at index `ch·1024 + r·32 + c`.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Argument("no batch files given".to_string()));
    }
    let mut columns: Vec<Vec<u8>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a positive multiple of {RECORD_LEN}",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(RECORD_LEN) {
            let label = record[0];
            if label > 9 {
                return Err(Error::Format(format!(
                    "{}: label byte {label} out of range 0..=9",
                    path.display()
                )));
            }
            labels.push(usize::from(label));
            columns.push(record[1..].to_vec());
        }
    }
    let n = columns.len();
    let mut data = Array2::zeros((PIXELS, n));
    for (j, col) in columns.iter().enumerate() {
        for (i, &px) in col.iter().enumerate() {
            data[(i, j)] = f64::from(px) / 255.0;
        }
    }
    Dataset::new(data, labels, (32, 32, 3), "cifar10")
}
