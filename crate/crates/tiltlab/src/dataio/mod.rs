//! Dataset loading and export.
//!
//! Images are stored column-wise: a dataset is an `m × N` matrix whose
//! columns are flattened images with pixel values in `[0, 1]`. Grayscale
//! images are flattened row-major; 3-channel images keep the CIFAR-10
//! channel-planar layout (all red values row-major, then green, then
//! blue).

mod cifar;
mod idx;
mod image;
mod raw;

pub use cifar::load_cifar10;
pub use idx::load_idx;
pub use image::{export_image, import_image};
pub use raw::{load_matrices, load_raw, save_matrices, save_raw};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A labeled image dataset, images as columns.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `m × N` matrix of flattened images, values in `[0, 1]`.
    pub data: Array2<f64>,
    /// Class index per column, length `N`.
    pub labels: Vec<usize>,
    /// `(height, width, channels)` with `h·w·c = m`.
    pub shape: (usize, usize, usize),
    /// Text identifier, used in logs and exported manifests.
    pub name: String,
}

impl Dataset {
    pub fn new(
        data: Array2<f64>,
        labels: Vec<usize>,
        shape: (usize, usize, usize),
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            data,
            labels,
            shape,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Pixel dimension `m` (rows of the data matrix).
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of images `N` (columns of the data matrix).
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of distinct classes, `max(label) + 1`.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    fn validate(&self) -> Result<()> {
        let (h, w, c) = self.shape;
        if h * w * c != self.dim() {
            return Err(Error::Consistency(format!(
                "shape {:?} does not match pixel dimension {}",
                self.shape,
                self.dim()
            )));
        }
        if self.labels.len() != self.len() {
            return Err(Error::Consistency(format!(
                "{} labels for {} images",
                self.labels.len(),
                self.len()
            )));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Consistency(
                "pixel values outside [0, 1]".to_string(),
            ));
        }
        Ok(())
    }
}

/// Keep only the images whose label is in `keep`, remapping labels to
/// `0..keep.len()` in the order given. Column order is preserved.
pub fn select_classes(ds: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::Argument("keep list is empty".to_string()));
    }
    for &k in keep {
        if !ds.labels.contains(&k) {
            return Err(Error::Argument(format!(
                "class {} does not occur in dataset '{}'",
                k, ds.name
            )));
        }
    }
    let remap: Vec<Option<usize>> = (0..=*keep.iter().max().unwrap())
        .map(|label| keep.iter().position(|&k| k == label))
        .collect();
    let cols: Vec<usize> = ds
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| keep.contains(&l))
        .map(|(i, _)| i)
        .collect();
    let mut data = Array2::zeros((ds.dim(), cols.len()));
    let mut labels = Vec::with_capacity(cols.len());
    for (out, &src) in cols.iter().enumerate() {
        data.column_mut(out).assign(&ds.data.column(src));
        labels.push(remap[ds.labels[src]].unwrap());
    }
    Dataset::new(data, labels, ds.shape, ds.name.clone())
}
