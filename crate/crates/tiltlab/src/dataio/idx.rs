//! IDX binary format (MNIST and derivatives).
//!
//! Big-endian headers: image tensors carry magic `0x00000803` followed by
//! count, rows, cols; label vectors carry magic `0x00000801` followed by
//! count. Pixel bytes are row-major uint8.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Load an MNIST-style image/label file pair.
///
/// Pixels are scaled by 1/255 into `[0, 1]`; each image becomes one
/// column, flattened row-major; shape is `(rows, cols, 1)`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = images.read_u32::<BigEndian>()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected image magic {IMAGE_MAGIC:#010x}, found {magic:#010x}",
            images_path.display()
        )));
    }
    let count = images.read_u32::<BigEndian>()? as usize;
    let rows = images.read_u32::<BigEndian>()? as usize;
    let cols = images.read_u32::<BigEndian>()? as usize;
    let pixels = rows * cols;

    let mut labels = BufReader::new(File::open(labels_path)?);
    let magic = labels.read_u32::<BigEndian>()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected label magic {LABEL_MAGIC:#010x}, found {magic:#010x}",
            labels_path.display()
        )));
    }
    let label_count = labels.read_u32::<BigEndian>()? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let mut raw = vec![0u8; count * pixels];
    images.read_exact(&mut raw)?;
    let mut label_bytes = vec![0u8; count];
    labels.read_exact(&mut label_bytes)?;

    // Column-major matrix fill: column j is image j.
    let mut data = Array2::zeros((pixels, count));
    for (j, chunk) in raw.chunks_exact(pixels).enumerate() {
        for (i, &px) in chunk.iter().enumerate() {
            data[(i, j)] = f64::from(px) / 255.0;
        }
    }

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    Dataset::new(
        data,
        label_bytes.into_iter().map(usize::from).collect(),
        (rows, cols, 1),
        name,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::{BigEndian, WriteBytesExt};
    use std::io::Write;

    fn write_idx_pair(
        dir: &Path,
        image_magic: u32,
        n_images: usize,
        n_labels: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images-idx3-ubyte");
        let lab = dir.join("labels-idx1-ubyte");
        let mut f = File::create(&img).unwrap();
        f.write_u32::<BigEndian>(image_magic).unwrap();
        f.write_u32::<BigEndian>(n_images as u32).unwrap();
        f.write_u32::<BigEndian>(2).unwrap();
        f.write_u32::<BigEndian>(2).unwrap();
        for i in 0..n_images * 4 {
            f.write_all(&[(i % 256) as u8]).unwrap();
        }
        let mut f = File::create(&lab).unwrap();
        f.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
        f.write_u32::<BigEndian>(n_labels as u32).unwrap();
        f.write_all(&vec![1u8; n_labels]).unwrap();
        (img, lab)
    }

    #[test]
    fn parses_valid_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), IMAGE_MAGIC, 3, 3);
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.shape, (2, 2, 1));
        assert_eq!(ds.data[(1, 0)], 1.0 / 255.0);
        // row-major flattening: second image starts at byte 4
        assert_eq!(ds.data[(0, 1)], 4.0 / 255.0);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), 0x0000_0000, 2, 2);
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), IMAGE_MAGIC, 100, 99);
        assert!(matches!(load_idx(&img, &lab), Err(Error::Consistency(_))));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), IMAGE_MAGIC, 3, 3);
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Io(_))));
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), IMAGE_MAGIC, 5, 5);
        let a = load_idx(&img, &lab).unwrap();
        let b = load_idx(&img, &lab).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.labels, b.labels);
    }
}
