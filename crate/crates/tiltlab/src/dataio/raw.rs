//! Raw serialization formats.
//!
//! Two containers share the same philosophy: a small JSON sidecar that
//! describes the layout, next to a contiguous little-endian binary blob.
//!
//! **Raw dataset** (`<base>.json` + `<base>.bin`): the JSON carries
//! `{"m", "n", "shape", "classes"}`; the blob is `m·n` float32 values
//! column-major followed by `n` int32 labels.
//!
//! **Named matrices** (`<base>.json` + `<base>.bin`): the JSON carries a
//! `fields` list of `{"name", "rows", "cols"}` plus free-form `meta`; the
//! blob concatenates each field's float32 values column-major. Models,
//! PCA bases, tilt plans and backdoor specs all serialize through this.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// `<base>.<ext>` without disturbing dots inside the file name.
fn sibling(base: &Path, ext: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    base.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    m: usize,
    n: usize,
    shape: [usize; 3],
    classes: usize,
    #[serde(default)]
    name: String,
}

/// Write a dataset as `<base>.json` + `<base>.bin`.
pub fn save_raw(ds: &Dataset, base: &Path) -> Result<()> {
    let header = DatasetHeader {
        m: ds.dim(),
        n: ds.len(),
        shape: [ds.shape.0, ds.shape.1, ds.shape.2],
        classes: ds.class_count(),
        name: ds.name.clone(),
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Format(format!("header encoding failed: {e}")))?;
    std::fs::write(sibling(base, "json"), json)?;

    let mut out = BufWriter::new(File::create(sibling(base, "bin"))?);
    for col in ds.data.columns() {
        for &v in col.iter() {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    for &l in &ds.labels {
        out.write_i32::<LittleEndian>(l as i32)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset previously written by [`save_raw`] (or produced by any
/// external converter emitting the same layout).
pub fn load_raw(base: &Path) -> Result<Dataset> {
    let json = std::fs::read_to_string(sibling(base, "json"))?;
    let header: DatasetHeader = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("bad dataset header: {e}")))?;
    let mut blob = BufReader::new(File::open(sibling(base, "bin"))?);
    let mut data = Array2::zeros((header.m, header.n));
    for j in 0..header.n {
        for i in 0..header.m {
            data[(i, j)] = f64::from(blob.read_f32::<LittleEndian>()?);
        }
    }
    let mut labels = Vec::with_capacity(header.n);
    for _ in 0..header.n {
        let l = blob.read_i32::<LittleEndian>()?;
        if l < 0 || l as usize >= header.classes.max(1) {
            return Err(Error::Format(format!(
                "label {l} outside declared class range {}",
                header.classes
            )));
        }
        labels.push(l as usize);
    }
    let name = if header.name.is_empty() {
        base.file_name().unwrap_or_default().to_string_lossy().into_owned()
    } else {
        header.name
    };
    Dataset::new(
        data,
        labels,
        (header.shape[0], header.shape[1], header.shape[2]),
        name,
    )
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct MatricesHeader {
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    fields: Vec<FieldHeader>,
}

/// Write named float matrices as `<base>.json` + `<base>.bin`.
///
/// `kind` tags what the container holds (`"pca_basis"`, `"mlp"`, ...)
/// and `meta` carries any scalar side data.
pub fn save_matrices(
    base: &Path,
    kind: &str,
    meta: serde_json::Value,
    fields: &[(&str, ArrayView2<f64>)],
) -> Result<()> {
    let header = MatricesHeader {
        kind: kind.to_string(),
        meta,
        fields: fields
            .iter()
            .map(|(name, m)| FieldHeader {
                name: (*name).to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Format(format!("header encoding failed: {e}")))?;
    std::fs::write(sibling(base, "json"), json)?;

    let mut out = BufWriter::new(File::create(sibling(base, "bin"))?);
    for (_, m) in fields {
        for col in m.columns() {
            for &v in col.iter() {
                out.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read back a named-matrix container: `(kind, meta, fields)`.
pub fn load_matrices(
    base: &Path,
) -> Result<(String, serde_json::Value, Vec<(String, Array2<f64>)>)> {
    let json = std::fs::read_to_string(sibling(base, "json"))?;
    let header: MatricesHeader = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("bad matrices header: {e}")))?;
    let mut blob = BufReader::new(File::open(sibling(base, "bin"))?);
    let mut fields = Vec::with_capacity(header.fields.len());
    for f in &header.fields {
        let mut m = Array2::zeros((f.rows, f.cols));
        for j in 0..f.cols {
            for i in 0..f.rows {
                m[(i, j)] = f64::from(blob.read_f32::<LittleEndian>()?);
            }
        }
        fields.push((f.name.clone(), m));
    }
    // trailing bytes mean the header lied
    let mut extra = [0u8; 1];
    if blob.read(&mut extra)? != 0 {
        return Err(Error::Format(
            "matrix blob longer than header declares".to_string(),
        ));
    }
    Ok((header.kind, header.meta, fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_roundtrip_within_f32() {
        let data = array![[0.0, 0.5], [1.0, 0.125]];
        let ds = Dataset::new(data, vec![0, 1], (2, 1, 1), "rt").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ds");
        save_raw(&ds, &base).unwrap();
        let back = load_raw(&base).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.shape, ds.shape);
        for (a, b) in ds.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn matrices_roundtrip_preserves_order_and_meta() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0], [6.0]];
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        save_matrices(
            &base,
            "test",
            serde_json::json!({"k": 42}),
            &[("a", a.view()), ("b", b.view())],
        )
        .unwrap();
        let (kind, meta, fields) = load_matrices(&base).unwrap();
        assert_eq!(kind, "test");
        assert_eq!(meta["k"], 42);
        assert_eq!(fields[0].0, "a");
        assert_eq!(fields[0].1, a);
        assert_eq!(fields[1].0, "b");
        assert_eq!(fields[1].1, b);
    }
}
