//! Binary PGM (P5) and PPM (P6) image export/import.
//!
//! One channel writes PGM, three channels write PPM. Values are clipped
//! to `[0, 1]` and scaled to bytes with round-half-away-from-zero.
//! Three-channel vectors use the channel-planar layout of
//! [`load_cifar10`](super::load_cifar10); PPM pixel order is interleaved
//! RGB, so export/import translate between the two.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a flattened image vector as a binary PGM or PPM file.
pub fn export_image(x: ArrayView1<f64>, shape: (usize, usize, usize), path: &Path) -> Result<()> {
    let (h, w, c) = shape;
    if h * w * c != x.len() {
        return Err(Error::Argument(format!(
            "shape {shape:?} does not match vector length {}",
            x.len()
        )));
    }
    if c != 1 && c != 3 {
        return Err(Error::Argument(format!(
            "can only export 1- or 3-channel images, got {c}"
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let magic = if c == 1 { "P5" } else { "P6" };
    write!(out, "{magic}\n{w} {h}\n255\n")?;
    if c == 1 {
        for &v in x.iter() {
            out.write_all(&[to_byte(v)])?;
        }
    } else {
        // planar in memory, interleaved on disk
        let plane = h * w;
        for i in 0..plane {
            out.write_all(&[to_byte(x[i]), to_byte(x[plane + i]), to_byte(x[2 * plane + i])])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a binary PGM/PPM file back into a flattened `[0, 1]` vector.
pub fn import_image(path: &Path) -> Result<(Array1<f64>, (usize, usize, usize))> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    // magic, dimensions, maxval; comments are not emitted by export_image
    // and are not supported here.
    for _ in 0..3 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format(format!(
                "{}: truncated header",
                path.display()
            )));
        }
        header.push_str(&line);
    }
    let mut tokens = header.split_whitespace();
    let magic = tokens.next().unwrap_or("");
    let channels = match magic {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported magic '{other}'",
                path.display()
            )))
        }
    };
    let parse = |t: Option<&str>| -> Result<usize> {
        t.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: malformed header", path.display())))
    };
    let w = parse(tokens.next())?;
    let h = parse(tokens.next())?;
    let maxval = parse(tokens.next())?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "{}: only maxval 255 is supported, got {maxval}",
            path.display()
        )));
    }
    let mut bytes = vec![0u8; h * w * channels];
    reader.read_exact(&mut bytes)?;
    let plane = h * w;
    let mut out = Array1::zeros(h * w * channels);
    if channels == 1 {
        for (i, &b) in bytes.iter().enumerate() {
            out[i] = f64::from(b) / 255.0;
        }
    } else {
        for i in 0..plane {
            for ch in 0..3 {
                out[ch * plane + i] = f64::from(bytes[3 * i + ch]) / 255.0;
            }
        }
    }
    Ok((out, (h, w, channels)))
}
