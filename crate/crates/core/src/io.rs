//! File outputs: JSON, CSV, binary PPM and little-endian f32 blobs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes one CSV row per record with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a raw-header CSV from explicit columns.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PPM (P6) from a channel-major `3 x h x w` image in `[0, 1]`.
pub fn write_ppm(path: &Path, image: &[f64], height: usize, width: usize) -> Result<()> {
    Error::check_dim(3 * height * width, image.len())?;
    let plane = height * width;
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    for px in 0..plane {
        for ch in 0..3 {
            let v = image[ch * plane + px].clamp(0.0, 1.0);
            bytes.push((v * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_f32_blob(path: &Path, data: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = data
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Config(format!(
            "{} is not a whole number of f32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Serialize)]
struct BlobShape<'a> {
    dtype: &'a str,
    shape: &'a [usize],
}

/// f32 blob plus a `{dtype, shape}` sidecar with a `.json` extension.
pub fn write_blob_with_shape(path: &Path, data: &[f64], shape: &[usize]) -> Result<()> {
    Error::check_dim(shape.iter().product(), data.len())?;
    write_f32_blob(path, data)?;
    write_json(
        &path.with_extension("json"),
        &BlobShape {
            dtype: "f32le",
            shape,
        },
    )
}
