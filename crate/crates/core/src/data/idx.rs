use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Result, MNIST_MEAN, MNIST_STD};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Format("truncated IDX header".into()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(DataError::Format(format!(
            "bad IDX magic {magic:#010x}, expected {expected:#010x} ({expected})"
        )));
    }
    Ok(())
}

/// Parses an IDX3 image file into `(rows, cols, pixels)`; one byte per pixel.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::Format("IDX dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(DataError::Format(format!(
            "truncated IDX image data: {} of {need} bytes",
            body.len()
        )));
    }
    Ok((rows, cols, body[..need].to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(DataError::Format(format!(
            "truncated IDX label data: {} of {count} bytes",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

pub fn write_idx_images(mut w: impl Write, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(DataError::Invalid(
            "pixel count is not a multiple of rows*cols".into(),
        ));
    }
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for v in [pixels.len() / per, rows, cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    w.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(mut w: impl Write, labels: &[u8]) -> Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Loads an image/label IDX pair with pixels scaled to [0, 1].
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let (rows, cols, pixels) = read_idx_images(&fs::read(images_path)?)?;
    let labels = read_idx_labels(&fs::read(labels_path)?)?;
    let features = rows * cols;
    if features == 0 || pixels.len() / features != labels.len() {
        return Err(DataError::Format(format!(
            "{} images but {} labels",
            if features == 0 {
                0
            } else {
                pixels.len() / features
            },
            labels.len()
        )));
    }
    let classes = MNIST_CLASSES.max(labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0));
    let inputs = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(
        inputs,
        features,
        labels.into_iter().map(usize::from).collect(),
        classes,
    )
}

/// Standard MNIST file names inside `dir`, standardized with the usual mean and deviation.
/// Returns `(train, test)`.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let load = |images: &str, labels: &str| {
        let (i, l) = (dir.join(images), dir.join(labels));
        for p in [&i, &l] {
            if !p.is_file() {
                return Err(DataError::Invalid(format!(
                    "missing MNIST file {}",
                    p.display()
                )));
            }
        }
        let mut d = load_mnist_idx(i, l)?;
        d.standardize(MNIST_MEAN, MNIST_STD)?;
        Ok(d)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}
