use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AttackError, Result};
use crate::nn::Tensor;

/// Anisotropic total variation over the trailing two axes, summed over leading ones.
pub fn total_variation(image: &Tensor) -> Result<f64> {
    let shape = image.shape();
    if shape.len() < 2 || shape[shape.len() - 2] < 2 || shape[shape.len() - 1] < 2 {
        return Err(AttackError::TooSmall(shape.to_vec()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut tv = 0.0;
    for p in image.data().chunks_exact(h * w) {
        for r in 0..h {
            for c in 0..w {
                let v = p[r * w + c];
                if c + 1 < w {
                    tv += (v - p[r * w + c + 1]).abs();
                }
                if r + 1 < h {
                    tv += (v - p[(r + 1) * w + c]).abs();
                }
            }
        }
    }
    Ok(tv)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(AttackError::Shape(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(AttackError::Shape("empty image".into()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10 log10(1 / MSE)` for unit-range images; identical inputs give `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// Binary 8-bit graymap of a `[h, w]` (or `[1, h, w]`) image in [0, 1].
pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    let (h, w) = match *shape {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(AttackError::Shape(format!(
                "cannot write {shape:?} as a graymap"
            )))
        }
    };
    let mut out = Vec::with_capacity(h * w + 20);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary 8-bit graymap into a `[h, w]` tensor scaled to [0, 1].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let bad = || AttackError::Shape("not an 8-bit P5 graymap".into());
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if at < bytes.len() && bytes[at] == b'#' {
            while at < bytes.len() && bytes[at] != b'\n' {
                at += 1;
            }
            continue;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..at])
                .map_err(|_| bad())?
                .to_owned(),
        );
    }
    at += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = bytes.get(at..at + w * h).ok_or_else(bad)?;
    Ok(Tensor::new(
        vec![h, w],
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?)
}
