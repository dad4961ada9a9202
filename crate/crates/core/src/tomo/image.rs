use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    UnitRange,
}

/// Square image, row-major, rows growing with y.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    pub pixels: Vec<f64>,
    pub size: usize,
    pub normalization: Normalization,
}

impl ReconImage {
    pub fn raw(pixels: Vec<f64>, size: usize) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!("{} pixels is not {size}x{size}", pixels.len())));
        }
        Ok(Self {
            pixels,
            size,
            normalization: Normalization::Raw,
        })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            pixels: vec![0.0; size * size],
            size,
            normalization: Normalization::UnitRange,
        }
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// Negative values clipped to 0, then divided by the maximum. An image
    /// with no positive pixel maps to all zeros.
    pub fn unit_range(&self) -> Self {
        let max = self.pixels.iter().cloned().fold(0.0, f64::max);
        let pixels = if max > 0.0 {
            self.pixels.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.pixels.len()]
        };
        Self {
            pixels,
            size: self.size,
            normalization: Normalization::UnitRange,
        }
    }
}

/// Root mean squared pixel difference.
pub fn rmse(a: &ReconImage, b: &ReconImage) -> Result<f64> {
    if a.size != b.size || a.pixels.len() != b.pixels.len() {
        return Err(Error::Shape(format!("{0}x{0} vs {1}x{1}", a.size, b.size)));
    }
    let ss: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.pixels.len() as f64).sqrt())
}

pub fn write_image_csv(path: &Path, image: &ReconImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        for row in image.pixels.chunks(image.size) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a square CSV image; the normalization tag is inferred from range.
pub fn read_image_csv(path: &Path) -> Result<ReconImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pixels = Vec::new();
    let mut rows = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        for cell in line.split(',') {
            pixels.push(cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad pixel {cell:?}"),
            })?);
        }
        rows += 1;
    }
    let mut img = ReconImage::raw(pixels, rows)?;
    if img.pixels.iter().all(|v| (0.0..=1.0).contains(v)) {
        img.normalization = Normalization::UnitRange;
    }
    Ok(img)
}

/// 8-bit binary graymap. Raw images are unit-range normalised first. Rows
/// are written top (largest y) first so the picture is upright.
pub fn write_pgm(path: &Path, image: &ReconImage) -> Result<()> {
    let img = match image.normalization {
        Normalization::Raw => image.unit_range(),
        Normalization::UnitRange => image.clone(),
    };
    let n = img.size;
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in (0..n).rev() {
        for col in 0..n {
            bytes.push((img.value(row, col).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
