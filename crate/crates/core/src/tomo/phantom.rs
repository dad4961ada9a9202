use serde::{Deserialize, Serialize};

use super::ReconImage;
use crate::waveform::ScanGeometry;
use crate::{Error, Result};

/// Two-material cylinder: outer annulus and inner disk, relative units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Materials {
    pub outer_coefficient: f64,
    pub inner_coefficient: f64,
    /// cm
    pub outer_diameter: f64,
    /// cm
    pub inner_diameter: f64,
    /// Phantom pixels per reconstruction pixel along each axis.
    pub oversample: usize,
}

impl Default for Materials {
    fn default() -> Self {
        Self {
            outer_coefficient: 1.0,
            inner_coefficient: 0.4,
            outer_diameter: 2.4,
            inner_diameter: 1.2,
            oversample: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// Row-major; row index grows with y, column index with x.
    pub grid: Vec<f64>,
    pub size: usize,
    pub field_of_view: f64,
}

impl Phantom {
    pub fn from_grid(grid: Vec<f64>, size: usize, field_of_view: f64) -> Result<Self> {
        if size == 0 || grid.len() != size * size {
            return Err(Error::Shape(format!("grid of {} values is not {size}x{size}", grid.len())));
        }
        if let Some(v) = grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Geometry(format!("attenuation {v} must be finite and >= 0")));
        }
        if !(field_of_view > 0.0) {
            return Err(Error::Geometry("field of view must be > 0".into()));
        }
        Ok(Self {
            grid,
            size,
            field_of_view,
        })
    }

    pub fn zeros(size: usize, field_of_view: f64) -> Self {
        Self {
            grid: vec![0.0; size * size],
            size,
            field_of_view,
        }
    }

    pub fn pixel_size(&self) -> f64 {
        self.field_of_view / self.size as f64
    }

    /// Physical centre of pixel index `i` along either axis, cm.
    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.pixel_size() - self.field_of_view / 2.0
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.size + col]
    }

    /// Bilinear interpolation at `(x, y)` cm; zero outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let p = self.pixel_size();
        let half = self.field_of_view / 2.0;
        let fx = (x + half) / p - 0.5;
        let fy = (y + half) / p - 0.5;
        let (c0, r0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - c0, fy - r0);
        let n = self.size as isize;
        let at = |r: isize, c: isize| {
            if r < 0 || c < 0 || r >= n || c >= n {
                0.0
            } else {
                self.grid[(r * n + c) as usize]
            }
        };
        let (r0, c0) = (r0 as isize, c0 as isize);
        (1.0 - ay) * ((1.0 - ax) * at(r0, c0) + ax * at(r0, c0 + 1))
            + ay * ((1.0 - ax) * at(r0 + 1, c0) + ax * at(r0 + 1, c0 + 1))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.iter().map(|v| a * v).collect(),
            ..self.clone()
        }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.size != other.size {
            return Err(Error::Shape("phantom sizes differ".into()));
        }
        Ok(Self {
            grid: self.grid.iter().zip(&other.grid).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Counter-clockwise rotation about the centre by resampling.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let grid = (0..self.size * self.size)
            .map(|k| {
                let (x, y) = (self.centre(k % self.size), self.centre(k / self.size));
                self.sample(c * x + s * y, -s * x + c * y).max(0.0)
            })
            .collect();
        Self {
            grid,
            ..self.clone()
        }
    }

    /// Box average down to `n x n`, then scaled into `[0, 1]`. This is the
    /// reference a reconstruction on an `n` grid is scored against.
    pub fn reference_image(&self, n: usize) -> Result<ReconImage> {
        if n == 0 || self.size % n != 0 {
            return Err(Error::Shape(format!("{} is not a multiple of {n}", self.size)));
        }
        let k = self.size / n;
        let mut pixels = vec![0.0; n * n];
        for r in 0..self.size {
            for c in 0..self.size {
                pixels[(r / k) * n + c / k] += self.value(r, c);
            }
        }
        let inv = 1.0 / (k * k) as f64;
        pixels.iter_mut().for_each(|v| *v *= inv);
        Ok(ReconImage::raw(pixels, n)?.unit_range())
    }
}

/// Pixel-centre rasterisation of the composite cylinder on a grid of
/// `translations * oversample` pixels spanning the field of view.
pub fn make_phantom(geometry: &ScanGeometry, materials: &Materials) -> Result<Phantom> {
    geometry.validate()?;
    let m = materials;
    if !(m.inner_diameter >= 0.0 && m.inner_diameter < m.outer_diameter) {
        return Err(Error::Geometry(format!(
            "inner diameter {} must be >= 0 and below outer diameter {}",
            m.inner_diameter, m.outer_diameter
        )));
    }
    if m.outer_diameter > geometry.field_of_view {
        return Err(Error::Geometry(format!(
            "outer diameter {} exceeds the field of view {}",
            m.outer_diameter, geometry.field_of_view
        )));
    }
    if !(m.outer_coefficient >= 0.0 && m.inner_coefficient >= 0.0) {
        return Err(Error::Geometry("attenuation coefficients must be >= 0".into()));
    }
    if m.oversample == 0 {
        return Err(Error::Geometry("oversample must be >= 1".into()));
    }
    let size = geometry.translations * m.oversample;
    let mut phantom = Phantom::zeros(size, geometry.field_of_view);
    let (ro, ri) = (m.outer_diameter / 2.0, m.inner_diameter / 2.0);
    for r in 0..size {
        for c in 0..size {
            let rad = phantom.centre(c).hypot(phantom.centre(r));
            phantom.grid[r * size + c] = if rad <= ri && ri > 0.0 {
                m.inner_coefficient
            } else if rad <= ro {
                m.outer_coefficient
            } else {
                0.0
            };
        }
    }
    Ok(phantom)
}
