use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Phantom;
use crate::extract::ExtractionResult;
use crate::par::Exec;
use crate::preprocess::GateDecision;
use crate::waveform::ScanGeometry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinogramMode {
    /// Squared mean packet amplitude.
    SquaredAmplitude,
    /// Line integral `-ln(A^2 / A0^2)`.
    Attenuation,
}

/// `rotations x translations` projection matrix with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub geometry: ScanGeometry,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub mode: SinogramMode,
}

impl Sinogram {
    pub fn zeros(geometry: &ScanGeometry, mode: SinogramMode) -> Self {
        let n = geometry.record_count();
        Self {
            geometry: geometry.clone(),
            values: vec![0.0; n],
            valid: vec![true; n],
            mode,
        }
    }

    pub fn rotations(&self) -> usize {
        self.geometry.rotations
    }

    pub fn translations(&self) -> usize {
        self.geometry.translations
    }

    pub fn value(&self, rotation: usize, translation: usize) -> f64 {
        self.values[rotation * self.translations() + translation]
    }

    pub fn is_valid(&self, rotation: usize, translation: usize) -> bool {
        self.valid[rotation * self.translations() + translation]
    }

    pub fn row(&self, rotation: usize) -> &[f64] {
        let t = self.translations();
        &self.values[rotation * t..(rotation + 1) * t]
    }

    /// Masks an entry; its value becomes 0.
    pub fn mask(&mut self, rotation: usize, translation: usize) {
        let k = rotation * self.translations() + translation;
        self.values[k] = 0.0;
        self.valid[k] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

pub fn forward_project(phantom: &Phantom, geometry: &ScanGeometry) -> Sinogram {
    forward_project_with(phantom, geometry, Exec::default())
}

/// Line integrals by bilinear sampling along each ray at half-pixel steps.
/// Ray `(r, t)` passes at signed offset `s_t` with direction
/// `(-sin θ_r, cos θ_r)`.
pub fn forward_project_with(phantom: &Phantom, geometry: &ScanGeometry, exec: Exec) -> Sinogram {
    let step = phantom.pixel_size() / 2.0;
    let half = phantom.field_of_view * std::f64::consts::SQRT_2 / 2.0;
    let steps = (2.0 * half / step).floor() as usize;
    let t_cols = geometry.translations;
    let rows = exec.map(geometry.rotations, |r| {
        let (sin, cos) = geometry.angle(r).sin_cos();
        (0..t_cols)
            .map(|j| {
                let s = geometry.translation_offset(j);
                let mut acc = 0.0;
                for k in 0..=steps {
                    let t = -half + k as f64 * step;
                    acc += phantom.sample(s * cos - t * sin, s * sin + t * cos);
                }
                acc * step
            })
            .collect::<Vec<f64>>()
    });
    Sinogram {
        geometry: geometry.clone(),
        values: rows.concat(),
        valid: vec![true; geometry.record_count()],
        mode: SinogramMode::Attenuation,
    }
}

/// Builds a sinogram from per-record extraction results.
///
/// `reference_amplitude` is the unattenuated packet amplitude A0. Records
/// that are missing, gated as noise, or without a positive reading are
/// masked.
pub fn assemble_sinogram(
    results: &[ExtractionResult],
    gates: &[GateDecision],
    geometry: &ScanGeometry,
    reference_amplitude: f64,
    mode: SinogramMode,
) -> Result<Sinogram> {
    if mode == SinogramMode::Attenuation && !(reference_amplitude > 0.0) {
        return Err(Error::InvalidParameter("reference amplitude must be > 0".into()));
    }
    let (rt, tt) = (geometry.rotations, geometry.translations);
    let mut sino = Sinogram::zeros(geometry, mode);
    sino.valid.iter_mut().for_each(|v| *v = false);
    let mut seen = vec![false; rt * tt];
    let in_range = |r: usize, t: usize| {
        if r < rt && t < tt {
            Ok(r * tt + t)
        } else {
            Err(Error::Geometry(format!("record r{r}_t{t} outside {rt}x{tt} scan")))
        }
    };
    for res in results {
        let id = res.record_id;
        let k = in_range(id.rotation, id.translation)?;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::DuplicateEntry {
                rotation: id.rotation,
                translation: id.translation,
            });
        }
        let Some(p) = res.projection_value().filter(|p| *p > 0.0) else {
            continue;
        };
        sino.values[k] = match mode {
            SinogramMode::SquaredAmplitude => p,
            SinogramMode::Attenuation => -(p / (reference_amplitude * reference_amplitude)).ln(),
        };
        sino.valid[k] = true;
    }
    for g in gates.iter().filter(|g| !g.is_transmission) {
        let k = in_range(g.record_id.rotation, g.record_id.translation)?;
        sino.values[k] = 0.0;
        sino.valid[k] = false;
    }
    Ok(sino)
}

/// One row per rotation, masked entries as `NA`.
pub fn write_sinogram_csv(path: &Path, sino: &Sinogram) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let t = sino.translations();
    let mut body = || -> std::io::Result<()> {
        for r in 0..sino.rotations() {
            let cells: Vec<String> = (0..t)
                .map(|j| {
                    if sino.is_valid(r, j) {
                        format!("{:?}", sino.value(r, j))
                    } else {
                        "NA".to_string()
                    }
                })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_sinogram_csv(path: &Path, geometry: &ScanGeometry, mode: SinogramMode) -> Result<Sinogram> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut valid = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        for cell in line.split(',') {
            if cell.trim() == "NA" {
                values.push(0.0);
                valid.push(false);
            } else {
                values.push(cell.trim().parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("bad sinogram value {cell:?}"),
                })?);
                valid.push(true);
            }
        }
    }
    if values.len() != geometry.record_count() {
        return Err(Error::Shape(format!(
            "{} sinogram entries for a {}x{} scan",
            values.len(),
            geometry.rotations,
            geometry.translations
        )));
    }
    Ok(Sinogram {
        geometry: geometry.clone(),
        values,
        valid,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{Method, PacketReading};
    use crate::tomo::{make_phantom, Materials};
    use crate::waveform::{AmplitudeReading, RecordId};

    fn disk() -> (Phantom, ScanGeometry) {
        let g = ScanGeometry::default();
        let m = Materials {
            inner_diameter: 0.0,
            ..Materials::default()
        };
        (make_phantom(&g, &m).unwrap(), g)
    }

    #[test]
    fn zero_phantom_projects_to_zero() {
        let g = ScanGeometry::default();
        let s = forward_project(&Phantom::zeros(160, 3.0), &g);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_chord_matches_analytic_length() {
        let (p, g) = disk();
        let s = forward_project(&p, &g);
        let c = g.translations / 2;
        let off = g.translation_offset(c);
        let chord = 2.0 * (1.2f64 * 1.2 - off * off).sqrt();
        for r in 0..g.rotations {
            assert!((s.value(r, c) / chord - 1.0).abs() < 0.02, "{}", s.value(r, c));
            for j in 0..g.translations {
                assert!((s.value(r, j) - s.value(0, j)).abs() <= 0.01 * s.value(0, c));
            }
        }
    }

    #[test]
    fn composite_profile_is_symmetric() {
        let g = ScanGeometry::default();
        let p = make_phantom(&g, &Materials::default()).unwrap();
        let s = forward_project(&p, &g);
        let peak = s.values.iter().cloned().fold(0.0, f64::max);
        for r in 0..g.rotations {
            for j in 0..g.translations {
                let mirror = g.translations - 1 - j;
                assert!((s.value(r, j) - s.value(r, mirror)).abs() <= 0.01 * peak);
            }
        }
    }

    #[test]
    fn projection_is_linear() {
        let g = ScanGeometry::default();
        let a = make_phantom(&g, &Materials::default()).unwrap();
        let (b, _) = disk();
        let b = b.rotated(0.3).scaled(0.7);
        let combo = a.scaled(2.0).plus(&b.scaled(-0.5)).unwrap();
        let (pa, pb, pc) = (forward_project(&a, &g), forward_project(&b, &g), forward_project(&combo, &g));
        for k in 0..pa.values.len() {
            let expect = 2.0 * pa.values[k] - 0.5 * pb.values[k];
            assert!((pc.values[k] - expect).abs() <= 1e-8 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn rotation_shifts_rows() {
        let (p, g) = disk();
        let base = forward_project(&p, &g);
        let rot = forward_project(&p.rotated(g.angle(1)), &g);
        let peak = base.values.iter().cloned().fold(0.0, f64::max);
        for r in 0..g.rotations - 1 {
            for j in 0..g.translations {
                assert!((rot.value(r + 1, j) - base.value(r, j)).abs() <= 0.01 * peak);
            }
        }
    }

    fn result(id: RecordId, amps: &[f64]) -> ExtractionResult {
        ExtractionResult {
            record_id: id,
            method: Method::Gradient,
            readings: amps
                .iter()
                .enumerate()
                .map(|(k, &a)| PacketReading {
                    packet_index: k,
                    reading: AmplitudeReading {
                        peak_index: k * 10,
                        trough_index: k * 10 + 5,
                        amplitude: a,
                    },
                    fallback: false,
                })
                .collect(),
            failures: vec![],
        }
    }

    #[test]
    fn assembly_modes_masks_and_duplicates() {
        let g = ScanGeometry {
            rotations: 2,
            translations: 2,
            ..ScanGeometry::default()
        };
        let results = vec![
            result(RecordId::new(0, 0), &[2.0, 2.0]),
            result(RecordId::new(0, 1), &[1.0, 3.0]),
            result(RecordId::new(1, 0), &[2.0]),
        ];
        let gates = [GateDecision {
            record_id: RecordId::new(1, 0),
            std_dev: 0.0,
            is_transmission: false,
            threshold: 1.0,
        }];
        let raw = assemble_sinogram(&results, &gates, &g, 2.0, SinogramMode::SquaredAmplitude).unwrap();
        assert_eq!(raw.values, vec![4.0, 4.0, 0.0, 0.0]);
        assert_eq!(raw.valid, vec![true, true, false, false]);
        let att = assemble_sinogram(&results, &[], &g, 2.0, SinogramMode::Attenuation).unwrap();
        assert_eq!(att.value(0, 0), 0.0);
        let att1 = assemble_sinogram(&results, &[], &g, 1.0, SinogramMode::Attenuation).unwrap();
        assert_eq!(att1.value(0, 1), -(4.0f64).ln());
        assert!(att.is_valid(1, 0) && !att.is_valid(1, 1));

        let mut dup = results.clone();
        dup.push(result(RecordId::new(0, 1), &[1.0]));
        assert!(matches!(
            assemble_sinogram(&dup, &[], &g, 2.0, SinogramMode::Attenuation),
            Err(Error::DuplicateEntry {
                rotation: 0,
                translation: 1
            })
        ));
    }

    #[test]
    fn full_scan_assembles_full_matrix() {
        let g = ScanGeometry::default();
        let results: Vec<_> = g.record_ids().into_iter().map(|id| result(id, &[1.0])).collect();
        let s = assemble_sinogram(&results, &[], &g, 1.0, SinogramMode::Attenuation).unwrap();
        assert_eq!(s.values.len(), 1600);
        assert_eq!(s.valid_count(), 1600);
    }

    #[test]
    fn csv_round_trip_with_na() {
        let g = ScanGeometry {
            rotations: 3,
            translations: 2,
            ..ScanGeometry::default()
        };
        let mut s = Sinogram::zeros(&g, SinogramMode::Attenuation);
        s.values = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        s.mask(1, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sinogram_csv(&path, &s).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("NA,0.4"));
        assert_eq!(read_sinogram_csv(&path, &g, SinogramMode::Attenuation).unwrap(), s);
    }
}
