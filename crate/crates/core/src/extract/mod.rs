//! Amplitude extractors and their shared result type.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::waveform::{AmplitudeReading, RecordId};
use crate::{Error, Result};

pub mod fft;
pub mod gradient;
pub mod wavelet;

pub use fft::{extract_fft, FftConfig};
pub use gradient::extract_gradient;
pub use wavelet::{dwt, extract_wavelet, idwt, shannon_energy, WaveletConfig};

/// Per-packet extractor output: a reading or the reason there is none.
pub type PacketOutcome = Result<AmplitudeReading>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gradient,
    Fft,
    Wavelet,
    Ann,
    Svm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gradient,
        Method::Fft,
        Method::Wavelet,
        Method::Ann,
        Method::Svm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::Fft => "fft",
            Method::Wavelet => "wavelet",
            Method::Ann => "ann",
            Method::Svm => "svm",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Ann | Method::Svm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketReading {
    pub packet_index: usize,
    pub reading: AmplitudeReading,
    /// Set when a learned extractor found no positive sample and fell back to
    /// the raw maximum.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketFailure {
    pub packet_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub record_id: RecordId,
    pub method: Method,
    pub readings: Vec<PacketReading>,
    pub failures: Vec<PacketFailure>,
}

impl ExtractionResult {
    pub fn from_outcomes(
        record_id: RecordId,
        method: Method,
        outcomes: Vec<(PacketOutcome, bool)>,
    ) -> Self {
        let mut readings = Vec::new();
        let mut failures = Vec::new();
        for (packet_index, (outcome, fallback)) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(reading) => readings.push(PacketReading {
                    packet_index,
                    reading,
                    fallback,
                }),
                Err(e) => failures.push(PacketFailure {
                    packet_index,
                    reason: e.to_string(),
                }),
            }
        }
        Self {
            record_id,
            method,
            readings,
            failures,
        }
    }

    pub fn packet_count(&self) -> usize {
        self.readings.len() + self.failures.len()
    }

    pub fn mean_amplitude(&self) -> Option<f64> {
        mean_amplitude(self.readings.iter().map(|r| r.reading.amplitude))
    }

    /// Squared mean packet amplitude; `None` when no packet was read.
    pub fn projection_value(&self) -> Option<f64> {
        self.mean_amplitude().map(|a| a * a)
    }

    /// Peak indices a scorer should treat as predictions (fallbacks excluded).
    pub fn predicted_peaks(&self) -> Vec<usize> {
        self.readings
            .iter()
            .filter(|r| !r.fallback)
            .map(|r| r.reading.peak_index)
            .collect()
    }
}

fn mean_amplitude(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub const EXTRACTION_CSV_HEADER: &str =
    "record_id,method,packet_index,peak_index,trough_index,amplitude,projection_value,flag";

pub fn write_extraction_csv(path: &Path, results: &[ExtractionResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{EXTRACTION_CSV_HEADER}")?;
        for res in results {
            let projection = res.projection_value().unwrap_or(f64::NAN);
            for r in &res.readings {
                writeln!(
                    w,
                    "{},{},{},{},{},{:?},{:?},{}",
                    res.record_id,
                    res.method,
                    r.packet_index,
                    r.reading.peak_index,
                    r.reading.trough_index,
                    r.reading.amplitude,
                    projection,
                    if r.fallback { "fallback" } else { "ok" }
                )?;
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads an extraction CSV back into per-record results (failures are not
/// stored on disk).
pub fn read_extraction_csv(path: &Path) -> Result<Vec<ExtractionResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut grouped: BTreeMap<(RecordId, Method), Vec<PacketReading>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != EXTRACTION_CSV_HEADER {
                return Err(Error::Format(format!("unexpected header in {}", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 8 {
            return Err(bad("expected 8 columns"));
        }
        let id: RecordId = c[0].parse()?;
        let method: Method = c[1].parse()?;
        let reading = PacketReading {
            packet_index: c[2].parse().map_err(|_| bad("packet_index"))?,
            reading: AmplitudeReading {
                peak_index: c[3].parse().map_err(|_| bad("peak_index"))?,
                trough_index: c[4].parse().map_err(|_| bad("trough_index"))?,
                amplitude: c[5].parse().map_err(|_| bad("amplitude"))?,
            },
            fallback: match c[7] {
                "ok" => false,
                "fallback" => true,
                _ => return Err(bad("flag")),
            },
        };
        grouped.entry((id, method)).or_default().push(reading);
    }
    Ok(grouped
        .into_iter()
        .map(|((record_id, method), readings)| ExtractionResult {
            record_id,
            method,
            readings,
            failures: Vec::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_square_of_mean() {
        let mk = |a: f64, k: usize| PacketReading {
            packet_index: k,
            reading: AmplitudeReading {
                peak_index: 10 * k,
                trough_index: 10 * k + 3,
                amplitude: a,
            },
            fallback: false,
        };
        let res = ExtractionResult {
            record_id: RecordId::new(0, 1),
            method: Method::Fft,
            readings: vec![mk(1.0, 0), mk(3.0, 1)],
            failures: vec![],
        };
        assert_eq!(res.projection_value(), Some(4.0));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_extraction_csv(&path, std::slice::from_ref(&res)).unwrap();
        let back = read_extraction_csv(&path).unwrap();
        assert_eq!(back, vec![res]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("knn".parse::<Method>().is_err());
    }
}
