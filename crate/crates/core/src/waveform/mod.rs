//! Acquisition records, wave packets, amplitude readings and ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod io;

pub use io::{read_labels_csv, read_record, write_labels_csv, write_record, Format};

/// Default digitizer rate, samples per second.
pub const DEFAULT_SAMPLE_RATE: f64 = 50.0e6;
/// Samples per acquisition file.
pub const DEFAULT_RECORD_LEN: usize = 50_002;

/// Scan position of a record, `r{rotation}_t{translation}` when printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId {
    pub rotation: usize,
    pub translation: usize,
}

impl RecordId {
    pub fn new(rotation: usize, translation: usize) -> Self {
        Self {
            rotation,
            translation,
        }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{:02}_t{:02}", self.rotation, self.translation)
    }
}

impl FromStr for RecordId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad record id {s:?}"));
        let rest = s.strip_prefix('r').ok_or_else(bad)?;
        let (rot, trans) = rest.split_once("_t").ok_or_else(bad)?;
        Ok(Self {
            rotation: rot.parse().map_err(|_| bad())?,
            translation: trans.parse().map_err(|_| bad())?,
        })
    }
}

/// One acquisition file. Immutable once built; every sample is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    samples: Vec<f64>,
    sample_rate: f64,
    id: RecordId,
}

impl WaveformRecord {
    pub fn new(samples: Vec<f64>, sample_rate: f64, id: RecordId) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyRecord);
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::RejectedValue(format!(
                "sample rate {sample_rate} must be positive"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::RejectedValue(format!(
                "non-finite sample {} at index {i}",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            id,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn id(&self) -> RecordId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Inclusive range of packets expected per record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCountRange {
    pub min: usize,
    pub max: usize,
}

impl PacketCountRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::InvalidParameter(format!(
                "packet count range [{min}, {max}] is empty or starts at zero"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, count: usize) -> bool {
        (self.min..=self.max).contains(&count)
    }
}

impl Default for PacketCountRange {
    fn default() -> Self {
        Self { min: 7, max: 8 }
    }
}

/// Parallel-beam scan layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanGeometry {
    pub rotations: usize,
    pub translations: usize,
    /// Carrier frequency of the transmitted burst, Hz.
    pub signal_frequency: f64,
    pub packet_count: PacketCountRange,
    /// Width of the scanned field, cm. Translations span it symmetrically.
    pub field_of_view: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            rotations: 40,
            translations: 40,
            signal_frequency: 1.5e6,
            packet_count: PacketCountRange::default(),
            field_of_view: 3.0,
        }
    }
}

impl ScanGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rotations == 0 || self.translations == 0 {
            return Err(Error::Geometry("rotations and translations must be > 0".into()));
        }
        if !(self.signal_frequency > 0.0) {
            return Err(Error::Geometry("signal frequency must be > 0".into()));
        }
        if !(self.field_of_view > 0.0) {
            return Err(Error::Geometry("field of view must be > 0".into()));
        }
        PacketCountRange::new(self.packet_count.min, self.packet_count.max)?;
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.rotations * self.translations
    }

    /// Record ids in row-major (rotation, translation) order.
    pub fn record_ids(&self) -> Vec<RecordId> {
        (0..self.rotations)
            .flat_map(|r| (0..self.translations).map(move |t| RecordId::new(r, t)))
            .collect()
    }

    /// Projection angle of a rotation index, radians in [0, π).
    pub fn angle(&self, rotation: usize) -> f64 {
        rotation as f64 * std::f64::consts::PI / self.rotations as f64
    }

    pub fn translation_spacing(&self) -> f64 {
        self.field_of_view / self.translations as f64
    }

    /// Signed detector offset of a translation index, cm.
    pub fn translation_offset(&self, translation: usize) -> f64 {
        (translation as f64 - (self.translations as f64 - 1.0) / 2.0) * self.translation_spacing()
    }
}

/// Half-open sample span `[start, end)` of one tone burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavePacket {
    pub start: usize,
    pub end: usize,
}

impl WavePacket {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidParameter(format!(
                "packet [{start}, {end}) is empty"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }
}

/// Checks that packets are non-empty, inside the record, ordered and disjoint.
pub fn validate_packets(packets: &[WavePacket], record_len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, p) in packets.iter().enumerate() {
        if p.start >= p.end || p.end > record_len {
            return Err(Error::InvalidParameter(format!(
                "packet {i} [{}, {}) outside record of {record_len}",
                p.start, p.end
            )));
        }
        if i > 0 && p.start < prev_end {
            return Err(Error::InvalidParameter(format!(
                "packet {i} overlaps or precedes its predecessor"
            )));
        }
        prev_end = p.end;
    }
    Ok(())
}

/// Peak, forward trough and their difference for one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeReading {
    pub peak_index: usize,
    pub trough_index: usize,
    pub amplitude: f64,
}

impl AmplitudeReading {
    pub fn from_samples(samples: &[f64], peak_index: usize, trough_index: usize) -> Result<Self> {
        if trough_index <= peak_index || trough_index >= samples.len() {
            return Err(Error::InvalidParameter(format!(
                "trough {trough_index} must lie after peak {peak_index} inside the record"
            )));
        }
        let amplitude = samples[peak_index] - samples[trough_index];
        if amplitude < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "peak {peak_index} lies below trough {trough_index}"
            )));
        }
        Ok(Self {
            peak_index,
            trough_index,
            amplitude,
        })
    }

    /// Recomputes the amplitude from `samples` and compares it exactly.
    pub fn is_consistent_with(&self, samples: &[f64]) -> bool {
        self.trough_index > self.peak_index
            && self.trough_index < samples.len()
            && samples[self.peak_index] - samples[self.trough_index] == self.amplitude
    }
}

/// Ground-truth transmission peak of one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPeak {
    pub peak_index: usize,
    pub trough_index: usize,
    pub true_amplitude: f64,
}

/// Labels of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLabels {
    pub peaks: Vec<LabeledPeak>,
    pub record_len: usize,
}

impl GroundTruthLabels {
    pub fn peak_indices(&self) -> Vec<usize> {
        self.peaks.iter().map(|p| p.peak_index).collect()
    }

    /// Per-sample classes: 1 at transmission peaks, 0 elsewhere.
    pub fn class_sequence(&self) -> Vec<u8> {
        let mut classes = vec![0u8; self.record_len];
        for p in &self.peaks {
            classes[p.peak_index] = 1;
        }
        classes
    }

    /// Each labelled peak must sit in exactly one packet.
    pub fn validate_against(&self, packets: &[WavePacket], max_packets: usize) -> Result<()> {
        if self.peaks.len() > max_packets {
            return Err(Error::InvalidParameter(format!(
                "{} labelled peaks exceed {max_packets} packets",
                self.peaks.len()
            )));
        }
        for p in &self.peaks {
            let hits = packets.iter().filter(|w| w.contains(p.peak_index)).count();
            if hits != 1 {
                return Err(Error::InvalidParameter(format!(
                    "peak {} lies in {hits} packets",
                    p.peak_index
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_id_round_trips_through_text() {
        let id = RecordId::new(3, 17);
        assert_eq!(id.to_string(), "r03_t17");
        assert_eq!("r03_t17".parse::<RecordId>().unwrap(), id);
        assert!("x03_t17".parse::<RecordId>().is_err());
    }

    #[test]
    fn record_rejects_nan_and_empty() {
        let id = RecordId::new(0, 0);
        assert!(matches!(
            WaveformRecord::new(vec![1.0, f64::NAN], 1.0, id),
            Err(Error::RejectedValue(_))
        ));
        assert!(matches!(
            WaveformRecord::new(vec![], 1.0, id),
            Err(Error::EmptyRecord)
        ));
        assert!(WaveformRecord::new(vec![1.0], 0.0, id).is_err());
    }

    #[test]
    fn packet_validation() {
        let ok = [WavePacket::new(0, 5).unwrap(), WavePacket::new(5, 9).unwrap()];
        assert!(validate_packets(&ok, 10).is_ok());
        let overlap = [WavePacket::new(0, 6).unwrap(), WavePacket::new(5, 9).unwrap()];
        assert!(validate_packets(&overlap, 10).is_err());
        assert!(validate_packets(&ok, 8).is_err());
        assert!(WavePacket::new(4, 4).is_err());
    }

    #[test]
    fn reading_contract() {
        let x = [0.0, 2.0, 0.5, -1.0, 0.0];
        let r = AmplitudeReading::from_samples(&x, 1, 3).unwrap();
        assert_eq!(r.amplitude, 3.0);
        assert!(r.is_consistent_with(&x));
        assert!(AmplitudeReading::from_samples(&x, 3, 1).is_err());
        assert!(AmplitudeReading::from_samples(&x, 3, 4).is_err());
    }

    #[test]
    fn geometry_offsets_are_symmetric() {
        let g = ScanGeometry::default();
        let first = g.translation_offset(0);
        let last = g.translation_offset(g.translations - 1);
        assert!((first + last).abs() < 1e-12);
        assert!((g.translation_spacing() - 0.075).abs() < 1e-12);
        assert_eq!(g.record_ids().len(), 1600);
    }

    #[test]
    fn class_sequence_marks_peaks_only() {
        let labels = GroundTruthLabels {
            peaks: vec![LabeledPeak {
                peak_index: 2,
                trough_index: 4,
                true_amplitude: 1.0,
            }],
            record_len: 6,
        };
        assert_eq!(labels.class_sequence(), vec![0, 0, 1, 0, 0, 0]);
        let packets = [WavePacket::new(0, 3).unwrap(), WavePacket::new(3, 6).unwrap()];
        assert!(labels.validate_against(&packets, 8).is_ok());
        assert!(labels.validate_against(&packets[1..], 8).is_err());
    }
}
