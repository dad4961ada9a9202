//! Noise gating, linear detrending and packet segmentation.

use serde::{Deserialize, Serialize};

use crate::waveform::{PacketCountRange, RecordId, WavePacket, WaveformRecord};
use crate::{Error, Result};

/// Standard-deviation gate separating noise-only records from transmission.
pub const DEFAULT_GATE_THRESHOLD: f64 = 8.6734e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub record_id: RecordId,
    pub std_dev: f64,
    pub is_transmission: bool,
    pub threshold: f64,
}

/// Population (divide-by-n) standard deviation, two-pass.
pub fn population_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// A record is transmission iff its std strictly exceeds `threshold`.
pub fn gate_noise(record: &WaveformRecord, threshold: f64) -> Result<GateDecision> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gate threshold {threshold} must be > 0"
        )));
    }
    let std_dev = population_std(record.samples());
    Ok(GateDecision {
        record_id: record.id(),
        std_dev,
        is_transmission: std_dev > threshold,
        threshold,
    })
}

/// Subtracts the least-squares straight line.
pub fn detrend(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort {
            needed: 2,
            actual: n,
        });
    }
    let center = (n as f64 - 1.0) / 2.0;
    let mean = x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let t = i as f64 - center;
        sxy += t * (v - mean);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - mean - slope * (i as f64 - center))
        .collect())
}

/// Envelope segmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Entry threshold as a multiple of the noise floor; exit is half of it.
    pub threshold_factor: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            threshold_factor: 4.0,
        }
    }
}

/// Centered moving RMS with the window truncated at the edges.
pub fn moving_rms(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            ((prefix[hi] - prefix[lo]).max(0.0) / (hi - lo) as f64).sqrt()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Splits a detrended record into wave packets.
///
/// Strategy 1 thresholds a moving-RMS envelope (window = one burst) with
/// hysteresis. If the count falls outside `range`, strategy 2 divides the
/// record into equal sections and keeps them only if every section carries
/// energy above the exit level.
pub fn segment_packets(
    samples: &[f64],
    window: usize,
    range: PacketCountRange,
    config: &SegmentConfig,
) -> Result<Vec<WavePacket>> {
    let n = samples.len();
    if n == 0 || window == 0 {
        return Err(Error::Segmentation { count: 0 });
    }
    let env = moving_rms(samples, window);
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Segmentation { count: 0 });
    }
    // noiseless records have a zero median envelope
    let floor = median(env.clone()).max(peak * 1e-9);
    let enter = config.threshold_factor * floor;
    let exit = enter / 2.0;

    let mut packets = Vec::new();
    let mut start = None;
    for (i, &e) in env.iter().enumerate() {
        match start {
            None if e > enter => start = Some(i),
            Some(s) if e < exit => {
                packets.push(WavePacket { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        packets.push(WavePacket { start: s, end: n });
    }
    if range.contains(packets.len()) {
        return Ok(packets);
    }
    let detected = packets.len();

    for count in (range.min..=range.max).rev() {
        let sections: Vec<WavePacket> = (0..count)
            .map(|k| WavePacket {
                start: k * n / count,
                end: (k + 1) * n / count,
            })
            .filter(|p| !p.is_empty())
            .collect();
        if sections.len() == count
            && sections
                .iter()
                .all(|p| rms(&samples[p.start..p.end]) > exit)
        {
            return Ok(sections);
        }
    }
    Err(Error::Segmentation { count: detected })
}
