//! Local extrema, trough prominence and the forward-trough rule shared by
//! every extractor.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
}

/// Indices where the first difference changes sign. A flat run between a
/// rise and a fall (or fall and rise) reports its first index; runs that
/// continue in the same direction are not extrema.
pub fn find_extrema(x: &[f64]) -> Vec<Extremum> {
    let mut out = Vec::new();
    if x.len() < 3 {
        return out;
    }
    let mut prev_sign = 0i8;
    let mut plateau_start: Option<usize> = None;
    for i in 0..x.len() - 1 {
        let d = x[i + 1] - x[i];
        if d == 0.0 {
            plateau_start.get_or_insert(i);
            continue;
        }
        let sign = if d > 0.0 { 1 } else { -1 };
        if prev_sign != 0 && sign != prev_sign {
            let index = plateau_start.unwrap_or(i);
            let kind = if prev_sign > 0 {
                ExtremumKind::Maximum
            } else {
                ExtremumKind::Minimum
            };
            out.push(Extremum { index, kind });
        }
        prev_sign = sign;
        plateau_start = None;
    }
    out
}

pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    find_extrema(x)
        .into_iter()
        .filter(|e| e.kind == ExtremumKind::Maximum)
        .map(|e| e.index)
        .collect()
}

pub fn local_minima(x: &[f64]) -> Vec<usize> {
    find_extrema(x)
        .into_iter()
        .filter(|e| e.kind == ExtremumKind::Minimum)
        .map(|e| e.index)
        .collect()
}

/// Topographic prominence of the minimum at `i`, measured inside `x`.
///
/// On each side the scan stops at the first sample strictly below `x[i]`
/// (or at the slice edge); the reference level is the lower of the two
/// side maxima.
pub fn trough_prominence(x: &[f64], i: usize) -> f64 {
    let v = x[i];
    let mut left = v;
    for &y in x[..i].iter().rev() {
        if y < v {
            break;
        }
        left = left.max(y);
    }
    let mut right = v;
    for &y in &x[i + 1..] {
        if y < v {
            break;
        }
        right = right.max(y);
    }
    left.min(right) - v
}

/// Minima whose prominence falls below `prominence_fraction` times the
/// packet peak-to-peak range are skipped by the forward-trough search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TroughFilter {
    pub prominence_fraction: f64,
}

impl Default for TroughFilter {
    fn default() -> Self {
        Self {
            prominence_fraction: 0.1,
        }
    }
}

impl TroughFilter {
    /// First qualifying local minimum after `peak` inside `packet`, searched
    /// no further than `search_end`. Indices are absolute.
    pub fn forward_trough(
        &self,
        samples: &[f64],
        packet: std::ops::Range<usize>,
        peak: usize,
        search_end: usize,
    ) -> Option<usize> {
        let seg = &samples[packet.clone()];
        let (lo, hi) = seg
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let min_prominence = self.prominence_fraction * (hi - lo);
        let end = search_end.min(packet.end);
        local_minima(seg)
            .into_iter()
            .map(|m| m + packet.start)
            .filter(|&m| m > peak && m < end)
            .find(|&m| trough_prominence(seg, m - packet.start) >= min_prominence)
    }
}
