//! Eight per-sample features describing dynamics and morphology around
//! each sample.
//!
//! Notation: `X(i)` is the sample value, `Y(i)` the value of the first
//! extremum strictly after `i` (0 when none follows), and `N(i)` the
//! neighbourhood `i-m..=i+m` clipped to the record.

use std::collections::HashMap;
use std::ops::Range;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::extract::fft::transform;
use crate::extrema::{find_extrema, ExtremumKind};
use crate::{Error, Result};

pub type FeatureVector = [f64; 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub filters: usize,
    /// Frames are evaluated every `stride` samples and held in between.
    pub stride: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_len: 256,
            filters: 26,
            stride: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Neighbourhood half-width m, samples.
    pub half_width: usize,
    /// f7 divides by the neighbourhood maximum of `|X|` instead of `X`.
    pub f7_absolute: bool,
    /// Taken from the record being processed, not from configuration.
    #[serde(skip)]
    pub sample_rate: f64,
    pub mfcc: MfccConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            half_width: 25,
            f7_absolute: false,
            sample_rate: crate::waveform::DEFAULT_SAMPLE_RATE,
            mfcc: MfccConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.half_width == 0 {
            return Err(Error::InvalidParameter("neighbourhood half-width must be >= 1".into()));
        }
        if len <= 2 * self.half_width {
            return Err(Error::TooShort {
                needed: 2 * self.half_width + 1,
                actual: len,
            });
        }
        let f = &self.mfcc;
        if f.frame_len < 2 || f.filters == 0 || f.stride == 0 {
            return Err(Error::InvalidParameter("bad MFCC frame parameters".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidParameter("sample rate must be > 0".into()));
        }
        Ok(())
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filterbank weights `[filter][bin]` over bins `0..=frame_len/2`.
pub(crate) fn mel_filterbank(cfg: &MfccConfig, sample_rate: f64) -> Vec<Vec<f64>> {
    let nyq = sample_rate / 2.0;
    let top = hz_to_mel(nyq);
    let edges: Vec<f64> = (0..cfg.filters + 2)
        .map(|k| mel_to_hz(top * k as f64 / (cfg.filters + 1) as f64))
        .collect();
    let bins = cfg.frame_len / 2 + 1;
    (0..cfg.filters)
        .map(|j| {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / cfg.frame_len as f64;
                    if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Floor applied to filter energies before the logarithm.
pub(crate) const MEL_ENERGY_FLOOR: f64 = 1e-30;

/// First cepstral coefficient of the Hamming-windowed frame centred at `c`
/// (zero padded at the record edges): orthonormal DCT-II term 0 of the log
/// mel energies.
fn mfcc0(x: &[f64], c: usize, cfg: &MfccConfig, bank: &[Vec<f64>]) -> f64 {
    let n = cfg.frame_len;
    let start = c as isize - (n / 2) as isize;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|k| {
            let idx = start + k as isize;
            let v = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                0.0
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
            Complex::new(v * w, 0.0)
        })
        .collect();
    transform(&mut buf, false);
    let power: Vec<f64> = buf[..n / 2 + 1].iter().map(|z| z.norm_sqr() / n as f64).collect();
    let log_sum: f64 = bank
        .iter()
        .map(|filt| {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            e.max(MEL_ENERGY_FLOOR).ln()
        })
        .sum();
    log_sum / (bank.len() as f64).sqrt()
}

/// Record-wide quantities shared by every per-sample feature evaluation.
pub struct FeatureContext<'a> {
    x: &'a [f64],
    cfg: FeatureConfig,
    y: Vec<f64>,
    is_max: Vec<bool>,
    f1: Vec<f64>,
    abs_total: f64,
    bank: Vec<Vec<f64>>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(x: &'a [f64], cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate(x.len())?;
        let n = x.len();
        let extrema = find_extrema(x);
        let mut y = vec![0.0; n];
        let mut is_max = vec![false; n];
        // walk backwards carrying the next extremum's value
        let mut next = 0.0;
        let mut e = extrema.len();
        for i in (0..n).rev() {
            while e > 0 && extrema[e - 1].index > i {
                e -= 1;
                next = x[extrema[e].index];
            }
            y[i] = next;
        }
        for ex in &extrema {
            if ex.kind == ExtremumKind::Maximum {
                is_max[ex.index] = true;
            }
        }
        let raw: Vec<f64> = (0..n).map(|i| (x[i].abs() - y[i].abs()).abs()).collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let f1 = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; n]
        };
        Ok(Self {
            x,
            cfg: *cfg,
            y,
            is_max,
            f1,
            abs_total: x.iter().map(|v| v.abs()).sum(),
            bank: mel_filterbank(&cfg.mfcc, cfg.sample_rate),
        })
    }

    fn neighbourhood(&self, i: usize) -> Range<usize> {
        let m = self.cfg.half_width;
        i.saturating_sub(m)..(i + m + 1).min(self.x.len())
    }

    /// Features of sample `i` given its precomputed MFCC term.
    fn vector(&self, i: usize, f5: f64) -> FeatureVector {
        let x = self.x;
        let two_m = 2.0 * self.cfg.half_width as f64;
        let nb = self.neighbourhood(i);
        let abs_sum: f64 = x[nb.clone()].iter().map(|v| v.abs()).sum();
        let f1_sum: f64 = self.f1[nb.clone()].iter().sum();
        let nb_max = if self.cfg.f7_absolute {
            x[nb].iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max)
        } else {
            x[nb].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        [
            self.f1[i],
            ratio(x[i].abs() * two_m, abs_sum),
            if self.is_max[i] { 1.0 } else { 0.0 },
            ratio(x[i].abs() * x.len() as f64, self.abs_total),
            f5,
            ratio(x[i], self.y[i].abs()),
            ratio(x[i], nb_max),
            ratio(self.f1[i] * two_m, f1_sum),
        ]
    }

    /// Features for every index in `range`.
    pub fn features(&self, range: Range<usize>) -> Vec<FeatureVector> {
        let stride = self.cfg.mfcc.stride;
        let mut cache: HashMap<usize, f64> = HashMap::new();
        range
            .map(|i| {
                let c = i / stride * stride;
                let f5 = *cache
                    .entry(c)
                    .or_insert_with(|| mfcc0(self.x, c, &self.cfg.mfcc, &self.bank));
                self.vector(i, f5)
            })
            .collect()
    }
}

/// Features for every sample of a (detrended) record.
pub fn compute_features(samples: &[f64], cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    Ok(FeatureContext::new(samples, cfg)?.features(0..samples.len()))
}
