//! Orthonormal DWT (Symlet family) and Shannon-energy packet location.
//!
//! The transform is periodised: each stage zero-pads an odd-length input by
//! one sample and wraps the filter around the end, so stage outputs have
//! length `ceil(n / 2)`, the analysis operator is orthogonal, and the inverse
//! is exact up to rounding.

use serde::{Deserialize, Serialize};

use super::fft::read_in_window;
use super::PacketOutcome;
use crate::extrema::TroughFilter;
use crate::waveform::WavePacket;
use crate::{Error, Result};

/// Symlet-5 decomposition low-pass filter.
const SYM5_DEC_LO: [f64; 10] = [
    0.027333068345077982,
    0.029519490925774643,
    -0.039134249302383094,
    0.1993975339773936,
    0.7234076904024206,
    0.6339789634582119,
    0.01660210576452232,
    -0.17532808990845047,
    -0.021101834024758855,
    0.019538882735286728,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Sym5,
}

impl WaveletFamily {
    pub fn dec_lo(self) -> &'static [f64] {
        match self {
            WaveletFamily::Sym5 => &SYM5_DEC_LO,
        }
    }

    /// Quadrature-mirror high-pass: `hi[j] = (-1)^(j+1) lo[L-1-j]`.
    pub fn dec_hi(self) -> Vec<f64> {
        let lo = self.dec_lo();
        let l = lo.len();
        (0..l)
            .map(|j| if j % 2 == 0 { -lo[l - 1 - j] } else { lo[l - 1 - j] })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub levels: usize,
    pub family: WaveletFamily,
    /// Moving-average length over detail coefficients (odd).
    pub smoothing_window: usize,
    /// Half-width of the read-out window around the energy maximum, in
    /// carrier periods.
    pub window_periods: f64,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            family: WaveletFamily::Sym5,
            smoothing_window: 5,
            window_periods: 5.0,
        }
    }
}

/// Detail coefficients for levels `1..=L` plus the final approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub family: WaveletFamily,
    /// `details[l - 1]` holds level `l`.
    pub details: Vec<Vec<f64>>,
    pub approximation: Vec<f64>,
    /// Input length at each stage (`lengths[0]` is the signal length).
    pub lengths: Vec<usize>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn energy(&self) -> f64 {
        self.details
            .iter()
            .flatten()
            .chain(&self.approximation)
            .map(|c| c * c)
            .sum()
    }
}

fn analysis_step(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() + x.len() % 2;
    let half = n / 2;
    let at = |i: usize| if i < x.len() { x[i] } else { 0.0 };
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = at((2 * k + j) % n);
            sa += l * v;
            sd += h * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64], len: usize) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            x[(2 * k + j) % n] += l * a[k] + h * d[k];
        }
    }
    x.truncate(len);
    x
}

pub fn dwt(x: &[f64], config: &WaveletConfig) -> Result<Pyramid> {
    if config.levels == 0 {
        return Err(Error::InvalidParameter("wavelet levels must be >= 1".into()));
    }
    let needed = 1usize << config.levels;
    if x.len() < needed {
        return Err(Error::TooShort {
            needed,
            actual: x.len(),
        });
    }
    let lo = config.family.dec_lo();
    let hi = config.family.dec_hi();
    let mut details = Vec::with_capacity(config.levels);
    let mut lengths = Vec::with_capacity(config.levels);
    let mut current = x.to_vec();
    for _ in 0..config.levels {
        lengths.push(current.len());
        let (a, d) = analysis_step(&current, lo, &hi);
        details.push(d);
        current = a;
    }
    Ok(Pyramid {
        family: config.family,
        details,
        approximation: current,
        lengths,
    })
}

pub fn idwt(pyramid: &Pyramid) -> Vec<f64> {
    let lo = pyramid.family.dec_lo();
    let hi = pyramid.family.dec_hi();
    let mut current = pyramid.approximation.clone();
    for level in (0..pyramid.levels()).rev() {
        current = synthesis_step(
            &current,
            &pyramid.details[level],
            lo,
            &hi,
            pyramid.lengths[level],
        );
    }
    current
}

/// `-u² ln u²` with `u = c / max|c|`, then a centered moving average whose
/// window is truncated at the edges.
pub fn shannon_energy(coefficients: &[f64], smoothing_window: usize) -> Result<Vec<f64>> {
    if smoothing_window == 0 || smoothing_window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "smoothing window {smoothing_window} must be odd"
        )));
    }
    let peak = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if peak == 0.0 {
        return Ok(vec![0.0; coefficients.len()]);
    }
    let raw: Vec<f64> = coefficients
        .iter()
        .map(|c| {
            let u2 = (c / peak) * (c / peak);
            if u2 == 0.0 {
                0.0
            } else {
                -u2 * u2.ln()
            }
        })
        .collect();
    let half = smoothing_window / 2;
    let n = raw.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + raw[i];
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

/// Detail level whose dyadic band `[fs/2^(L+1), fs/2^L]` holds the carrier.
pub fn select_detail_level(sample_rate: f64, signal_frequency: f64, levels: usize) -> Result<usize> {
    (1..=levels)
        .find(|&l| {
            let hi = sample_rate / (1u64 << l) as f64;
            let lo = hi / 2.0;
            signal_frequency >= lo && signal_frequency <= hi
        })
        .ok_or(Error::Band {
            frequency: signal_frequency,
        })
}

/// Sample index at the centre of support of coefficient `k` at `level`.
pub fn coefficient_time(k: usize, level: usize, filter_len: usize) -> f64 {
    let scale = (1usize << level) as f64;
    scale * k as f64 + (scale - 1.0) * (filter_len as f64 - 1.0) / 2.0
}

pub fn extract_wavelet(
    samples: &[f64],
    sample_rate: f64,
    signal_frequency: f64,
    packets: &[WavePacket],
    config: &WaveletConfig,
    trough: &TroughFilter,
) -> Result<Vec<PacketOutcome>> {
    let level = select_detail_level(sample_rate, signal_frequency, config.levels)?;
    let pyramid = dwt(samples, config)?;
    let coeffs = &pyramid.details[level - 1];
    let energy = shannon_energy(coeffs, config.smoothing_window)?;
    let flen = config.family.dec_lo().len();
    let half = (config.window_periods * sample_rate / signal_frequency).round() as usize;

    Ok(packets
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let best = (0..energy.len())
                .filter(|&c| {
                    let t = coefficient_time(c, level, flen);
                    t >= p.start as f64 && t < p.end as f64
                })
                .max_by(|&a, &b| energy[a].total_cmp(&energy[b]))
                .ok_or(Error::NoPeak { packet: k })?;
            let t = coefficient_time(best, level, flen).round() as usize;
            let lo = t.saturating_sub(half).max(p.start);
            let hi = (t + half + 1).min(p.end);
            if hi <= lo + 2 {
                return Err(Error::Window { packet: k });
            }
            read_in_window(samples, p, lo, hi, k, trough)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sym5_filter_conditions() {
        let lo = WaveletFamily::Sym5.dec_lo();
        let sum: f64 = lo.iter().sum();
        let energy: f64 = lo.iter().map(|c| c * c).sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-10);
        assert!((energy - 1.0).abs() < 1e-10);
        let hi = WaveletFamily::Sym5.dec_hi();
        assert!(hi.iter().sum::<f64>().abs() < 1e-10);
        // even-shift orthogonality of lo with itself
        for shift in [2usize, 4, 6, 8] {
            let dot: f64 = (0..lo.len() - shift).map(|j| lo[j] * lo[j + shift]).sum();
            assert!(dot.abs() < 1e-10, "shift {shift}: {dot}");
        }
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [64usize, 65, 1000, 1023, 5003] {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let p = dwt(&x, &WaveletConfig::default()).unwrap();
            let y = idwt(&p);
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() <= 1e-8 * scale);
            }
            let ex: f64 = x.iter().map(|v| v * v).sum();
            assert!((p.energy() - ex).abs() <= 1e-8 * ex);
        }
    }

    #[test]
    fn coefficient_lengths_follow_ceil_halving() {
        let p = dwt(&vec![1.0; 50_002], &WaveletConfig::default()).unwrap();
        let mut n = 50_002usize;
        for d in &p.details {
            n = n.div_ceil(2);
            assert_eq!(d.len(), n);
        }
        assert_eq!(p.approximation.len(), n);
    }

    #[test]
    fn zero_signal_gives_zero_pyramid() {
        let p = dwt(&[0.0; 256], &WaveletConfig::default()).unwrap();
        assert_eq!(p.energy(), 0.0);
    }

    #[test]
    fn too_short_signal() {
        assert!(matches!(
            dwt(&[1.0; 63], &WaveletConfig::default()),
            Err(Error::TooShort { needed: 64, .. })
        ));
    }

    #[test]
    fn shannon_energy_examples() {
        assert_eq!(shannon_energy(&[0.0; 9], 3).unwrap(), vec![0.0; 9]);
        let e = shannon_energy(&[0.0, 0.0, 2.5, 0.0], 1).unwrap();
        assert_eq!(e, vec![0.0; 4]);
        assert!(shannon_energy(&[1.0], 2).is_err());
    }

    #[test]
    fn shannon_energy_matches_direct_formula_on_ramp() {
        let c: Vec<f64> = (0..40).map(|i| i as f64 * 0.25 - 3.0).collect();
        let w = 5;
        let e = shannon_energy(&c, w).unwrap();
        let m = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..c.len() {
            let (lo, hi) = (i.saturating_sub(2), (i + 3).min(c.len()));
            let mut acc = 0.0;
            for v in &c[lo..hi] {
                let u = v / m;
                if u != 0.0 {
                    acc += -(u * u) * (u * u).ln();
                }
            }
            assert!((e[i] - acc / (hi - lo) as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn level_selection() {
        assert_eq!(select_detail_level(50e6, 1.5e6, 6).unwrap(), 5);
        assert_eq!(select_detail_level(50e6, 2.0e6, 6).unwrap(), 4);
        assert!(matches!(
            select_detail_level(50e6, 0.1e6, 6),
            Err(Error::Band { .. })
        ));
    }
}
