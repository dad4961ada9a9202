//! Fourier band-pass denoising followed by window optimisation.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::PacketOutcome;
use crate::extrema::{local_maxima, TroughFilter};
use crate::waveform::{AmplitudeReading, WavePacket};
use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place forward (`inverse == false`) or unnormalised inverse transform.
pub(crate) fn transform(buf: &mut [Complex<f64>], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

/// Thresholds are not given numerically anywhere upstream; these defaults
/// are tunable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FftConfig {
    /// Half-width of the pass band as a fraction of the carrier.
    pub band_fraction: f64,
    /// Bins below this multiple of the median magnitude are zeroed.
    pub noise_factor: f64,
    /// Window optimisation never shrinks below this many carrier periods.
    pub min_window_periods: f64,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self {
            band_fraction: 0.4,
            noise_factor: 5.0,
            min_window_periods: 3.0,
        }
    }
}

fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let k = if k <= n / 2 { k } else { n - k };
    k as f64 * sample_rate / n as f64
}

/// Frequency of the strongest non-DC bin.
pub fn dominant_frequency(samples: &[f64], sample_rate: f64) -> f64 {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    transform(&mut buf, false);
    let k = (1..=n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap_or(0);
    bin_frequency(k, n, sample_rate)
}

/// Zeroes every bin below the noise threshold or outside the pass band and
/// transforms back.
pub fn bandpass_denoise(
    samples: &[f64],
    sample_rate: f64,
    signal_frequency: f64,
    config: &FftConfig,
) -> Result<Vec<f64>> {
    if !(signal_frequency > 0.0 && signal_frequency < sample_rate / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "signal frequency {signal_frequency} must lie in (0, fs/2)"
        )));
    }
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    transform(&mut buf, false);

    let mut mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let mid = n / 2;
    let median = *mags.select_nth_unstable_by(mid, f64::total_cmp).1;
    let threshold = config.noise_factor * median;
    let lo = signal_frequency * (1.0 - config.band_fraction);
    let hi = signal_frequency * (1.0 + config.band_fraction);

    let mut kept = 0usize;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = bin_frequency(k, n, sample_rate);
        if f < lo || f > hi || !(c.norm() > threshold) {
            *c = Complex::new(0.0, 0.0);
        } else {
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::AllNoise);
    }
    transform(&mut buf, true);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

fn window_rms(x: &[f64], lo: usize, hi: usize) -> f64 {
    (x[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64).sqrt()
}

/// Greedy halving toward the filtered maximum while the window RMS keeps
/// increasing. Returns the optimised `[lo, hi)`.
pub(crate) fn optimise_window(
    filtered: &[f64],
    packet: &WavePacket,
    min_width: usize,
    packet_index: usize,
) -> Result<(usize, usize)> {
    if packet.len() < 3 {
        return Err(Error::Window {
            packet: packet_index,
        });
    }
    let centre = (packet.start..packet.end)
        .max_by(|&a, &b| filtered[a].total_cmp(&filtered[b]))
        .unwrap();
    let (mut lo, mut hi) = (packet.start, packet.end);
    let mut best = window_rms(filtered, lo, hi);
    loop {
        let width = (hi - lo) / 2;
        if width < min_width.max(3) {
            break;
        }
        let new_lo = centre.saturating_sub(width / 2).max(lo).min(hi - width);
        let new_hi = new_lo + width;
        let r = window_rms(filtered, new_lo, new_hi);
        if r <= best {
            break;
        }
        best = r;
        lo = new_lo;
        hi = new_hi;
    }
    if hi - lo < 3 {
        return Err(Error::Window {
            packet: packet_index,
        });
    }
    Ok((lo, hi))
}

/// Reads the peak and forward trough from the unfiltered samples inside the
/// optimised window of each packet.
pub fn extract_fft(
    samples: &[f64],
    sample_rate: f64,
    signal_frequency: f64,
    packets: &[WavePacket],
    config: &FftConfig,
    trough: &TroughFilter,
) -> Result<Vec<PacketOutcome>> {
    let filtered = bandpass_denoise(samples, sample_rate, signal_frequency, config)?;
    let min_width = (config.min_window_periods * sample_rate / signal_frequency).round() as usize;
    Ok(packets
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (lo, hi) = optimise_window(&filtered, p, min_width, k)?;
            read_in_window(samples, p, lo, hi, k, trough)
        })
        .collect())
}

/// Highest local maximum inside `[lo, hi)`, then the forward trough within
/// the window, extended to the packet end if the window holds none.
pub(crate) fn read_in_window(
    samples: &[f64],
    packet: &WavePacket,
    lo: usize,
    hi: usize,
    packet_index: usize,
    trough: &TroughFilter,
) -> PacketOutcome {
    // extrema are found on the whole packet so window edges do not create
    // artificial maxima
    let seg = &samples[packet.start..packet.end];
    let peak = local_maxima(seg)
        .into_iter()
        .map(|i| i + packet.start)
        .filter(|&i| i >= lo && i < hi)
        .fold(None::<usize>, |best, i| match best {
            Some(b) if samples[b] >= samples[i] => Some(b),
            _ => Some(i),
        })
        .ok_or(Error::NoPeak {
            packet: packet_index,
        })?;
    let range = packet.start..packet.end;
    let trough_index = trough
        .forward_trough(samples, range.clone(), peak, hi)
        .or_else(|| trough.forward_trough(samples, range, peak, packet.end))
        .ok_or(Error::NoTrough {
            packet: packet_index,
        })?;
    AmplitudeReading::from_samples(samples, peak, trough_index)
}
