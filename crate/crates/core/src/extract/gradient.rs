//! Gradient (sign-change) peak search, no signal transform involved.

use super::PacketOutcome;
use crate::extrema::{local_maxima, TroughFilter};
use crate::waveform::{AmplitudeReading, WavePacket};
use crate::Error;

/// Per packet: the highest local maximum is the transmission peak and the
/// first prominent local minimum after it is its trough.
pub fn extract_gradient(
    samples: &[f64],
    packets: &[WavePacket],
    trough: &TroughFilter,
) -> Vec<PacketOutcome> {
    packets
        .iter()
        .enumerate()
        .map(|(k, p)| read_packet(samples, k, p, trough))
        .collect()
}

pub(crate) fn read_packet(
    samples: &[f64],
    packet_index: usize,
    packet: &WavePacket,
    trough: &TroughFilter,
) -> PacketOutcome {
    let seg = &samples[packet.start..packet.end];
    let peak = local_maxima(seg)
        .into_iter()
        .fold(None::<usize>, |best, i| match best {
            Some(b) if seg[b] >= seg[i] => Some(b),
            _ => Some(i),
        })
        .ok_or(Error::NoPeak {
            packet: packet_index,
        })?
        + packet.start;
    let trough_index = trough
        .forward_trough(samples, packet.start..packet.end, peak, packet.end)
        .ok_or(Error::NoTrough {
            packet: packet_index,
        })?;
    AmplitudeReading::from_samples(samples, peak, trough_index)
}
