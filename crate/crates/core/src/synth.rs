//! Synthetic parallel-beam scanner producing labelled waveform records.
//!
//! Each ray carries 7–8 tone bursts whose amplitude follows
//! `A = A0 * exp(-L / 2)` for line integral `L`, so the squared amplitude
//! (intensity) decays as `exp(-L)`. Bursts share one sampled template, which
//! makes every clean packet an exact scaled copy of every other.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::extrema::TroughFilter;
use crate::par::Exec;
use crate::tomo::{forward_project, Phantom, Sinogram};
use crate::waveform::{
    write_labels_csv, write_record, Format, GroundTruthLabels, LabeledPeak, RecordId,
    ScanGeometry, WaveformRecord, DEFAULT_RECORD_LEN, DEFAULT_SAMPLE_RATE,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstSpec {
    pub carrier_frequency: f64,
    pub rise_time: f64,
    pub fall_time: f64,
    pub duty_cycle: f64,
    pub cycles: f64,
    /// Burst spacing, s. When absent it is derived as duration / duty cycle.
    pub pulse_repetition_interval: Option<f64>,
}

impl Default for BurstSpec {
    fn default() -> Self {
        Self {
            carrier_frequency: 1.5e6,
            rise_time: 10.4e-9,
            fall_time: 8.4e-9,
            duty_cycle: 0.0432,
            cycles: 10.0,
            pulse_repetition_interval: Some(120e-6),
        }
    }
}

impl BurstSpec {
    pub fn duration(&self) -> f64 {
        self.cycles / self.carrier_frequency
    }

    pub fn repetition_interval(&self) -> f64 {
        self.pulse_repetition_interval
            .unwrap_or(self.duration() / self.duty_cycle)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency < sample_rate / 2.0) {
            return bad(format!(
                "carrier {} Hz must lie below Nyquist {} Hz",
                self.carrier_frequency,
                sample_rate / 2.0
            ));
        }
        if !(self.rise_time > 0.0 && self.fall_time > 0.0) {
            return bad("rise and fall times must be > 0".into());
        }
        if self.rise_time + self.fall_time >= self.duration() {
            return bad("rise + fall must be shorter than the burst".into());
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return bad(format!("duty cycle {} outside (0, 1]", self.duty_cycle));
        }
        if !(self.cycles >= 1.0) {
            return bad("a burst needs at least one cycle".into());
        }
        if self.repetition_interval() < self.duration() {
            return bad("repetition interval shorter than the burst".into());
        }
        Ok(())
    }

    /// Unit-amplitude burst sampled at `sample_rate`.
    ///
    /// The envelope is a trapezoid without flat top: it ramps up over the
    /// fraction `rise / (rise + fall)` of the burst and down over the rest, so
    /// exactly one carrier crest (placed on the apex sample) is highest.
    pub fn template(&self, sample_rate: f64) -> Result<BurstTemplate> {
        self.validate(sample_rate)?;
        let total = self.duration() * sample_rate;
        let up = total * self.rise_time / (self.rise_time + self.fall_time);
        let down = total - up;
        let before = up.ceil() as usize;
        let after = down.ceil() as usize;
        let period = sample_rate / self.carrier_frequency;
        let values: Vec<f64> = (0..before + after + 1)
            .map(|i| {
                let tau = i as f64 - before as f64;
                let env = if tau < 0.0 {
                    (1.0 + tau / up).max(0.0)
                } else {
                    (1.0 - tau / down).max(0.0)
                };
                env * (2.0 * std::f64::consts::PI * tau / period).cos()
            })
            .collect();
        let apex = before;
        let trough = TroughFilter::default()
            .forward_trough(&values, 0..values.len(), apex, values.len())
            .ok_or_else(|| Error::InvalidParameter("burst has no trough after its apex".into()))?;
        Ok(BurstTemplate {
            peak_to_trough: values[apex] - values[trough],
            values,
            apex,
            trough,
            period,
        })
    }

    /// Clean peak-to-trough of an unattenuated packet of amplitude `a0`.
    pub fn reference_peak_to_trough(&self, sample_rate: f64, a0: f64) -> Result<f64> {
        Ok(a0 * self.template(sample_rate)?.peak_to_trough)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstTemplate {
    pub values: Vec<f64>,
    /// Offset of the highest crest.
    pub apex: usize,
    /// Offset of the forward trough of the apex.
    pub trough: usize,
    pub peak_to_trough: f64,
    /// Carrier period in samples.
    pub period: f64,
}

/// Spurious trough/peak pair on the falling edge after the main crest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionSpec {
    pub probability: f64,
    /// Wiggle amplitude as a fraction of the packet peak-to-trough amplitude.
    pub relative_amplitude: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self {
            probability: 0.3,
            relative_amplitude: 0.2,
        }
    }
}

impl DistortionSpec {
    pub fn none() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidParameter("distortion probability outside [0, 1]".into()));
        }
        if !(self.relative_amplitude > 0.0 && self.relative_amplitude < 1.0) {
            return Err(Error::InvalidParameter("distortion amplitude outside (0, 1)".into()));
        }
        Ok(())
    }

    /// Single-cycle Hann-windowed sine, one quarter period wide, centred a
    /// quarter period after the apex (the zero crossing between crest and
    /// trough). It dips first, then rebounds.
    pub fn wiggle(&self, template: &BurstTemplate, amplitude: f64) -> Vec<(usize, f64)> {
        let width = template.period / 4.0;
        let centre = template.apex as f64 + template.period / 4.0;
        let a = self.relative_amplitude * template.peak_to_trough * amplitude;
        let lo = (centre - width / 2.0).ceil() as usize;
        let hi = (centre + width / 2.0).floor() as usize;
        (lo..=hi)
            .filter_map(|i| {
                let tau = i as f64 - centre;
                if tau.abs() >= width / 2.0 {
                    return None;
                }
                let hann = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * tau / width).cos());
                Some((i, a * (2.0 * std::f64::consts::PI * tau / width).sin() * hann))
            })
            .collect()
    }
}

/// Additive Gaussian noise, either absolute or relative to each ray's burst
/// amplitude (`sigma = A * 10^(-snr/20)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseModel {
    Sigma(f64),
    SnrDb(f64),
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Sigma(2e-5)
    }
}

impl NoiseModel {
    pub fn sigma_for(&self, burst_amplitude: f64) -> f64 {
        match *self {
            NoiseModel::Sigma(s) => s,
            NoiseModel::SnrDb(db) => burst_amplitude * 10f64.powf(-db / 20.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub record_len: usize,
    /// Unattenuated burst amplitude A0.
    pub reference_amplitude: f64,
    pub burst: BurstSpec,
    pub noise: NoiseModel,
    pub distortion: DistortionSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            record_len: DEFAULT_RECORD_LEN,
            reference_amplitude: 5e-3,
            burst: BurstSpec::default(),
            noise: NoiseModel::default(),
            distortion: DistortionSpec::default(),
        }
    }
}

impl SynthConfig {
    /// Noise-free, distortion-free variant of `self`.
    pub fn noiseless(&self) -> Self {
        Self {
            noise: NoiseModel::Sigma(0.0),
            distortion: DistortionSpec::none(),
            ..self.clone()
        }
    }

    pub fn reference_peak_to_trough(&self) -> Result<f64> {
        self.burst
            .reference_peak_to_trough(self.sample_rate, self.reference_amplitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub record: WaveformRecord,
    pub labels: GroundTruthLabels,
    pub burst_amplitude: f64,
    pub noise_sigma: f64,
    pub distorted_packets: usize,
}

/// Synthesises one ray's record from its line integral.
pub fn synth_record(
    line_integral: f64,
    geometry: &ScanGeometry,
    config: &SynthConfig,
    id: RecordId,
    seed: u64,
) -> Result<SynthRecord> {
    config.distortion.validate()?;
    let sigma_check = config.noise.sigma_for(1.0);
    if !(sigma_check >= 0.0) {
        return Err(Error::InvalidParameter("noise sigma must be >= 0".into()));
    }
    let template = config.burst.template(config.sample_rate)?;
    let fs = config.sample_rate;
    let n = config.record_len;
    let pri = (config.burst.repetition_interval() * fs).round() as usize;
    let tlen = template.values.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = geometry.packet_count;
    let count = rng.random_range(range.min..=range.max);
    let span = (count - 1) * pri + tlen;
    if span > n {
        return Err(Error::Layout(format!(
            "{count} bursts spaced {pri} samples need {span} samples, record has {n}"
        )));
    }
    let offset = rng.random_range(0..=n - span);

    let amplitude = config.reference_amplitude * (-line_integral / 2.0).exp();
    let mut clean = vec![0.0; n];
    let mut peaks = Vec::with_capacity(count);
    for k in 0..count {
        let start = offset + k * pri;
        for (j, v) in template.values.iter().enumerate() {
            clean[start + j] = amplitude * v;
        }
        let peak = start + template.apex;
        let trough = start + template.trough;
        peaks.push(LabeledPeak {
            peak_index: peak,
            trough_index: trough,
            true_amplitude: clean[peak] - clean[trough],
        });
    }

    let mut samples = clean;
    let mut distorted = 0;
    if config.distortion.probability > 0.0 {
        let wiggle = config.distortion.wiggle(&template, amplitude);
        for k in 0..count {
            if rng.random_bool(config.distortion.probability) {
                distorted += 1;
                let start = offset + k * pri;
                for &(j, v) in &wiggle {
                    samples[start + j] += v;
                }
            }
        }
    }

    let sigma = config.noise.sigma_for(amplitude);
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
        // label the crest as recorded: noise can move the maximum a sample or two
        let h = ((template.period / 8.0).round() as usize).max(1);
        for p in peaks.iter_mut() {
            let apex = p.peak_index;
            let lo = apex.saturating_sub(h);
            let hi = (apex + h).min(p.trough_index - 1);
            p.peak_index = (lo..=hi).fold(apex, |best, i| if samples[i] > samples[best] { i } else { best });
        }
    }

    Ok(SynthRecord {
        record: WaveformRecord::new(samples, fs, id)?,
        labels: GroundTruthLabels {
            peaks,
            record_len: n,
        },
        burst_amplitude: amplitude,
        noise_sigma: sigma,
        distorted_packets: distorted,
    })
}

/// A record holding only Gaussian noise.
pub fn synth_noise_record(config: &SynthConfig, sigma: f64, id: RecordId, seed: u64) -> Result<WaveformRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (0..config.record_len).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; config.record_len]
    };
    WaveformRecord::new(samples, config.sample_rate, id)
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-record seed derived from the master seed and the scan position.
pub fn record_seed(master: u64, id: RecordId) -> u64 {
    mix(mix(mix(master) ^ id.rotation as u64) ^ ((id.translation as u64) << 32))
}

/// Simulates a full scan of a phantom; rays follow [`forward_project`].
#[derive(Debug, Clone)]
pub struct ScanSimulator {
    pub geometry: ScanGeometry,
    pub config: SynthConfig,
    pub line_integrals: Sinogram,
    pub master_seed: u64,
}

impl ScanSimulator {
    pub fn new(phantom: &Phantom, geometry: &ScanGeometry, config: &SynthConfig, master_seed: u64) -> Result<Self> {
        geometry.validate()?;
        config.burst.validate(config.sample_rate)?;
        config.distortion.validate()?;
        Ok(Self {
            geometry: geometry.clone(),
            config: config.clone(),
            line_integrals: forward_project(phantom, geometry),
            master_seed,
        })
    }

    pub fn line_integral(&self, id: RecordId) -> f64 {
        self.line_integrals.value(id.rotation, id.translation)
    }

    pub fn simulate(&self, id: RecordId) -> Result<SynthRecord> {
        synth_record(
            self.line_integral(id),
            &self.geometry,
            &self.config,
            id,
            record_seed(self.master_seed, id),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: RecordId,
    pub file: PathBuf,
    pub seed: u64,
    pub line_integral: f64,
    pub burst_amplitude: f64,
    pub noise_sigma: f64,
    pub packet_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub sample_rate: f64,
    pub record_len: usize,
    pub rotations: usize,
    pub translations: usize,
    pub master_seed: u64,
    pub reference_peak_to_trough: f64,
    pub format: Format,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_TABLE_HEADER: &str =
    "rotation,translation,file,seed,line_integral,burst_amplitude,noise_sigma,packet_count";

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(w, "# uct dataset manifest v1")?;
            writeln!(w, "sample_rate: {:?}", self.sample_rate)?;
            writeln!(w, "record_len: {}", self.record_len)?;
            writeln!(w, "rotations: {}", self.rotations)?;
            writeln!(w, "translations: {}", self.translations)?;
            writeln!(w, "master_seed: {}", self.master_seed)?;
            writeln!(w, "reference_peak_to_trough: {:?}", self.reference_peak_to_trough)?;
            writeln!(
                w,
                "format: {}",
                match self.format {
                    Format::Text => "text",
                    Format::Binary => "binary",
                }
            )?;
            writeln!(w)?;
            writeln!(w, "{MANIFEST_TABLE_HEADER}")?;
            for e in &self.entries {
                writeln!(
                    w,
                    "{},{},{},{},{:?},{:?},{:?},{}",
                    e.id.rotation,
                    e.id.translation,
                    e.file.display(),
                    e.seed,
                    e.line_integral,
                    e.burst_amplitude,
                    e.noise_sigma,
                    e.packet_count
                )?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut kv = std::collections::HashMap::new();
        for (_, line) in lines.by_ref() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.starts_with('#') {
                continue;
            }
            if line.trim().is_empty() {
                break;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("manifest header line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(kv: &std::collections::HashMap<String, String>, k: &str) -> Result<T> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("manifest key {k} missing or invalid")))
        }
        let format = match kv.get("format").map(String::as_str) {
            Some("text") => Format::Text,
            Some("binary") => Format::Binary,
            _ => return Err(Error::Format("manifest format".into())),
        };
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line == MANIFEST_TABLE_HEADER || line.trim().is_empty() {
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
            entries.push(ManifestEntry {
                id: RecordId::new(
                    c[0].parse().map_err(|_| bad("rotation"))?,
                    c[1].parse().map_err(|_| bad("translation"))?,
                ),
                file: PathBuf::from(c[2]),
                seed: c[3].parse().map_err(|_| bad("seed"))?,
                line_integral: c[4].parse().map_err(|_| bad("line_integral"))?,
                burst_amplitude: c[5].parse().map_err(|_| bad("burst_amplitude"))?,
                noise_sigma: c[6].parse().map_err(|_| bad("noise_sigma"))?,
                packet_count: c[7].parse().map_err(|_| bad("packet_count"))?,
            });
        }
        Ok(Self {
            sample_rate: get(&kv, "sample_rate")?,
            record_len: get(&kv, "record_len")?,
            rotations: get(&kv, "rotations")?,
            translations: get(&kv, "translations")?,
            master_seed: get(&kv, "master_seed")?,
            reference_peak_to_trough: get(&kv, "reference_peak_to_trough")?,
            format,
            entries,
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LABELS_FILE: &str = "labels.csv";
pub const RECORDS_DIR: &str = "records";

/// Writes every record, `labels.csv` and `manifest.txt` under `out_dir`.
pub fn synth_dataset(sim: &ScanSimulator, out_dir: &Path, format: Format, exec: Exec) -> Result<Manifest> {
    let records_dir = out_dir.join(RECORDS_DIR);
    fs::create_dir_all(&records_dir).map_err(|e| Error::io(&records_dir, e))?;
    let ids = sim.geometry.record_ids();
    let produced = exec.try_map(ids.len(), |i| -> Result<(ManifestEntry, Vec<LabeledPeak>)> {
        let id = ids[i];
        let out = sim.simulate(id)?;
        let rel = PathBuf::from(RECORDS_DIR).join(format!("{id}.{}", format.extension()));
        write_record(&out.record, &out_dir.join(&rel), format)?;
        Ok((
            ManifestEntry {
                id,
                file: rel,
                seed: record_seed(sim.master_seed, id),
                line_integral: sim.line_integral(id),
                burst_amplitude: out.burst_amplitude,
                noise_sigma: out.noise_sigma,
                packet_count: out.labels.peaks.len(),
            },
            out.labels.peaks,
        ))
    })?;
    write_labels_csv(
        &out_dir.join(LABELS_FILE),
        produced.iter().map(|(e, p)| (e.id, p.as_slice())),
    )?;
    let manifest = Manifest {
        sample_rate: sim.config.sample_rate,
        record_len: sim.config.record_len,
        rotations: sim.geometry.rotations,
        translations: sim.geometry.translations,
        master_seed: sim.master_seed,
        reference_peak_to_trough: sim.config.reference_peak_to_trough()?,
        format,
        entries: produced.into_iter().map(|(e, _)| e).collect(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
