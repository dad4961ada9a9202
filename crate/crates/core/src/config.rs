//! Pipeline configuration: one TOML file, unknown keys rejected, individual
//! keys overridable as `dotted.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extract::{FftConfig, Method, WaveletConfig};
use crate::extrema::TroughFilter;
use crate::ml::{FeatureConfig, TrainConfig};
use crate::preprocess::{SegmentConfig, DEFAULT_GATE_THRESHOLD};
use crate::synth::SynthConfig;
use crate::tomo::Materials;
use crate::waveform::{Format, ScanGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Text,
    Binary,
}

impl From<RecordFormat> for Format {
    fn from(f: RecordFormat) -> Self {
        match f {
            RecordFormat::Text => Format::Text,
            RecordFormat::Binary => Format::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub record_format: RecordFormat,
    pub gate_threshold: f64,
    pub methods: Vec<Method>,
    /// Records drawn for classifier training.
    pub training_records: usize,
    /// Peak matching tolerance, samples.
    pub tolerance: usize,
    pub geometry: ScanGeometry,
    pub phantom: Materials,
    pub synth: SynthConfig,
    pub segment: SegmentConfig,
    pub trough: TroughFilter,
    pub fft: FftConfig,
    pub wavelet: WaveletConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("uct-out"),
            seed: 20_240_601,
            record_format: RecordFormat::Binary,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            methods: Method::ALL.to_vec(),
            training_records: 10,
            tolerance: 3,
            geometry: ScanGeometry::default(),
            phantom: Materials::default(),
            synth: SynthConfig::default(),
            segment: SegmentConfig::default(),
            trough: TroughFilter::default(),
            fft: FftConfig::default(),
            wavelet: WaveletConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.train.validate()?;
        if !(self.gate_threshold > 0.0) {
            return Err(Error::Config("gate_threshold must be > 0".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.training_records == 0 && self.methods.iter().any(|m| m.is_learned()) {
            return Err(Error::Config("learned methods need training_records >= 1".into()));
        }
        self.synth.burst.validate(self.synth.sample_rate)?;
        self.synth.distortion.validate()?;
        Ok(())
    }

    /// Replaces one dotted key. `value` is read as a TOML literal, or as a
    /// bare string when it does not parse as one.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        }
        *slot = match (&*slot, parsed) {
            // integers are accepted where reals are expected
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        *self = Self::from_toml(&text).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::NoiseModel;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_default_file_matches_builtin() {
        let text = include_str!("../../../config/default.toml");
        assert_eq!(PipelineConfig::from_toml(text).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("[geometry]\nrotation = 3").is_err());
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("geometry.nope", "1").is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = PipelineConfig::default();
        cfg.set("geometry.rotations", "8").unwrap();
        cfg.set("gate_threshold", "1").unwrap();
        cfg.set("output_dir", "elsewhere").unwrap();
        cfg.set("methods", "[\"fft\", \"svm\"]").unwrap();
        cfg.set("synth.noise", "{ kind = \"snr_db\", value = 30.0 }").unwrap();
        assert_eq!(cfg.geometry.rotations, 8);
        assert_eq!(cfg.gate_threshold, 1.0);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.methods, vec![Method::Fft, Method::Svm]);
        assert_eq!(cfg.synth.noise, NoiseModel::SnrDb(30.0));
        assert!(cfg.set("geometry.rotations", "0").is_err());
    }
}
