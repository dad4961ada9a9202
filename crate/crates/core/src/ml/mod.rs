//! Per-sample peak classifiers (ANN, linear SVM) and their use as amplitude
//! extractors.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::extract::gradient::read_packet;
use crate::extract::PacketOutcome;
use crate::extrema::TroughFilter;
use crate::waveform::{AmplitudeReading, GroundTruthLabels, WavePacket};
use crate::{Error, Result};

pub mod ann;
pub mod cv;
pub mod features;
pub mod svm;

pub use ann::{train_ann, AnnModel};
pub use cv::{cross_validate, stratified_folds, FoldResult};
pub use features::{compute_features, FeatureConfig, FeatureContext, FeatureVector, MfccConfig};
pub use svm::{train_svm, SvmModel};

pub const INPUTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Loss weight of class 0 (non-peak samples).
    pub majority_weight: f64,
    /// Loss weight of class 1 (transmission peaks).
    pub minority_weight: f64,
    pub folds: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub svm_lambda: f64,
    pub svm_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 50,
            majority_weight: 0.004,
            minority_weight: 1.0,
            folds: 5,
            validation_fraction: 0.2,
            seed: 7,
            hidden: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            svm_lambda: 1e-5,
            svm_learning_rate: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.majority_weight > 0.0 && self.minority_weight > 0.0) {
            return bad("class weights must be > 0");
        }
        if self.folds < 2 {
            return bad("cross-validation needs at least 2 folds");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return bad("validation fraction must lie in (0, 1]");
        }
        if self.hidden == 0 {
            return bad("hidden layer must have >= 1 unit");
        }
        if !(self.learning_rate > 0.0 && self.svm_learning_rate > 0.0 && self.svm_lambda >= 0.0) {
            return bad("learning rates must be > 0 and lambda >= 0");
        }
        Ok(())
    }

    pub fn class_weight(&self, label: u8) -> f64 {
        if label == 1 {
            self.minority_weight
        } else {
            self.majority_weight
        }
    }
}

pub(crate) fn check_training_data(features: &[FeatureVector], labels: &[u8], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    Ok(())
}

/// Per-feature affine scaling fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; INPUTS],
    pub scale: [f64; INPUTS],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; INPUTS],
            scale: [1.0; INPUTS],
        }
    }

    /// Mean and population std per column; constant columns get scale 1.
    pub fn fit(features: &[FeatureVector]) -> Self {
        if features.is_empty() {
            return Self::identity();
        }
        let n = features.len() as f64;
        let mut mean = [0.0; INPUTS];
        for f in features {
            for k in 0..INPUTS {
                mean[k] += f[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; INPUTS];
        for f in features {
            for k in 0..INPUTS {
                var[k] += (f[k] - mean[k]).powi(2);
            }
        }
        let scale = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.scale[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub weighted_loss: f64,
    pub train_accuracy: f64,
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "epoch,weighted_loss,train_accuracy")?;
        for e in log {
            writeln!(w, "{},{:?},{:?}", e.epoch, e.weighted_loss, e.train_accuracy)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ann(AnnModel),
    Svm(SvmModel),
}

impl Model {
    /// Signed decision score; `> 0` classifies a sample as a peak.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        match self {
            Model::Ann(m) => m.decision(x),
            Model::Svm(m) => m.decision(x),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> u8 {
        (self.decision(x) > 0.0) as u8
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Ann(_) => "ann",
            Model::Svm(_) => "svm",
        }
    }

    /// Versioned key-value text; every real printed with 17 significant
    /// digits so a round trip is exact.
    pub fn to_text(&self) -> String {
        fn row(out: &mut String, key: &str, v: &[f64]) {
            let cells: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{key} {}", cells.join(" "));
        }
        let mut out = String::from("uct-model 1\n");
        let _ = writeln!(out, "kind {}", self.kind());
        let st = match self {
            Model::Ann(m) => &m.standardizer,
            Model::Svm(m) => &m.standardizer,
        };
        match self {
            Model::Ann(m) => {
                let _ = writeln!(out, "layers {} {} 2", INPUTS, m.hidden);
            }
            Model::Svm(_) => {
                let _ = writeln!(out, "layers {INPUTS} 1");
            }
        }
        row(&mut out, "mean", &st.mean);
        row(&mut out, "scale", &st.scale);
        match self {
            Model::Ann(m) => {
                row(&mut out, "w1", &m.w1);
                row(&mut out, "b1", &m.b1);
                row(&mut out, "w2", &m.w2);
                row(&mut out, "b2", &m.b2);
            }
            Model::Svm(m) => {
                row(&mut out, "weights", &m.weights);
                row(&mut out, "bias", &[m.bias]);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Model(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("uct-model 1") {
            return Err(bad("missing 'uct-model 1' header".into()));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            fields.insert(k.to_string(), v.to_string());
        }
        let text_of = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing {k}")));
        let reals = |k: &str| -> Result<Vec<f64>> {
            text_of(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number in {k}"))))
                .collect()
        };
        let fixed = |k: &str| -> Result<[f64; INPUTS]> {
            reals(k)?
                .try_into()
                .map_err(|_| bad(format!("{k} must hold {INPUTS} values")))
        };
        let standardizer = Standardizer {
            mean: fixed("mean")?,
            scale: fixed("scale")?,
        };
        let layers: Vec<usize> = text_of("layers")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad layers".into())))
            .collect::<Result<_>>()?;
        let model = match text_of("kind")?.trim() {
            "ann" => {
                if layers.len() != 3 || layers[0] != INPUTS || layers[2] != 2 || layers[1] == 0 {
                    return Err(bad(format!("unsupported layers {layers:?}")));
                }
                let h = layers[1];
                let (w1, b1, w2, b2) = (reals("w1")?, reals("b1")?, reals("w2")?, reals("b2")?);
                if w1.len() != h * INPUTS || b1.len() != h || w2.len() != 2 * h || b2.len() != 2 {
                    return Err(bad("weight shapes do not chain".into()));
                }
                Model::Ann(AnnModel {
                    hidden: h,
                    w1,
                    b1,
                    w2,
                    b2: [b2[0], b2[1]],
                    standardizer,
                })
            }
            "svm" => {
                let bias = reals("bias")?;
                if bias.len() != 1 {
                    return Err(bad("bias must be one value".into()));
                }
                Model::Svm(SvmModel {
                    weights: fixed("weights")?,
                    bias: bias[0],
                    standardizer,
                })
            }
            other => return Err(bad(format!("unknown model kind {other:?}"))),
        };
        let finite = match &model {
            Model::Ann(m) => m.is_finite(),
            Model::Svm(m) => m.is_finite(),
        };
        if !finite {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Features and per-sample classes of one labelled record.
pub fn labelled_features(
    samples: &[f64],
    labels: &GroundTruthLabels,
    cfg: &FeatureConfig,
) -> Result<(Vec<FeatureVector>, Vec<u8>)> {
    if labels.record_len != samples.len() {
        return Err(Error::Shape(format!(
            "labels cover {} samples, record has {}",
            labels.record_len,
            samples.len()
        )));
    }
    Ok((compute_features(samples, cfg)?, labels.class_sequence()))
}

/// Classifies every packet sample; the positive sample with the highest
/// decision score is the peak. Packets without a positive sample fall back
/// to the highest local maximum and are flagged.
pub fn extract_ml(
    samples: &[f64],
    packets: &[WavePacket],
    model: &Model,
    cfg: &FeatureConfig,
    trough: &TroughFilter,
) -> Result<Vec<(PacketOutcome, bool)>> {
    let ctx = FeatureContext::new(samples, cfg)?;
    Ok(packets
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let feats = ctx.features(p.start..p.end);
            let best = feats
                .iter()
                .enumerate()
                .map(|(j, f)| (p.start + j, model.decision(f)))
                .filter(|(_, d)| *d > 0.0)
                .fold(None::<(usize, f64)>, |best, c| match best {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                });
            match best {
                Some((peak, _)) => {
                    let outcome = trough
                        .forward_trough(samples, p.start..p.end, peak, p.end)
                        .ok_or(Error::NoTrough { packet: k })
                        .and_then(|t| AmplitudeReading::from_samples(samples, peak, t));
                    (outcome, false)
                }
                None => (read_packet(samples, k, p, trough), true),
            }
        })
        .collect())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::extract_gradient;
    use crate::ml::testdata::clusters;

    #[test]
    fn model_text_round_trip_is_exact() {
        let (x, y) = clusters(200, 9);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let ann = Model::Ann(train_ann(&x, &y, &cfg).unwrap().0);
        let svm = Model::Svm(train_svm(&x, &y, &cfg).unwrap().0);
        for m in [ann, svm] {
            let back = Model::from_text(&m.to_text()).unwrap();
            assert_eq!(back, m);
        }
        assert!(Model::from_text("uct-model 2\n").is_err());
    }

    #[test]
    fn degenerate_labels_rejected() {
        let (x, _) = clusters(10, 1);
        let y = vec![0u8; 10];
        assert!(matches!(train_ann(&x, &y, &TrainConfig::default()), Err(Error::DegenerateLabels)));
        assert!(matches!(train_svm(&x, &y, &TrainConfig::default()), Err(Error::DegenerateLabels)));
    }

    fn burst_record() -> (Vec<f64>, Vec<WavePacket>) {
        let mut x = vec![0.0; 3000];
        for b in 0..3 {
            let s = 300 + b * 900;
            for j in 0..333 {
                let t = j as f64;
                let env = 1.0 - (t - 166.0).abs() / 167.0;
                x[s + j] = env * (2.0 * std::f64::consts::PI * (t - 166.0) / 33.3).cos();
            }
        }
        let packets = (0..3)
            .map(|b| WavePacket::new(200 + b * 900, 750 + b * 900).unwrap())
            .collect();
        (x, packets)
    }

    /// Linear model on f4 alone, thresholded between the peak level and the
    /// next lower sample, so exactly `peaks` score positive.
    fn oracle_model(x: &[f64], peaks: &[usize], cfg: &FeatureConfig) -> Model {
        let f = compute_features(x, cfg).unwrap();
        let level = peaks.iter().map(|&p| f[p][3]).fold(f64::INFINITY, f64::min);
        let next = f
            .iter()
            .enumerate()
            .filter(|(i, _)| !peaks.contains(i))
            .map(|(_, v)| v[3])
            .filter(|v| *v < level)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut weights = [0.0; INPUTS];
        weights[3] = 1.0;
        Model::Svm(SvmModel {
            weights,
            bias: -(level + next) / 2.0,
            standardizer: Standardizer::identity(),
        })
    }

    #[test]
    fn exact_peak_model_agrees_with_gradient() {
        let (x, packets) = burst_record();
        let cfg = FeatureConfig::default();
        let trough = TroughFilter::default();
        let grad = extract_gradient(&x, &packets, &trough);
        let peaks: Vec<usize> = grad.iter().map(|r| r.as_ref().unwrap().peak_index).collect();
        let model = oracle_model(&x, &peaks, &cfg);
        let ml = extract_ml(&x, &packets, &model, &cfg, &trough).unwrap();
        for ((o, fallback), g) in ml.iter().zip(&grad) {
            assert!(!fallback);
            assert_eq!(o.as_ref().unwrap(), g.as_ref().unwrap());
        }
    }

    #[test]
    fn all_negative_model_falls_back_everywhere() {
        let (x, packets) = burst_record();
        let model = Model::Svm(SvmModel {
            weights: [0.0; INPUTS],
            bias: -1.0,
            standardizer: Standardizer::identity(),
        });
        let ml = extract_ml(&x, &packets, &model, &FeatureConfig::default(), &TroughFilter::default()).unwrap();
        assert!(ml.iter().all(|(o, fb)| *fb && o.is_ok()));
    }
}
