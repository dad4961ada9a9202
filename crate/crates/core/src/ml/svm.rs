//! Linear SVM, primal hinge loss, mini-batch subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_training_data, EpochLog, FeatureVector, Standardizer, TrainConfig, INPUTS};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: [f64; INPUTS],
    pub bias: f64,
    pub standardizer: Standardizer,
}

impl SvmModel {
    pub fn zero(standardizer: Standardizer) -> Self {
        Self {
            weights: [0.0; INPUTS],
            bias: 0.0,
            standardizer,
        }
    }

    fn raw_decision(&self, z: &FeatureVector) -> f64 {
        self.bias + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.raw_decision(&self.standardizer.apply(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

fn sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Regularised mean hinge loss and accuracy over the training set.
fn objective(model: &SvmModel, z: &[FeatureVector], labels: &[u8], lambda: f64) -> (f64, f64) {
    let mut hinge = 0.0;
    let mut correct = 0usize;
    for (x, &y) in z.iter().zip(labels) {
        let f = model.raw_decision(x);
        hinge += (1.0 - sign(y) * f).max(0.0);
        if ((f > 0.0) as u8) == y {
            correct += 1;
        }
    }
    let reg = 0.5 * lambda * model.weights.iter().map(|w| w * w).sum::<f64>();
    (hinge / z.len() as f64 + reg, correct as f64 / z.len() as f64)
}

/// Minimises `lambda/2 |w|^2 + mean(max(0, 1 - y f(x)))` with equal class
/// costs, starting from zero. The step size decays as `1/sqrt(epoch + 1)`.
/// The returned model is the mean iterate over the second half of the
/// epochs; the raw iterate oscillates under heavy class imbalance.
pub fn train_svm(
    features: &[FeatureVector],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(SvmModel, Vec<EpochLog>)> {
    check_training_data(features, labels, cfg)?;
    let standardizer = Standardizer::fit(features);
    let z: Vec<FeatureVector> = features.iter().map(|x| standardizer.apply(x)).collect();
    let mut model = SvmModel::zero(standardizer);
    let mut mean = model.clone();
    let mut averaged = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let lambda = cfg.svm_lambda;
    let average_from = cfg.epochs / 2;

    for epoch in 0..cfg.epochs {
        let eta = cfg.svm_learning_rate / ((epoch + 1) as f64).sqrt();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = [0.0; INPUTS];
            let mut gb = 0.0;
            for &i in batch {
                let y = sign(labels[i]);
                if y * model.raw_decision(&z[i]) < 1.0 {
                    for (g, x) in gw.iter_mut().zip(&z[i]) {
                        *g -= y * x;
                    }
                    gb -= y;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= eta * (lambda * *w + g * inv);
            }
            model.bias -= eta * gb * inv;
            if epoch >= average_from {
                // running mean: m += (w - m) / k
                averaged += 1;
                let k = averaged as f64;
                for (m, w) in mean.weights.iter_mut().zip(&model.weights) {
                    *m += (w - *m) / k;
                }
                mean.bias += (model.bias - mean.bias) / k;
            }
        }
        let current = if averaged > 0 { &mean } else { &model };
        let (loss, acc) = objective(current, &z, labels, lambda);
        log.push(EpochLog {
            epoch: epoch + 1,
            weighted_loss: loss,
            train_accuracy: acc,
        });
    }
    Ok((if averaged > 0 { mean } else { model }, log))
}
