//! One-hidden-layer sigmoid network trained with class-weighted
//! cross-entropy and Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_training_data, EpochLog, FeatureVector, Standardizer, TrainConfig, INPUTS};
use crate::Result;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub hidden: usize,
    /// `hidden x 8`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
    pub standardizer: Standardizer,
}

struct Pass {
    h: Vec<f64>,
    s: [f64; 2],
}

impl AnnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(hidden: usize, standardizer: Standardizer, rng: &mut ChaCha8Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let w1 = glorot(INPUTS, hidden);
        let w2 = glorot(hidden, 2);
        Self {
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: [0.0; 2],
            standardizer,
        }
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [INPUTS, self.hidden, 2]
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }

    fn pass(&self, z: &FeatureVector) -> Pass {
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * INPUTS..(j + 1) * INPUTS];
                sigmoid(self.b1[j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>())
            })
            .collect();
        let out = |c: usize| {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            sigmoid(self.b2[c] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>())
        };
        let s = [out(0), out(1)];
        Pass { h, s }
    }

    /// Class probabilities: the two sigmoid outputs normalised to sum 1.
    pub fn probabilities(&self, x: &FeatureVector) -> [f64; 2] {
        let s = self.pass(&self.standardizer.apply(x)).s;
        let total = s[0] + s[1];
        [s[0] / total, s[1] / total]
    }

    /// `p1 - p0`; positive means transmission peak.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        let p = self.probabilities(x);
        p[1] - p[0]
    }
}

/// Unweighted cross-entropy `-ln p_y` and its gradient with respect to the
/// two output pre-activations.
fn output_loss(s: [f64; 2], y: usize) -> (f64, [f64; 2]) {
    let total = s[0] + s[1];
    let loss = -(s[y] / total).ln();
    let mut g = [0.0; 2];
    for (c, gc) in g.iter_mut().enumerate() {
        let own = if c == y { 1.0 - s[c] } else { 0.0 };
        *gc = -(own - s[c] * (1.0 - s[c]) / total);
    }
    (loss, g)
}

/// Per-sample cross-entropy scaled by the sample's class weight.
pub fn weighted_loss(model: &AnnModel, x: &FeatureVector, label: u8, cfg: &TrainConfig) -> f64 {
    let s = model.pass(&model.standardizer.apply(x)).s;
    cfg.class_weight(label) * output_loss(s, label as usize).0
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let mut k = 0;
        for block in params.iter_mut() {
            for p in block.iter_mut() {
                let g = grads[k];
                self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
                self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + cfg.epsilon);
                k += 1;
            }
        }
    }
}

fn evaluate(model: &AnnModel, z: &[FeatureVector], labels: &[u8], cfg: &TrainConfig) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in z.iter().zip(labels) {
        let s = model.pass(x).s;
        loss += cfg.class_weight(y) * output_loss(s, y as usize).0;
        if ((s[1] > s[0]) as u8) == y {
            correct += 1;
        }
    }
    (loss / z.len() as f64, correct as f64 / z.len() as f64)
}

/// Mini-batch training; the batch gradient is the mean of class-weighted
/// per-sample gradients. Returns the model and per-epoch full-pass log.
pub fn train_ann(
    features: &[FeatureVector],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(AnnModel, Vec<EpochLog>)> {
    check_training_data(features, labels, cfg)?;
    let standardizer = Standardizer::fit(features);
    let z: Vec<FeatureVector> = features.iter().map(|x| standardizer.apply(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AnnModel::init(cfg.hidden, standardizer, &mut rng);
    let hn = cfg.hidden;
    let n_params = hn * INPUTS + hn + 2 * hn + 2;
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; n_params];
    let mut delta_h = vec![0.0; hn];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (gw1, rest) = grad.split_at_mut(hn * INPUTS);
            let (gb1, rest) = rest.split_at_mut(hn);
            let (gw2, gb2) = rest.split_at_mut(2 * hn);
            for &i in batch {
                let x = &z[i];
                let y = labels[i] as usize;
                let pass = model.pass(x);
                let (_, mut go) = output_loss(pass.s, y);
                let w = cfg.class_weight(labels[i]);
                go.iter_mut().for_each(|g| *g *= w);
                for j in 0..hn {
                    let back = go[0] * model.w2[j] + go[1] * model.w2[hn + j];
                    delta_h[j] = back * pass.h[j] * (1.0 - pass.h[j]);
                }
                for c in 0..2 {
                    gb2[c] += go[c];
                    for j in 0..hn {
                        gw2[c * hn + j] += go[c] * pass.h[j];
                    }
                }
                for j in 0..hn {
                    gb1[j] += delta_h[j];
                    let row = &mut gw1[j * INPUTS..(j + 1) * INPUTS];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += delta_h[j] * xv;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let AnnModel { w1, b1, w2, b2, .. } = &mut model;
            adam.step(
                &mut [w1.as_mut_slice(), b1.as_mut_slice(), w2.as_mut_slice(), &mut b2[..]],
                &grad,
                cfg,
            );
        }
        let (loss, acc) = evaluate(&model, &z, labels, cfg);
        log.push(EpochLog {
            epoch: epoch + 1,
            weighted_loss: loss,
            train_accuracy: acc,
        });
    }
    Ok((model, log))
}
