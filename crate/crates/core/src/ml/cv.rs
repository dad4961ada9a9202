//! Stratified k-fold cross-validation on a seeded validation slice.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_training_data, train_ann, train_svm, FeatureVector, Model, TrainConfig};
use crate::eval::{derive_metrics, ConfusionCounts, MetricRow};
use crate::extract::Method;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricRow,
}

/// Seeded `validation_fraction` slice of each class, dealt round-robin into
/// `folds`. Returns the fold of every selected sample as `(index, fold)`.
pub fn stratified_folds(labels: &[u8], cfg: &TrainConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut positives_per_fold = vec![0usize; cfg.folds];
    for class in [1u8, 0u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64 * cfg.validation_fraction).round() as usize).min(idx.len());
        for (k, &i) in idx[..take].iter().enumerate() {
            let fold = k % cfg.folds;
            if class == 1 {
                positives_per_fold[fold] += 1;
            }
            out.push((i, fold));
        }
    }
    if let Some(fold) = positives_per_fold.iter().position(|&p| p == 0) {
        return Err(Error::Stratification { fold });
    }
    out.sort_unstable();
    Ok(out)
}

/// Trains on all-but-one fold and scores per-sample predictions on the
/// held-out fold.
pub fn cross_validate(
    features: &[FeatureVector],
    labels: &[u8],
    method: Method,
    cfg: &TrainConfig,
) -> Result<Vec<FoldResult>> {
    check_training_data(features, labels, cfg)?;
    if !method.is_learned() {
        return Err(Error::InvalidParameter(format!("{method} is not a trained method")));
    }
    let assignment = stratified_folds(labels, cfg)?;
    (0..cfg.folds)
        .map(|fold| {
            let (mut tx, mut ty) = (Vec::new(), Vec::new());
            for &(i, f) in &assignment {
                if f != fold {
                    tx.push(features[i]);
                    ty.push(labels[i]);
                }
            }
            let model = match method {
                Method::Ann => Model::Ann(train_ann(&tx, &ty, cfg)?.0),
                _ => Model::Svm(train_svm(&tx, &ty, cfg)?.0),
            };
            let mut c = ConfusionCounts::default();
            for &(i, f) in &assignment {
                if f != fold {
                    continue;
                }
                match (model.predict(&features[i]), labels[i]) {
                    (1, 1) => c.tp += 1,
                    (1, _) => c.fp += 1,
                    (_, 1) => c.fn_ += 1,
                    _ => c.tn += 1,
                }
            }
            Ok(FoldResult {
                fold,
                counts: c,
                metrics: derive_metrics(&c),
            })
        })
        .collect()
}
