//! A classifier that sees only the unordered multiset of per-patch features.
//!
//! Patch features are summed in a canonical order (lexicographic on the
//! bit patterns), so any rearrangement of the patches yields bitwise
//! identical pooled features and therefore identical outputs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::css::{Classifier, CssError};
use crate::image::Image;
use crate::model::ops::{argmax, linear, log_sum_exp, softmax_in_place};
use crate::model::train::{Adam, EpochStats, TrainConfig, TrainLog};
use crate::model::ModelError;
use crate::patch::{decompose, PatchError};
use crate::rng::{child_seed, gaussian, keyed, streams};

/// Maps one patch to a feature vector, independently of every other patch.
pub trait PatchFeatureExtractor {
    fn dim(&self) -> usize;
    fn features(&self, patch: &Image) -> Vec<f64>;
}

/// Raw patch intensities, flattened in HWC order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelFeatures {
    pub patch_size: usize,
}

impl PatchFeatureExtractor for PixelFeatures {
    fn dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    fn features(&self, patch: &Image) -> Vec<f64> {
        patch.data().to_vec()
    }
}

/// Mean of the per-patch features, summed in canonical order.
pub fn pooled_features(
    extractor: &dyn PatchFeatureExtractor,
    canvas: &Image,
    grid_side: usize,
) -> Result<Vec<f64>, PatchError> {
    let patches = decompose(canvas, grid_side)?;
    let mut feats: Vec<Vec<f64>> = patches.patches().iter().map(|p| extractor.features(p)).collect();
    feats.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut sum = vec![0.0; extractor.dim()];
    for f in &feats {
        for (s, v) in sum.iter_mut().zip(f) {
            *s += v;
        }
    }
    let k = feats.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

pub struct PooledLocalClassifier<E> {
    extractor: E,
    grid_side: usize,
    categories: Vec<String>,
    /// `categories × dim`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl<E: PatchFeatureExtractor> PooledLocalClassifier<E> {
    pub fn new(extractor: E, grid_side: usize, categories: Vec<String>, seed: u64) -> Self {
        let (c, d) = (categories.len(), extractor.dim());
        let std = libm::sqrt(1.0 / d as f64);
        let weight = gaussian(seed, streams::MODEL_INIT, c * d)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Self {
            extractor,
            grid_side,
            categories,
            weight,
            bias: vec![0.0; c],
        }
    }

    pub fn with_head(
        extractor: E,
        grid_side: usize,
        categories: Vec<String>,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if weight.len() != categories.len() * extractor.dim() || bias.len() != categories.len() {
            return Err(ModelError::Config(
                "head shape does not match features and categories".into(),
            ));
        }
        Ok(Self {
            extractor,
            grid_side,
            categories,
            weight,
            bias,
        })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn head(&self) -> (&[f64], &[f64]) {
        (&self.weight, &self.bias)
    }

    pub fn features(&self, canvas: &Image) -> Result<Vec<f64>, PatchError> {
        pooled_features(&self.extractor, canvas, self.grid_side)
    }

    fn head_logits(&self, features: &[f64]) -> Vec<f64> {
        linear(
            features,
            1,
            &self.weight,
            &self.bias,
            self.extractor.dim(),
            self.categories.len(),
        )
    }

    pub fn logits(&self, canvas: &Image) -> Result<Vec<f64>, PatchError> {
        Ok(self.head_logits(&self.features(canvas)?))
    }

    /// Softmax regression of the head on pooled features; the extractor is fixed.
    pub fn train_head(&mut self, data: &[(Image, usize)], cfg: &TrainConfig) -> Result<TrainLog, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let n_cat = self.categories.len();
        let mut feats = Vec::with_capacity(data.len());
        for (canvas, label) in data {
            if *label >= n_cat {
                return Err(ModelError::Label {
                    label: *label,
                    categories: n_cat,
                });
            }
            feats.push(self.features(canvas)?);
        }
        let d = self.extractor.dim();
        let mut params: Vec<f64> = self.weight.iter().chain(&self.bias).copied().collect();
        let mut adam = Adam::new(params.len());
        let mut grad = vec![0.0; params.len()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut log = TrainLog::default();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut keyed(child_seed(cfg.seed, epoch as u64), streams::BATCH_ORDER));
            let (mut total, mut correct) = (0.0, 0usize);
            for (step, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                grad.fill(0.0);
                let (w, b) = params.split_at(n_cat * d);
                for &i in batch {
                    let mut p = linear(&feats[i], 1, w, b, d, n_cat);
                    total += log_sum_exp(&p) - p[data[i].1];
                    correct += usize::from(argmax(&p) == data[i].1);
                    softmax_in_place(&mut p);
                    p[data[i].1] -= 1.0;
                    for (c, &g) in p.iter().enumerate() {
                        for (gw, f) in grad[c * d..(c + 1) * d].iter_mut().zip(&feats[i]) {
                            *gw += g * f;
                        }
                        grad[n_cat * d + c] += g;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                adam.update(&mut params, &grad, cfg);
                if params.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::Diverged { epoch, step });
                }
            }
            let stats = EpochStats {
                epoch,
                mean_loss: total / data.len() as f64,
                accuracy: correct as f64 / data.len() as f64,
            };
            let done = cfg.target_accuracy.is_some_and(|a| stats.accuracy >= a);
            log.epochs.push(stats);
            if done {
                break;
            }
        }
        self.bias = params.split_off(n_cat * d);
        self.weight = params;
        Ok(log)
    }
}

impl<E: PatchFeatureExtractor> Classifier for PooledLocalClassifier<E> {
    fn categories(&self) -> &[String] {
        &self.categories
    }

    fn classify(&self, canvas: &Image) -> Result<usize, CssError> {
        let logits = self.logits(canvas)?;
        Ok(argmax(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::css::evaluate;
    use crate::patch::{compose, random_permutation, AnagramPair};
    use crate::rng::gaussian;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn classifier(seed: u64) -> PooledLocalClassifier<PixelFeatures> {
        let cats = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        PooledLocalClassifier::new(PixelFeatures { patch_size: 3 }, 4, cats, seed)
    }

    fn canvas(seed: u64) -> Image {
        let v = gaussian(seed, 1, 12 * 12 * 3)
            .into_iter()
            .map(|x| (0.5 + 0.2 * x).clamp(0.0, 1.0))
            .collect();
        Image::from_vec(12, 12, 3, v).unwrap()
    }

    proptest! {
        #[test]
        fn logits_are_bitwise_permutation_invariant(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let clf = classifier(seed);
            let x = canvas(seed);
            let perm = random_permutation(perm_seed, 16, true).unwrap();
            let y = compose(&decompose(&x, 4).unwrap(), &perm).unwrap();
            let (a, b) = (clf.logits(&x).unwrap(), clf.logits(&y).unwrap());
            prop_assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn css_is_zero_on_distinct_label_pairs() {
        let clf = classifier(4);
        let pairs: Vec<AnagramPair> = (0..20)
            .map(|i| {
                let x = canvas(100 + i);
                let perm = random_permutation(i, 16, true).unwrap();
                AnagramPair {
                    pair_id: alloc::format!("p{i}"),
                    canvas2: compose(&decompose(&x, 4).unwrap(), &perm).unwrap(),
                    canvas1: x,
                    label1: "abc".chars().nth((i % 3) as usize).unwrap().to_string(),
                    label2: "abc".chars().nth(((i + 1) % 3) as usize).unwrap().to_string(),
                    permutation2: perm,
                }
            })
            .collect();
        assert_eq!(evaluate(&clf, &pairs, "pooled", None).unwrap().css, 0.0);
    }

    #[test]
    fn head_learns_mean_intensity() {
        let mut clf = classifier(0);
        let data: Vec<(Image, usize)> = (0..30)
            .map(|i| {
                let label = i % 3;
                (Image::filled(12, 12, 3, 0.2 + 0.3 * label as f64), label)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 30,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        clf.train_head(&data, &cfg).unwrap();
        for (x, y) in &data {
            assert_eq!(clf.classify(x).unwrap(), *y);
        }
    }
}
