//! Preprocessing, the 1000-way to category logit mapping and the
//! Configural Shape Score.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::image::Image;
use crate::mask::MaskSpec;
use crate::model::ops::{argmax, softmax_in_place};
use crate::model::{ModelConfig, ModelError, PatchTransformer};
use crate::patch::{AnagramPair, PatchError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CssError {
    #[error("invalid category map: {0}")]
    CategoryMap(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("pair {0:?} has the same label for both views")]
    SameLabels(String),
    #[error("{predictions} predictions for {pairs} pairs")]
    Misaligned { pairs: usize, predictions: usize },
    #[error("prediction {index} is outside the {categories} categories")]
    PredictionRange { index: usize, categories: usize },
    #[error("expected {expected} logits, got {got}")]
    LogitCount { expected: usize, got: usize },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("canvas {height}x{width} is smaller than the {crop}px crop")]
    TooSmall { height: usize, width: usize, crop: usize },
    #[error("preprocessing expects 3 channels, got {0}")]
    Channels(usize),
    #[error("empty manifest")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

/// Source-class index lists per category, held in alphabetical order so that
/// category index and tie-break order agree.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "CategoryMapRepr", into = "CategoryMapRepr")
)]
pub struct CategoryMap {
    entries: Vec<(String, Vec<usize>)>,
    source_classes: usize,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CategoryMapRepr {
    source_classes: usize,
    categories: alloc::collections::BTreeMap<String, Vec<usize>>,
}

#[cfg(feature = "serde")]
impl TryFrom<CategoryMapRepr> for CategoryMap {
    type Error = CssError;

    fn try_from(r: CategoryMapRepr) -> Result<Self, CssError> {
        CategoryMap::new(r.categories.into_iter().collect(), r.source_classes)
    }
}

#[cfg(feature = "serde")]
impl From<CategoryMap> for CategoryMapRepr {
    fn from(m: CategoryMap) -> Self {
        Self {
            source_classes: m.source_classes,
            categories: m.entries.into_iter().collect(),
        }
    }
}

impl CategoryMap {
    pub fn new(mut entries: Vec<(String, Vec<usize>)>, source_classes: usize) -> Result<Self, CssError> {
        if entries.is_empty() {
            return Err(CssError::CategoryMap("no categories".into()));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut seen = vec![false; source_classes];
        for (i, (name, indices)) in entries.iter().enumerate() {
            if i > 0 && entries[i - 1].0 == *name {
                return Err(CssError::CategoryMap(alloc::format!("duplicate category {name:?}")));
            }
            if indices.is_empty() {
                return Err(CssError::CategoryMap(alloc::format!(
                    "category {name:?} has no source classes"
                )));
            }
            for &k in indices {
                if k >= source_classes {
                    return Err(CssError::CategoryMap(alloc::format!(
                        "class {k} of {name:?} is outside [0, {source_classes})"
                    )));
                }
                if core::mem::replace(&mut seen[k], true) {
                    return Err(CssError::CategoryMap(alloc::format!("class {k} is listed twice")));
                }
            }
        }
        Ok(Self {
            entries,
            source_classes,
        })
    }

    /// The nine-category ImageNet mapping used for the object anagram set.
    pub fn imagenet9() -> Self {
        let table: [(&str, &[usize]); 9] = [
            ("bear", &[294, 295, 296, 297]),
            ("bunny", &[330, 331, 332]),
            ("cat", &[281, 282, 283, 284, 285]),
            ("elephant", &[101, 385, 386]),
            ("frog", &[30, 31, 32]),
            ("lizard", &[38, 39, 40, 41, 42, 43, 44, 45, 46, 47, 48]),
            ("tiger", &[286, 287, 288, 289, 290, 291, 292, 293]),
            ("turtle", &[33, 34, 35, 36, 37]),
            ("wolf", &[269, 270, 271, 272, 273, 274, 275]),
        ];
        let entries = table.iter().map(|(n, ix)| (n.to_string(), ix.to_vec())).collect();
        Self::new(entries, 1000).expect("built-in table is valid")
    }

    pub fn categories(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn source_classes(&self) -> usize {
        self.source_classes
    }

    pub fn indices(&self, category: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| n == category)
            .map(|(_, ix)| ix.as_slice())
    }

    /// Per-category max logit, softmax over those scores, and the argmax
    /// (lowest category index on ties).
    pub fn map_logits(&self, logits: &[f64]) -> Result<MappedLogits, CssError> {
        if logits.len() != self.source_classes {
            return Err(CssError::LogitCount {
                expected: self.source_classes,
                got: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CssError::NonFiniteLogits);
        }
        let scores: Vec<f64> = self
            .entries
            .iter()
            .map(|(_, ix)| ix.iter().map(|&k| logits[k]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut probabilities = scores.clone();
        softmax_in_place(&mut probabilities);
        Ok(MappedLogits {
            prediction: argmax(&scores),
            scores,
            probabilities,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedLogits {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub prediction: usize,
}

/// Resize-then-center-crop-then-normalize settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase", deny_unknown_fields)
)]
pub struct Preprocess {
    /// Canvases whose sides differ from this are bilinearly resized to it first.
    pub resize_side: usize,
    pub crop: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Preprocess {
    /// 256px resize, 224px crop.
    pub fn standard(mean: [f64; 3], std: [f64; 3]) -> Self {
        Self {
            resize_side: 256,
            crop: 224,
            mean,
            std,
        }
    }

    /// Resize and crop both at the model resolution, so a canvas of that
    /// size is only normalized.
    pub fn for_model(config: &ModelConfig) -> Self {
        Self {
            resize_side: config.resolution(),
            crop: config.resolution(),
            mean: config.norm_mean,
            std: config.norm_std,
        }
    }

    pub fn apply(&self, canvas: &Image) -> Result<Image, CssError> {
        if canvas.channels() != 3 {
            return Err(CssError::Channels(canvas.channels()));
        }
        let resized;
        let src = if canvas.height() != self.resize_side || canvas.width() != self.resize_side {
            resized = canvas.resize_bilinear(self.resize_side, self.resize_side);
            &resized
        } else {
            canvas
        };
        if src.height() < self.crop || src.width() < self.crop {
            return Err(CssError::TooSmall {
                height: src.height(),
                width: src.width(),
                crop: self.crop,
            });
        }
        let top = (src.height() - self.crop) / 2;
        let left = (src.width() - self.crop) / 2;
        Ok(Image::from_fn(self.crop, self.crop, 3, |y, x, c| {
            (src.get(top + y, left + x, c) - self.mean[c]) / self.std[c]
        }))
    }
}

/// Anything that assigns one category index to a canvas.
pub trait Classifier {
    fn categories(&self) -> &[String];
    fn classify(&self, canvas: &Image) -> Result<usize, CssError>;
}

/// A patch transformer with a fixed mask, fed through [`Preprocess`].
pub struct TransformerClassifier<'a> {
    pub model: &'a PatchTransformer,
    pub preprocess: Preprocess,
    pub mask: MaskSpec,
}

impl<'a> TransformerClassifier<'a> {
    pub fn new(model: &'a PatchTransformer, mask: MaskSpec) -> Self {
        Self {
            model,
            preprocess: Preprocess::for_model(model.config()),
            mask,
        }
    }
}

impl Classifier for TransformerClassifier<'_> {
    fn categories(&self) -> &[String] {
        &self.model.config().categories
    }

    fn classify(&self, canvas: &Image) -> Result<usize, CssError> {
        let input = self.preprocess.apply(canvas)?;
        Ok(argmax(&self.model.forward(&input, &self.mask)?.logits))
    }
}

/// The labels of one manifest record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLabels {
    pub pair_id: String,
    pub label1: String,
    pub label2: String,
}

impl From<&AnagramPair> for PairLabels {
    fn from(p: &AnagramPair) -> Self {
        Self {
            pair_id: p.pair_id.clone(),
            label1: p.label1.clone(),
            label2: p.label2.clone(),
        }
    }
}

/// Predicted category indices for view 1 and view 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairPrediction {
    pub view1: usize,
    pub view2: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct PairOutcome {
    pub pair_id: String,
    pub label1: String,
    pub label2: String,
    pub prediction1: String,
    pub prediction2: String,
    pub joint_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct EvalReport {
    pub model: String,
    pub mask: Option<String>,
    pub categories: Vec<String>,
    pub pairs: usize,
    pub joint_correct: usize,
    pub css: f64,
    pub accuracy_view1: f64,
    pub accuracy_view2: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]` over both views.
    pub confusion: Vec<Vec<u64>>,
    pub outcomes: Vec<PairOutcome>,
}

fn category_index(categories: &[String], label: &str) -> Result<usize, CssError> {
    categories
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| CssError::UnknownCategory(label.to_owned()))
}

/// Scores aligned predictions against the manifest labels.
pub fn css(
    categories: &[String],
    pairs: &[PairLabels],
    predictions: &[PairPrediction],
    model: &str,
    mask: Option<&MaskSpec>,
) -> Result<EvalReport, CssError> {
    if pairs.is_empty() {
        return Err(CssError::Empty);
    }
    if pairs.len() != predictions.len() {
        return Err(CssError::Misaligned {
            pairs: pairs.len(),
            predictions: predictions.len(),
        });
    }
    let n_cat = categories.len();
    let mut confusion = vec![vec![0u64; n_cat]; n_cat];
    let mut outcomes = Vec::with_capacity(pairs.len());
    let (mut joint, mut hit1, mut hit2) = (0usize, 0usize, 0usize);
    for (p, pred) in pairs.iter().zip(predictions) {
        if p.label1 == p.label2 {
            return Err(CssError::SameLabels(p.pair_id.clone()));
        }
        let (y1, y2) = (
            category_index(categories, &p.label1)?,
            category_index(categories, &p.label2)?,
        );
        for index in [pred.view1, pred.view2] {
            if index >= n_cat {
                return Err(CssError::PredictionRange {
                    index,
                    categories: n_cat,
                });
            }
        }
        confusion[y1][pred.view1] += 1;
        confusion[y2][pred.view2] += 1;
        let (c1, c2) = (pred.view1 == y1, pred.view2 == y2);
        hit1 += usize::from(c1);
        hit2 += usize::from(c2);
        joint += usize::from(c1 && c2);
        outcomes.push(PairOutcome {
            pair_id: p.pair_id.clone(),
            label1: p.label1.clone(),
            label2: p.label2.clone(),
            prediction1: categories[pred.view1].clone(),
            prediction2: categories[pred.view2].clone(),
            joint_correct: c1 && c2,
        });
    }
    let n = pairs.len() as f64;
    Ok(EvalReport {
        model: model.to_owned(),
        mask: mask.map(|m| m.to_string()),
        categories: categories.to_vec(),
        pairs: pairs.len(),
        joint_correct: joint,
        css: joint as f64 / n,
        accuracy_view1: hit1 as f64 / n,
        accuracy_view2: hit2 as f64 / n,
        accuracy: (hit1 + hit2) as f64 / (2.0 * n),
        confusion,
        outcomes,
    })
}

/// Classifies both views of every pair and scores the result.
pub fn evaluate(
    classifier: &dyn Classifier,
    pairs: &[AnagramPair],
    model: &str,
    mask: Option<&MaskSpec>,
) -> Result<EvalReport, CssError> {
    let predictions = pairs
        .iter()
        .map(|p| {
            Ok(PairPrediction {
                view1: classifier.classify(&p.canvas1)?,
                view2: classifier.classify(&p.canvas2)?,
            })
        })
        .collect::<Result<Vec<_>, CssError>>()?;
    let labels: Vec<PairLabels> = pairs.iter().map(PairLabels::from).collect();
    css(classifier.categories(), &labels, &predictions, model, mask)
}
