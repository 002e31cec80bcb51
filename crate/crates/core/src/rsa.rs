//! Layer-wise similarity profiles over the three control-pair types and the
//! puzzle-component and category influence scores derived from them.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use thiserror::Error;

use crate::css::{CssError, Preprocess};
use crate::image::Image;
use crate::mask::MaskSpec;
use crate::model::{ModelError, PatchTransformer};
use crate::patch::{random_permutation, verify_anagram, AnagramPair, PatchError};
use crate::pooled::{PatchFeatureExtractor, PooledLocalClassifier};
use crate::rng::{child_seed, keyed, streams};
use crate::sampler::{sample_anagram, Denoiser, SampleError, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::stats::{pearson, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RsaError {
    #[error("vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("cosine of two zero vectors is undefined")]
    ZeroVectors,
    #[error("no {0} pairs at layer {1:?}")]
    MissingType(PairType, String),
    #[error("layer {0} is not in the profile")]
    UnknownLayer(usize),
    #[error("embedder returned {got} layers, expected {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("control pair {pair_id:?} violates its {pair_type} contract")]
    Contract { pair_id: String, pair_type: PairType },
    #[error("need at least two categories")]
    TooFewCategories,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Css(#[from] CssError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

/// `u·v/(‖u‖‖v‖)`, clamped to `[-1, 1]`; a zero vector against a non-zero
/// one gives 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RsaError> {
    if u.len() != v.len() {
        return Err(RsaError::LengthMismatch(u.len(), v.len()));
    }
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    match (uu == 0.0, vv == 0.0) {
        (true, true) => Err(RsaError::ZeroVectors),
        (true, false) | (false, true) => Ok(0.0),
        _ => Ok((uv / libm::sqrt(uu * vv)).clamp(-1.0, 1.0)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PairType {
    /// Same parts, different category.
    #[cfg_attr(feature = "serde", serde(rename = "SP-DC"))]
    SpDc,
    /// Different parts, different category.
    #[cfg_attr(feature = "serde", serde(rename = "DP-DC"))]
    DpDc,
    /// Different parts, same category.
    #[cfg_attr(feature = "serde", serde(rename = "DP-SC"))]
    DpSc,
}

impl PairType {
    pub const ALL: [PairType; 3] = [PairType::SpDc, PairType::DpDc, PairType::DpSc];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairType::SpDc => "SP-DC",
            PairType::DpDc => "DP-DC",
            PairType::DpSc => "DP-SC",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlImage {
    pub canvas: Image,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub pair_id: String,
    pub first: ControlImage,
    pub second: ControlImage,
    pub pair_type: PairType,
}

impl ControlPair {
    /// Checks the label relation and, through the anagram verifier, whether
    /// the two images share their parts.
    pub fn check(&self, grid_side: usize) -> Result<(), RsaError> {
        let same_label = self.first.label == self.second.label;
        let as_pair = AnagramPair {
            pair_id: self.pair_id.clone(),
            canvas1: self.first.canvas.clone(),
            canvas2: self.second.canvas.clone(),
            label1: self.first.label.clone(),
            label2: self.second.label.clone(),
            permutation2: crate::patch::Permutation::identity(grid_side * grid_side),
        };
        let same_parts = verify_anagram(&as_pair)?.multiset_equal;
        let ok = match self.pair_type {
            PairType::SpDc => same_parts && !same_label,
            PairType::DpDc => !same_parts && !same_label,
            PairType::DpSc => !same_parts && same_label,
        };
        if ok {
            Ok(())
        } else {
            Err(RsaError::Contract {
                pair_id: self.pair_id.clone(),
                pair_type: self.pair_type,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum EmbeddingSource {
    ClassToken,
    PooledFeatures,
    Synthetic,
}

/// Produces one embedding per layer for an image.
pub trait Embedder {
    fn layers(&self) -> Vec<String>;
    fn source(&self) -> EmbeddingSource;
    fn embed(&self, image: &ControlImage) -> Result<Vec<Vec<f64>>, RsaError>;
}

/// Class token after the embedding and after every block.
pub struct TransformerEmbedder<'a> {
    pub model: &'a PatchTransformer,
    pub preprocess: Preprocess,
}

impl<'a> TransformerEmbedder<'a> {
    pub fn new(model: &'a PatchTransformer) -> Self {
        Self {
            model,
            preprocess: Preprocess::for_model(model.config()),
        }
    }
}

impl Embedder for TransformerEmbedder<'_> {
    fn layers(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        names.extend((0..self.model.config().depth).map(|i| alloc::format!("block{i}")));
        names
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::ClassToken
    }

    fn embed(&self, image: &ControlImage) -> Result<Vec<Vec<f64>>, RsaError> {
        let input = self.preprocess.apply(&image.canvas)?;
        Ok(self.model.forward(&input, &MaskSpec::none())?.class_tokens)
    }
}

/// Pooled patch features and the head logits computed from them.
impl<E: PatchFeatureExtractor> Embedder for PooledLocalClassifier<E> {
    fn layers(&self) -> Vec<String> {
        vec!["pooled".to_string(), "logits".to_string()]
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::PooledFeatures
    }

    fn embed(&self, image: &ControlImage) -> Result<Vec<Vec<f64>>, RsaError> {
        let features = self.features(&image.canvas)?;
        let logits = self.logits(&image.canvas)?;
        Ok(vec![features, logits])
    }
}

/// Embeds every image as the unit vector of its category, at every layer,
/// ignoring the pixels.
pub struct CategoryEmbedder {
    pub categories: Vec<String>,
    pub layers: usize,
}

impl Embedder for CategoryEmbedder {
    fn layers(&self) -> Vec<String> {
        (0..self.layers).map(|i| alloc::format!("layer{i}")).collect()
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::Synthetic
    }

    fn embed(&self, image: &ControlImage) -> Result<Vec<Vec<f64>>, RsaError> {
        let k = self
            .categories
            .iter()
            .position(|c| *c == image.label)
            .ok_or_else(|| CssError::UnknownCategory(image.label.clone()))?;
        let mut e = vec![0.0; self.categories.len()];
        e[k] = 1.0;
        Ok(vec![e; self.layers])
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct LayerRow {
    pub layer: String,
    /// Mean cosine per pair type in SP-DC, DP-DC, DP-SC order; `None` when
    /// the set has no pair of that type.
    pub mean_cosine: [Option<f64>; 3],
    pub counts: [usize; 3],
}

impl LayerRow {
    pub fn mean(&self, t: PairType) -> Option<f64> {
        self.mean_cosine[t.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct LayerSimilarityProfile {
    pub source: EmbeddingSource,
    pub rows: Vec<LayerRow>,
}

/// Per-layer cosines of one pair's embeddings.
pub fn pair_similarities(embedder: &dyn Embedder, pair: &ControlPair) -> Result<Vec<f64>, RsaError> {
    let expected = embedder.layers().len();
    let a = embedder.embed(&pair.first)?;
    let b = embedder.embed(&pair.second)?;
    for got in [a.len(), b.len()] {
        if got != expected {
            return Err(RsaError::LayerCount { expected, got });
        }
    }
    a.iter().zip(&b).map(|(u, v)| cosine(u, v)).collect()
}

/// Averages per-pair similarities (as returned by [`pair_similarities`], in
/// the order of `pairs`) into a profile.
pub fn assemble_profile(
    layers: Vec<String>,
    source: EmbeddingSource,
    pairs: &[ControlPair],
    similarities: &[Vec<f64>],
) -> LayerSimilarityProfile {
    let mut sums = vec![[0.0; 3]; layers.len()];
    let mut counts = [0usize; 3];
    for (pair, sims) in pairs.iter().zip(similarities) {
        counts[pair.pair_type.index()] += 1;
        for (s, v) in sums.iter_mut().zip(sims) {
            s[pair.pair_type.index()] += v;
        }
    }
    let rows = layers
        .into_iter()
        .zip(sums)
        .map(|(layer, s)| LayerRow {
            layer,
            mean_cosine: core::array::from_fn(|i| (counts[i] > 0).then(|| s[i] / counts[i] as f64)),
            counts,
        })
        .collect();
    LayerSimilarityProfile { source, rows }
}

pub fn layer_profile(embedder: &dyn Embedder, pairs: &[ControlPair]) -> Result<LayerSimilarityProfile, RsaError> {
    let sims = pairs
        .iter()
        .map(|p| pair_similarities(embedder, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_profile(embedder.layers(), embedder.source(), pairs, &sims))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct InfluenceScores {
    pub layer: String,
    pub puzzle_component_influence: f64,
    pub category_influence: f64,
    /// The two un-pooled baselines of the category influence:
    /// DP-SC − SP-DC and DP-SC − DP-DC.
    pub category_influence_vs_sp_dc: f64,
    pub category_influence_vs_dp_dc: f64,
}

/// `PCI = SP-DC − DP-DC`, `CI = DP-SC − (SP-DC + DP-DC)/2`.
pub fn influence_scores(profile: &LayerSimilarityProfile, layer: usize) -> Result<InfluenceScores, RsaError> {
    let row = profile.rows.get(layer).ok_or(RsaError::UnknownLayer(layer))?;
    let get = |t: PairType| row.mean(t).ok_or_else(|| RsaError::MissingType(t, row.layer.clone()));
    let (sp_dc, dp_dc, dp_sc) = (get(PairType::SpDc)?, get(PairType::DpDc)?, get(PairType::DpSc)?);
    Ok(InfluenceScores {
        layer: row.layer.clone(),
        puzzle_component_influence: sp_dc - dp_dc,
        category_influence: dp_sc - 0.5 * (sp_dc + dp_dc),
        category_influence_vs_sp_dc: dp_sc - sp_dc,
        category_influence_vs_dp_dc: dp_sc - dp_dc,
    })
}

/// Pearson correlation between model CSS values and an influence score.
pub fn correlate_influence_with_css(records: &[(f64, f64)]) -> Result<f64, RsaError> {
    let (css, influence): (Vec<f64>, Vec<f64>) = records.iter().copied().unzip();
    Ok(pearson(&css, &influence)?)
}

/// Builds `per_type` pairs of each type with the sampler. SP-DC pairs are the
/// two views of one anagram; the DP pairs take view 1 of two independent
/// samples. `base` supplies resolution, grid, modes and upsampling.
pub fn build_control_set(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    base: &SamplerConfig,
    categories: &[String],
    per_type: usize,
    seed: u64,
) -> Result<Vec<ControlPair>, RsaError> {
    let n_cat = categories.len();
    if n_cat < 2 {
        return Err(RsaError::TooFewCategories);
    }
    let k = base.grid_side * base.grid_side;
    let sample = |labels: (usize, usize), id: String, s: u64| -> Result<AnagramPair, RsaError> {
        let cfg = SamplerConfig {
            pair_id: id,
            label1: categories[labels.0].clone(),
            label2: categories[labels.1].clone(),
            permutation2: random_permutation(s, k, true)?,
            seed: s,
            ..base.clone()
        };
        Ok(sample_anagram(denoiser, &cfg, schedule)?.pair)
    };
    let view1 = |p: AnagramPair| ControlImage {
        canvas: p.canvas1,
        label: p.label1,
    };
    let mut out = Vec::with_capacity(3 * per_type);
    for (ti, pair_type) in PairType::ALL.into_iter().enumerate() {
        for i in 0..per_type {
            let pair_seed = child_seed(seed, (ti * per_type + i) as u64);
            let mut rng = keyed(pair_seed, streams::TOY_LAYOUT);
            let a = rng.random_range(0..n_cat);
            let b = (a + rng.random_range(1..n_cat)) % n_cat;
            let pair_id = alloc::format!("{pair_type}-{i:03}");
            let pair = match pair_type {
                PairType::SpDc => {
                    let p = sample((a, b), pair_id.clone(), child_seed(pair_seed, 0))?;
                    ControlPair {
                        pair_id,
                        first: ControlImage {
                            canvas: p.canvas1,
                            label: p.label1,
                        },
                        second: ControlImage {
                            canvas: p.canvas2,
                            label: p.label2,
                        },
                        pair_type,
                    }
                }
                PairType::DpDc | PairType::DpSc => {
                    let second = if pair_type == PairType::DpDc { b } else { a };
                    let c1 = (a + rng.random_range(1..n_cat)) % n_cat;
                    let c2 = (second + rng.random_range(1..n_cat)) % n_cat;
                    let p1 = sample((a, c1), alloc::format!("{pair_id}-a"), child_seed(pair_seed, 1))?;
                    let p2 = sample((second, c2), alloc::format!("{pair_id}-b"), child_seed(pair_seed, 2))?;
                    ControlPair {
                        pair_id,
                        first: view1(p1),
                        second: view1(p2),
                        pair_type,
                    }
                }
            };
            pair.check(base.grid_side)?;
            out.push(pair);
        }
    }
    Ok(out)
}
