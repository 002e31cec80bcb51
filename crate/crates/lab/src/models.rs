//! Loading and saving classifier weights.

use std::path::Path;

use anagram_core::model::{ModelConfig, NamedTensor, PatchTransformer};
use anagram_core::pooled::{PixelFeatures, PooledLocalClassifier};
use serde::{Deserialize, Serialize};

use crate::archive::{load_archive, save_archive};
use crate::config::{resolve, ModelSource};
use crate::error::LabError;
use crate::manifest::read_json;
use crate::report::write_json;

/// Geometry and categories of a pooled-local classifier on raw pixel patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PooledConfig {
    pub grid_side: usize,
    pub patch_size: usize,
    pub categories: Vec<String>,
}

pub enum LoadedModel {
    Transformer(PatchTransformer),
    Pooled(PooledLocalClassifier<PixelFeatures>),
}

impl LoadedModel {
    pub fn categories(&self) -> &[String] {
        use anagram_core::css::Classifier;
        match self {
            LoadedModel::Transformer(m) => &m.config().categories,
            LoadedModel::Pooled(p) => p.categories(),
        }
    }
}

pub fn load_transformer(config: &Path, weights: &Path) -> Result<PatchTransformer, LabError> {
    let cfg: ModelConfig = read_json(config)?;
    cfg.validate()
        .map_err(|e| LabError::Config(format!("{}: {e}", config.display())))?;
    let tensors = load_archive(weights)?;
    PatchTransformer::from_tensors(cfg, &tensors).map_err(|e| LabError::Data(format!("{}: {e}", weights.display())))
}

pub fn save_transformer(model: &PatchTransformer, config: &Path, weights: &Path) -> Result<(), LabError> {
    write_json(config, model.config())?;
    save_archive(weights, &model.to_tensors())?;
    Ok(())
}

pub fn load_pooled(config: &Path, weights: &Path) -> Result<PooledLocalClassifier<PixelFeatures>, LabError> {
    let cfg: PooledConfig = read_json(config)?;
    let tensors = load_archive(weights)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| LabError::Data(format!("{}: missing tensor {name:?}", weights.display())))
    };
    let widen = |t: &NamedTensor| t.data.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let (w, b) = (widen(find("head.weight")?), widen(find("head.bias")?));
    let extractor = PixelFeatures {
        patch_size: cfg.patch_size,
    };
    PooledLocalClassifier::with_head(extractor, cfg.grid_side, cfg.categories, w, b)
        .map_err(|e| LabError::Data(format!("{}: {e}", weights.display())))
}

pub fn save_pooled(
    model: &PooledLocalClassifier<PixelFeatures>,
    patch_size: usize,
    config: &Path,
    weights: &Path,
) -> Result<(), LabError> {
    use anagram_core::css::Classifier;
    let categories = model.categories().to_vec();
    let (w, b) = model.head();
    let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let tensors = vec![
        NamedTensor {
            name: "head.weight".into(),
            shape: vec![categories.len(), w.len() / categories.len()],
            data: narrow(w),
        },
        NamedTensor {
            name: "head.bias".into(),
            shape: vec![categories.len()],
            data: narrow(b),
        },
    ];
    write_json(
        config,
        &PooledConfig {
            grid_side: model.grid_side(),
            patch_size,
            categories,
        },
    )?;
    save_archive(weights, &tensors)?;
    Ok(())
}

/// Loads a weight-bearing model source; logit dumps are rejected.
pub fn load_model(source: &ModelSource, base: &Path) -> Result<LoadedModel, LabError> {
    match source {
        ModelSource::Transformer { config, weights } => Ok(LoadedModel::Transformer(load_transformer(
            &resolve(base, config),
            &resolve(base, weights),
        )?)),
        ModelSource::Pooled { config, weights } => Ok(LoadedModel::Pooled(load_pooled(
            &resolve(base, config),
            &resolve(base, weights),
        )?)),
        ModelSource::Logits { .. } => Err(LabError::Config(
            "this command needs model weights, not a logit file".into(),
        )),
    }
}

/// Identifier recorded in reports: the weights or logits file name.
pub fn model_id(source: &ModelSource) -> String {
    let path = match source {
        ModelSource::Transformer { weights, .. } | ModelSource::Pooled { weights, .. } => weights,
        ModelSource::Logits { logits, .. } => logits,
    };
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
