//! Per-command JSON configs. Every file carries `schemaVersion`; unknown
//! keys are rejected. Relative paths resolve against the config's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anagram_core::mask::{ClassKeyPolicy, MaskMode};
use anagram_core::sampler::{CombineMode, NoiseMode, SecondBranch};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Reads a config, checking the schema version before the full parse so a
/// version mismatch is reported as such.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::ConfigFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let fail = |message: String| LabError::ConfigFile {
        path: path.to_path_buf(),
        message,
    };
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    match probe.schema_version {
        None => return Err(fail("missing schemaVersion".into())),
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(fail(format!(
                "unsupported schemaVersion {v}, expected {SCHEMA_VERSION}"
            )))
        }
    }
    serde_json::from_str(&text).map_err(|e| fail(e.to_string()))
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn default_resolution() -> usize {
    64
}

fn default_grid_side() -> usize {
    4
}

fn default_steps() -> usize {
    250
}

fn default_schedule_offset() -> f64 {
    0.008
}

fn default_upsample() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub schema_version: u32,
    pub categories: Vec<String>,
    /// Template PNG per category. When empty, built-in smooth patterns are used.
    #[serde(default)]
    pub templates: BTreeMap<String, PathBuf>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_schedule_offset")]
    pub schedule_offset: f64,
    #[serde(default)]
    pub combine: CombineMode,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub second_branch: SecondBranch,
    #[serde(default = "default_upsample")]
    pub upsample: usize,
    pub pairs: usize,
    pub seed: Option<u64>,
    /// Also build an RSA control set with this many pairs per type.
    #[serde(default)]
    pub control_pairs_per_type: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VerifyConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
}

/// Where a classifier's weights or predictions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum ModelSource {
    /// A patch transformer: model-config JSON plus tensor archive.
    Transformer { config: PathBuf, weights: PathBuf },
    /// A pooled-local classifier: its JSON description plus head archive.
    Pooled { config: PathBuf, weights: PathBuf },
    /// Precomputed logits, one CSV row per image.
    Logits {
        logits: PathBuf,
        #[serde(default, rename = "categoryMap")]
        category_map: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EvalConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
    pub model: ModelSource,
    /// Mask in `mode:radius@blocks` form; `--mask` overrides it.
    #[serde(default)]
    pub mask: Option<String>,
}

fn default_radii() -> Vec<usize> {
    vec![1, 2]
}

fn default_modes() -> Vec<MaskMode> {
    vec![MaskMode::Inside, MaskMode::Outside]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AblateConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
    pub model: ModelSource,
    #[serde(default = "default_radii")]
    pub radii: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<MaskMode>,
    #[serde(default)]
    pub class_key: ClassKeyPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RsaConfig {
    pub schema_version: u32,
    pub control_set: PathBuf,
    pub model: ModelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "camelCase",
    rename_all_fields = "camelCase",
    deny_unknown_fields
)]
pub enum StatsAnalysis {
    /// Williams's test from given correlations.
    Williams {
        r12: f64,
        r13: f64,
        r23: f64,
        n: usize,
    },
    /// Williams's test with correlations computed from CSV columns:
    /// `r12 = r(a, criterion)`, `r13 = r(b, criterion)`, `r23 = r(a, b)`.
    WilliamsCsv {
        csv: PathBuf,
        criterion: String,
        predictor_a: String,
        predictor_b: String,
    },
    Pearson {
        csv: PathBuf,
        x: String,
        y: String,
    },
    ShapeBias {
        shape_correct: u64,
        texture_correct: u64,
        total: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StatsConfig {
    pub schema_version: u32,
    pub analyses: Vec<StatsAnalysis>,
}

fn default_patch_size() -> usize {
    4
}

fn default_train_pairs() -> usize {
    2000
}

fn default_heldout_pairs() -> usize {
    72
}

fn default_epochs() -> usize {
    12
}

fn default_batch() -> usize {
    32
}

fn default_lr() -> f64 {
    0.002
}

fn default_pooled_epochs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainToyConfig {
    pub schema_version: u32,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Training pairs; each contributes both views as examples.
    #[serde(default = "default_train_pairs")]
    pub train_pairs: usize,
    #[serde(default = "default_heldout_pairs")]
    pub heldout_pairs: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_pooled_epochs")]
    pub pooled_epochs: usize,
    pub seed: Option<u64>,
}
