//! Pair and control-set manifests. Image paths are stored relative to the
//! manifest's directory with `/` separators.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anagram_core::patch::{AnagramPair, Permutation};
use anagram_core::rsa::{ControlImage, ControlPair, PairType};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::png::read_png;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    pub image1: String,
    pub image2: String,
    pub label1: String,
    pub label2: String,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub categories: Vec<String>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ControlRecord {
    pub id: String,
    pub pair_type: PairType,
    pub image1: String,
    pub image2: String,
    pub label1: String,
    pub label2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ControlManifest {
    pub categories: Vec<String>,
    pub grid_side: usize,
    pub pairs: Vec<ControlRecord>,
}

/// Reads a JSON document, reporting parse failures as data errors on `path`.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LabError> {
    let bytes = fs::read(path).map_err(LabError::io(path))?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_categories(categories: &[String]) -> Result<(), LabError> {
    let mut seen = HashSet::new();
    if let Some(dup) = categories.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(LabError::Data(format!("duplicate category {dup:?}")));
    }
    if categories.len() < 2 {
        return Err(LabError::Data("a manifest needs at least two categories".into()));
    }
    Ok(())
}

fn check_label(categories: &[String], id: &str, label: &str) -> Result<(), LabError> {
    if categories.iter().any(|c| c == label) {
        Ok(())
    } else {
        Err(LabError::Data(format!(
            "pair {id:?}: label {label:?} is not a manifest category"
        )))
    }
}

fn check_file(base: &Path, id: &str, rel: &str) -> Result<PathBuf, LabError> {
    let path = base.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(LabError::Data(format!("pair {id:?}: missing image {}", path.display())))
    }
}

impl PairManifest {
    /// Checks unique ids, known and distinct labels, valid permutations and,
    /// when `base` is given, that every image exists.
    pub fn validate(&self, base: Option<&Path>) -> Result<(), LabError> {
        check_categories(&self.categories)?;
        let mut ids = HashSet::new();
        for p in &self.pairs {
            if !ids.insert(p.id.as_str()) {
                return Err(LabError::Data(format!("duplicate pair id {:?}", p.id)));
            }
            check_label(&self.categories, &p.id, &p.label1)?;
            check_label(&self.categories, &p.id, &p.label2)?;
            if p.label1 == p.label2 {
                return Err(LabError::Data(format!("pair {:?}: label1 equals label2", p.id)));
            }
            let perm = Permutation::from_map(p.permutation.clone())
                .map_err(|e| LabError::Data(format!("pair {:?}: {e}", p.id)))?;
            perm.grid_side()
                .map_err(|e| LabError::Data(format!("pair {:?}: {e}", p.id)))?;
            if let Some(base) = base {
                check_file(base, &p.id, &p.image1)?;
                check_file(base, &p.id, &p.image2)?;
            }
        }
        Ok(())
    }

    /// Loads and validates a manifest; returns it with its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), LabError> {
        let manifest: Self = read_json(path)?;
        let base = base_dir(path);
        manifest.validate(Some(&base))?;
        Ok((manifest, base))
    }

    /// Reads every pair's images, in manifest order.
    pub fn load_pairs(&self, base: &Path) -> Result<Vec<AnagramPair>, LabError> {
        self.pairs
            .par_iter()
            .map(|p| {
                Ok(AnagramPair {
                    pair_id: p.id.clone(),
                    canvas1: read_png(&base.join(&p.image1))?,
                    canvas2: read_png(&base.join(&p.image2))?,
                    label1: p.label1.clone(),
                    label2: p.label2.clone(),
                    permutation2: Permutation::from_map(p.permutation.clone())?,
                })
            })
            .collect()
    }
}

impl ControlManifest {
    pub fn validate(&self, base: Option<&Path>) -> Result<(), LabError> {
        check_categories(&self.categories)?;
        let mut ids = HashSet::new();
        for p in &self.pairs {
            if !ids.insert(p.id.as_str()) {
                return Err(LabError::Data(format!("duplicate pair id {:?}", p.id)));
            }
            check_label(&self.categories, &p.id, &p.label1)?;
            check_label(&self.categories, &p.id, &p.label2)?;
            let same = p.label1 == p.label2;
            if same != (p.pair_type == PairType::DpSc) {
                return Err(LabError::Data(format!(
                    "pair {:?}: labels contradict type {}",
                    p.id, p.pair_type
                )));
            }
            if let Some(base) = base {
                check_file(base, &p.id, &p.image1)?;
                check_file(base, &p.id, &p.image2)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), LabError> {
        let manifest: Self = read_json(path)?;
        let base = base_dir(path);
        manifest.validate(Some(&base))?;
        Ok((manifest, base))
    }

    /// Reads every pair and checks its part/label contract.
    pub fn load_pairs(&self, base: &Path) -> Result<Vec<ControlPair>, LabError> {
        self.pairs
            .par_iter()
            .map(|p| {
                let pair = ControlPair {
                    pair_id: p.id.clone(),
                    first: ControlImage {
                        canvas: read_png(&base.join(&p.image1))?,
                        label: p.label1.clone(),
                    },
                    second: ControlImage {
                        canvas: read_png(&base.join(&p.image2))?,
                        label: p.label2.clone(),
                    },
                    pair_type: p.pair_type,
                };
                pair.check(self.grid_side)?;
                Ok(pair)
            })
            .collect()
    }
}
