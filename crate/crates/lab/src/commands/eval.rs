use std::collections::HashMap;
use std::path::Path;

use anagram_core::css::{
    css, CategoryMap, Classifier, CssError, EvalReport, PairLabels, PairPrediction, TransformerClassifier,
};
use anagram_core::mask::{MaskMode, MaskSpec};
use anagram_core::patch::AnagramPair;
use rayon::prelude::*;

use super::Context;
use crate::config::{load_config, resolve, EvalConfig, ModelSource};
use crate::error::LabError;
use crate::manifest::{read_json, PairManifest};
use crate::models::{load_model, model_id, LoadedModel};
use crate::report::{num, write_json, Report, Table};

fn predict_all<C: Classifier + Sync>(classifier: &C, pairs: &[AnagramPair]) -> Result<Vec<PairPrediction>, CssError> {
    pairs
        .par_iter()
        .map(|p| {
            Ok(PairPrediction {
                view1: classifier.classify(&p.canvas1)?,
                view2: classifier.classify(&p.canvas2)?,
            })
        })
        .collect()
}

/// Reads a logit dump with columns `pairId,view,<scores…>` and returns the
/// category order plus one prediction per manifest pair. Without a category
/// map the score columns are the manifest categories, in manifest order.
pub fn read_logits(
    path: &Path,
    manifest: &PairManifest,
    map: Option<&CategoryMap>,
) -> Result<(Vec<String>, Vec<PairPrediction>), LabError> {
    let identity;
    let map = match map {
        Some(m) => m,
        None => {
            let entries = manifest
                .categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), vec![i]))
                .collect();
            identity = CategoryMap::new(entries, manifest.categories.len())?;
            &identity
        }
    };
    let data_err = |m: String| LabError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if header.get(0) != Some("pairId") || header.get(1) != Some("view") {
        return Err(data_err("header must start with pairId,view".into()));
    }
    let mut rows: HashMap<(String, String), usize> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let scores = record
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| data_err(format!("row {}: {e}", line + 1)))?;
        let mapped = map
            .map_logits(&scores)
            .map_err(|e| data_err(format!("row {}: {e}", line + 1)))?;
        let key = (record[0].to_string(), record[1].to_string());
        if rows.insert(key, mapped.prediction).is_some() {
            return Err(data_err(format!(
                "duplicate row for {} view {}",
                &record[0], &record[1]
            )));
        }
    }
    let mut predictions = Vec::with_capacity(manifest.pairs.len());
    for p in &manifest.pairs {
        let mut take = |view: &str| {
            rows.remove(&(p.id.clone(), view.to_string()))
                .ok_or_else(|| data_err(format!("no logits for pair {:?} view {view}", p.id)))
        };
        predictions.push(PairPrediction {
            view1: take("1")?,
            view2: take("2")?,
        });
    }
    if !rows.is_empty() {
        return Err(LabError::from(CssError::Misaligned {
            pairs: 2 * manifest.pairs.len(),
            predictions: 2 * manifest.pairs.len() + rows.len(),
        }));
    }
    Ok((map.categories(), predictions))
}

pub(super) fn resolve_mask(flag: Option<&MaskSpec>, config: Option<&str>) -> Result<MaskSpec, LabError> {
    match (flag, config) {
        (Some(m), _) => Ok(m.clone()),
        (None, Some(s)) => s.parse().map_err(|e| LabError::Config(format!("{e}"))),
        (None, None) => Ok(MaskSpec::none()),
    }
}

pub(super) fn eval_tables(report: &EvalReport) -> (Table, Table, Table) {
    let mut pairs = Table::new([
        "pairId",
        "label1",
        "label2",
        "prediction1",
        "prediction2",
        "jointCorrect",
    ]);
    for o in &report.outcomes {
        pairs.push(vec![
            o.pair_id.clone(),
            o.label1.clone(),
            o.label2.clone(),
            o.prediction1.clone(),
            o.prediction2.clone(),
            o.joint_correct.to_string(),
        ]);
    }
    let mut summary = Table::new([
        "model",
        "mask",
        "pairs",
        "jointCorrect",
        "css",
        "accuracyView1",
        "accuracyView2",
        "accuracy",
    ]);
    summary.push(vec![
        report.model.clone(),
        report.mask.clone().unwrap_or_default(),
        report.pairs.to_string(),
        report.joint_correct.to_string(),
        num(report.css),
        num(report.accuracy_view1),
        num(report.accuracy_view2),
        num(report.accuracy),
    ]);
    let mut confusion = Table::new(std::iter::once("true".to_string()).chain(report.categories.iter().cloned()));
    for (cat, row) in report.categories.iter().zip(&report.confusion) {
        confusion.push(
            std::iter::once(cat.clone())
                .chain(row.iter().map(u64::to_string))
                .collect(),
        );
    }
    (pairs, summary, confusion)
}

pub fn eval(ctx: &Context) -> Result<String, LabError> {
    let mut cfg: EvalConfig = load_config(&ctx.config)?;
    let base = ctx.base();
    let (manifest, manifest_dir) = PairManifest::load(&resolve(&base, &cfg.manifest))?;
    let mask = resolve_mask(ctx.mask.as_ref(), cfg.mask.as_deref())?;
    let masked = mask.mode != MaskMode::None;
    if ctx.mask.is_some() {
        cfg.mask = Some(mask.to_string());
    }
    let id = model_id(&cfg.model);
    let labels: Vec<PairLabels> = manifest
        .pairs
        .iter()
        .map(|p| PairLabels {
            pair_id: p.id.clone(),
            label1: p.label1.clone(),
            label2: p.label2.clone(),
        })
        .collect();

    let (categories, predictions) = match &cfg.model {
        ModelSource::Logits { logits, category_map } => {
            if masked {
                return Err(LabError::Config(
                    "a mask cannot be applied to precomputed logits".into(),
                ));
            }
            let map: Option<CategoryMap> = category_map
                .as_ref()
                .map(|p| read_json(&resolve(&base, p)))
                .transpose()?;
            read_logits(&resolve(&base, logits), &manifest, map.as_ref())?
        }
        source => {
            let model = load_model(source, &base)?;
            let pairs = manifest.load_pairs(&manifest_dir)?;
            let predictions = match &model {
                LoadedModel::Transformer(m) => predict_all(&TransformerClassifier::new(m, mask.clone()), &pairs)?,
                LoadedModel::Pooled(p) => {
                    if masked {
                        return Err(LabError::Config("masks apply to transformer models only".into()));
                    }
                    predict_all(p, &pairs)?
                }
            };
            (model.categories().to_vec(), predictions)
        }
    };
    let report = css(&categories, &labels, &predictions, &id, masked.then_some(&mask))?;

    let out = ctx.out_dir("")?;
    write_json(&out.join("eval.json"), &Report::new("eval", None, &cfg, &report))?;
    let (pairs, summary, confusion) = eval_tables(&report);
    pairs.write(&out.join("eval.csv"))?;
    summary.write(&out.join("eval_summary.csv"))?;
    confusion.write(&out.join("eval_confusion.csv"))?;
    Ok(format!(
        "{}: css {} ({} of {} pairs joint-correct), accuracy {}",
        report.model, report.css, report.joint_correct, report.pairs, report.accuracy
    ))
}
