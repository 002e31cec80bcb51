//! Per-block radius ablations: how far a masked forward pass moves the final
//! class token, and what it does to the Configural Shape Score.

use alloc::vec::Vec;

use crate::css::{css, CssError, PairLabels, PairPrediction, Preprocess};
use crate::image::Image;
use crate::mask::{ClassKeyPolicy, MaskMode, MaskSpec};
use crate::model::ops::argmax;
use crate::model::PatchTransformer;
use crate::patch::AnagramPair;
use crate::rsa::{cosine, RsaError};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct AblationRecord {
    pub block: usize,
    pub radius: usize,
    pub mode: MaskMode,
    pub mean_cosine: f64,
    pub css: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct AblationReport {
    pub baseline_css: f64,
    pub records: Vec<AblationRecord>,
}

/// Preprocessed views and their unmasked outputs, shared by every sweep cell.
pub struct Baseline {
    inputs: Vec<Image>,
    tokens: Vec<Vec<f64>>,
    labels: Vec<PairLabels>,
    css: f64,
}

impl Baseline {
    pub fn new(model: &PatchTransformer, pairs: &[AnagramPair]) -> Result<Self, RsaError> {
        if pairs.is_empty() {
            return Err(CssError::Empty.into());
        }
        let pre = Preprocess::for_model(model.config());
        let mut inputs = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            inputs.push(pre.apply(&p.canvas1)?);
            inputs.push(pre.apply(&p.canvas2)?);
        }
        let none = MaskSpec::none();
        let mut tokens = Vec::with_capacity(inputs.len());
        let mut predictions = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let trace = model.forward(x, &none)?;
            predictions.push(argmax(&trace.logits));
            tokens.push(trace.final_class_token);
        }
        let labels: Vec<PairLabels> = pairs.iter().map(PairLabels::from).collect();
        let css = score(model, &labels, &predictions)?;
        Ok(Self {
            inputs,
            tokens,
            labels,
            css,
        })
    }

    pub fn css(&self) -> f64 {
        self.css
    }
}

fn score(model: &PatchTransformer, labels: &[PairLabels], predictions: &[usize]) -> Result<f64, CssError> {
    let paired: Vec<PairPrediction> = predictions
        .chunks(2)
        .map(|c| PairPrediction {
            view1: c[0],
            view2: c[1],
        })
        .collect();
    Ok(css(&model.config().categories, labels, &paired, "", None)?.css)
}

/// Every `(block, radius, mode)` cell, block-major, one targeted block each.
pub fn sweep_grid(depth: usize, radii: &[usize], modes: &[MaskMode], class_key: ClassKeyPolicy) -> Vec<MaskSpec> {
    let mut out = Vec::new();
    for block in 0..depth {
        for &radius in radii {
            for &mode in modes {
                out.push(MaskSpec {
                    class_key,
                    ..MaskSpec::at_block(mode, radius, block)
                });
            }
        }
    }
    out
}

/// One sweep cell: masked forward on every view, compared with the baseline.
pub fn ablation_record(
    model: &PatchTransformer,
    baseline: &Baseline,
    spec: &MaskSpec,
) -> Result<AblationRecord, RsaError> {
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(baseline.inputs.len());
    for (x, base) in baseline.inputs.iter().zip(&baseline.tokens) {
        let trace = model.forward(x, spec)?;
        total += cosine(&trace.final_class_token, base)?;
        predictions.push(argmax(&trace.logits));
    }
    let block = spec.target_blocks.iter().next().copied().unwrap_or(0);
    Ok(AblationRecord {
        block,
        radius: spec.radius,
        mode: spec.mode,
        mean_cosine: total / baseline.inputs.len() as f64,
        css: score(model, &baseline.labels, &predictions)?,
    })
}

pub fn ablation_sweep(
    model: &PatchTransformer,
    pairs: &[AnagramPair],
    radii: &[usize],
    modes: &[MaskMode],
    class_key: ClassKeyPolicy,
) -> Result<AblationReport, RsaError> {
    let baseline = Baseline::new(model, pairs)?;
    let records = sweep_grid(model.config().depth, radii, modes, class_key)
        .iter()
        .map(|spec| ablation_record(model, &baseline, spec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationReport {
        baseline_css: baseline.css,
        records,
    })
}
