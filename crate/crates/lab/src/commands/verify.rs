use anagram_core::patch::{compose, decompose, verify_anagram};
use rayon::prelude::*;
use serde::Serialize;

use super::Context;
use crate::config::{load_config, resolve, VerifyConfig};
use crate::error::LabError;
use crate::manifest::PairManifest;
use crate::report::{write_json, Report, Table};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct PairCheck {
    id: String,
    multiset_equal: bool,
    histograms_equal: bool,
    /// View 2 is exactly view 1 rearranged by the recorded permutation.
    permutation_consistent: bool,
}

impl PairCheck {
    fn passed(&self) -> bool {
        self.multiset_equal && self.histograms_equal && self.permutation_consistent
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyResult {
    passed: usize,
    failed: Vec<String>,
    pairs: Vec<PairCheck>,
}

pub fn verify(ctx: &Context) -> Result<String, LabError> {
    let cfg: VerifyConfig = load_config(&ctx.config)?;
    let (manifest, base) = PairManifest::load(&resolve(&ctx.base(), &cfg.manifest))?;
    let pairs = manifest.load_pairs(&base)?;
    let checks = pairs
        .par_iter()
        .map(|p| {
            let v = verify_anagram(p)?;
            let g = p.permutation2.grid_side()?;
            let rearranged = compose(&decompose(&p.canvas1, g)?, &p.permutation2)?;
            Ok(PairCheck {
                id: p.pair_id.clone(),
                multiset_equal: v.multiset_equal,
                histograms_equal: v.histograms_equal,
                permutation_consistent: rearranged == p.canvas2,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.id.clone()).collect();
    let result = VerifyResult {
        passed: checks.len() - failed.len(),
        failed,
        pairs: checks,
    };
    let out = ctx.out_dir("")?;
    write_json(&out.join("verify.json"), &Report::new("verify", None, &cfg, &result))?;
    let mut table = Table::new(["id", "multisetEqual", "histogramsEqual", "permutationConsistent"]);
    for c in &result.pairs {
        table.push(vec![
            c.id.clone(),
            c.multiset_equal.to_string(),
            c.histograms_equal.to_string(),
            c.permutation_consistent.to_string(),
        ]);
    }
    table.write(&out.join("verify.csv"))?;
    if !result.failed.is_empty() {
        return Err(LabError::Data(format!(
            "{} of {} pairs failed verification: {}",
            result.failed.len(),
            result.pairs.len(),
            result.failed.join(", ")
        )));
    }
    Ok(format!("all {} pairs verified", result.passed))
}
