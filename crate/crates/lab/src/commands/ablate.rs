use anagram_core::ablation::{ablation_record, sweep_grid, AblationReport, Baseline};
use rayon::prelude::*;

use super::Context;
use crate::config::{load_config, resolve, AblateConfig};
use crate::error::LabError;
use crate::manifest::PairManifest;
use crate::models::{load_model, LoadedModel};
use crate::report::{num, write_json, Report, Table};

pub fn ablate(ctx: &Context) -> Result<String, LabError> {
    let cfg: AblateConfig = load_config(&ctx.config)?;
    if ctx.mask.is_some() {
        return Err(LabError::Config(
            "ablate sweeps its own masks; --mask does not apply".into(),
        ));
    }
    if cfg.radii.is_empty() || cfg.modes.is_empty() {
        return Err(LabError::Config("radii and modes must be non-empty".into()));
    }
    let base = ctx.base();
    let LoadedModel::Transformer(model) = load_model(&cfg.model, &base)? else {
        return Err(LabError::Config("ablate needs a transformer model".into()));
    };
    let (manifest, dir) = PairManifest::load(&resolve(&base, &cfg.manifest))?;
    let pairs = manifest.load_pairs(&dir)?;
    let baseline = Baseline::new(&model, &pairs)?;
    let specs = sweep_grid(model.config().depth, &cfg.radii, &cfg.modes, cfg.class_key);
    let records = specs
        .par_iter()
        .map(|spec| ablation_record(&model, &baseline, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let report = AblationReport {
        baseline_css: baseline.css(),
        records,
    };

    let out = ctx.out_dir("")?;
    write_json(&out.join("ablate.json"), &Report::new("ablate", None, &cfg, &report))?;
    let mut table = Table::new(["block", "radius", "mode", "meanCosine", "css", "baselineCss"]);
    for r in &report.records {
        table.push(vec![
            r.block.to_string(),
            r.radius.to_string(),
            r.mode.to_string(),
            num(r.mean_cosine),
            num(r.css),
            num(report.baseline_css),
        ]);
    }
    table.write(&out.join("ablate.csv"))?;
    Ok(format!(
        "{} ablation cells over {} pairs, baseline css {}",
        report.records.len(),
        pairs.len(),
        report.baseline_css
    ))
}
