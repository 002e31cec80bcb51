use anagram_core::rsa::{
    assemble_profile, influence_scores, pair_similarities, ControlPair, Embedder, InfluenceScores,
    LayerSimilarityProfile, PairType, TransformerEmbedder,
};
use rayon::prelude::*;
use serde::Serialize;

use super::Context;
use crate::config::{load_config, resolve, RsaConfig};
use crate::error::LabError;
use crate::manifest::ControlManifest;
use crate::models::{load_model, LoadedModel};
use crate::report::{num, opt_num, write_json, Report, Table};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct RsaResult {
    profile: LayerSimilarityProfile,
    influence: Vec<InfluenceScores>,
}

fn profile<E: Embedder + Sync>(embedder: &E, pairs: &[ControlPair]) -> Result<LayerSimilarityProfile, LabError> {
    let sims = pairs
        .par_iter()
        .map(|p| pair_similarities(embedder, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_profile(embedder.layers(), embedder.source(), pairs, &sims))
}

pub fn rsa(ctx: &Context) -> Result<String, LabError> {
    let cfg: RsaConfig = load_config(&ctx.config)?;
    let base = ctx.base();
    let (manifest, dir) = ControlManifest::load(&resolve(&base, &cfg.control_set))?;
    let pairs = manifest.load_pairs(&dir)?;
    let profile = match load_model(&cfg.model, &base)? {
        LoadedModel::Transformer(m) => profile(&TransformerEmbedder::new(&m), &pairs)?,
        LoadedModel::Pooled(p) => profile(&p, &pairs)?,
    };
    let influence = (0..profile.rows.len())
        .map(|i| influence_scores(&profile, i))
        .collect::<Result<Vec<_>, _>>()?;
    let result = RsaResult { profile, influence };

    let out = ctx.out_dir("")?;
    write_json(&out.join("rsa.json"), &Report::new("rsa", None, &cfg, &result))?;
    let mut table = Table::new(["layer", "pairType", "meanCosine", "count"]);
    for row in &result.profile.rows {
        for (i, t) in PairType::ALL.into_iter().enumerate() {
            table.push(vec![
                row.layer.clone(),
                t.to_string(),
                opt_num(row.mean_cosine[i]),
                row.counts[i].to_string(),
            ]);
        }
    }
    table.write(&out.join("rsa_profile.csv"))?;
    let mut table = Table::new([
        "layer",
        "puzzleComponentInfluence",
        "categoryInfluence",
        "categoryInfluenceVsSpDc",
        "categoryInfluenceVsDpDc",
    ]);
    for s in &result.influence {
        table.push(vec![
            s.layer.clone(),
            num(s.puzzle_component_influence),
            num(s.category_influence),
            num(s.category_influence_vs_sp_dc),
            num(s.category_influence_vs_dp_dc),
        ]);
    }
    table.write(&out.join("rsa_influence.csv"))?;
    let last = result.influence.last().expect("an embedder has at least one layer");
    Ok(format!(
        "{} control pairs, {} layers; last layer PCI {} CI {}",
        pairs.len(),
        result.influence.len(),
        last.puzzle_component_influence,
        last.category_influence
    ))
}
