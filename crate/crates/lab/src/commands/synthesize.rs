use std::collections::{BTreeMap, HashSet};

use anagram_core::patch::random_permutation;
use anagram_core::rng::{child_seed, keyed, streams};
use anagram_core::rsa::build_control_set;
use anagram_core::sampler::{sample_anagram, SampleOutcome, SamplerConfig, TemplateDenoiser};
use anagram_core::schedule::cosine_schedule;
use anagram_core::toy::category_templates;
use anagram_core::Image;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::Context;
use crate::config::{load_config, resolve, SynthesizeConfig};
use crate::error::LabError;
use crate::manifest::{ControlManifest, ControlRecord, PairManifest, PairRecord};
use crate::png::{read_png, write_png};
use crate::report::{write_json, Report, Table};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct PairSummary {
    id: String,
    label1: String,
    label2: String,
    multiset_equal: bool,
    histograms_equal: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct SynthesizeResult {
    pairs: Vec<PairSummary>,
    control_pairs: usize,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Provenance {
    tool_version: &'static str,
    schedule: &'static str,
    steps: usize,
    schedule_offset: f64,
    pair_seeds: Vec<u64>,
}

fn check(cfg: &SynthesizeConfig) -> Result<(), LabError> {
    let mut seen = HashSet::new();
    if let Some(dup) = cfg.categories.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(LabError::Config(format!("duplicate category {dup:?}")));
    }
    if cfg.categories.len() < 2 {
        return Err(LabError::Config("at least two categories are required".into()));
    }
    if cfg.pairs == 0 {
        return Err(LabError::Config("pairs must be at least 1".into()));
    }
    if cfg.grid_side < 2 || !cfg.resolution.is_multiple_of(cfg.grid_side) {
        return Err(LabError::Config(format!(
            "resolution {} must be divisible by a grid side of at least 2, got {}",
            cfg.resolution, cfg.grid_side
        )));
    }
    Ok(())
}

fn load_templates(cfg: &SynthesizeConfig, ctx: &Context) -> Result<BTreeMap<String, Image>, LabError> {
    let raw = if cfg.templates.is_empty() {
        category_templates(&cfg.categories, cfg.resolution)
    } else {
        let mut out = BTreeMap::new();
        for cat in &cfg.categories {
            let rel = cfg
                .templates
                .get(cat)
                .ok_or_else(|| LabError::Config(format!("no template for category {cat:?}")))?;
            let path = resolve(&ctx.base(), rel);
            if !path.is_file() {
                return Err(LabError::ConfigFile {
                    path,
                    message: "template file not found".into(),
                });
            }
            let image = read_png(&path)?;
            if image.shape() != (cfg.resolution, cfg.resolution, 3) {
                return Err(LabError::ConfigFile {
                    path,
                    message: format!(
                        "template is {}x{}, expected {}px square",
                        image.height(),
                        image.width(),
                        cfg.resolution
                    ),
                });
            }
            out.insert(cat.clone(), image);
        }
        if let Some(extra) = cfg.templates.keys().find(|k| !cfg.categories.contains(k)) {
            return Err(LabError::Config(format!("template for unknown category {extra:?}")));
        }
        out
    };
    Ok(raw)
}

pub fn synthesize(ctx: &Context) -> Result<String, LabError> {
    let cfg: SynthesizeConfig = load_config(&ctx.config)?;
    check(&cfg)?;
    let seed = ctx.seed_or(cfg.seed, "synthesize")?;
    let denoiser = TemplateDenoiser::from_canvases(load_templates(&cfg, ctx)?)?;
    let schedule = cosine_schedule(cfg.steps, cfg.schedule_offset)?;
    let n_cat = cfg.categories.len();
    let k = cfg.grid_side * cfg.grid_side;
    let base = SamplerConfig {
        pair_id: String::new(),
        resolution: cfg.resolution,
        grid_side: cfg.grid_side,
        label1: String::new(),
        label2: String::new(),
        permutation2: random_permutation(seed, k, true)?,
        combine: cfg.combine,
        noise: cfg.noise,
        second_branch: cfg.second_branch,
        seed,
        upsample: cfg.upsample,
    };

    let pair_seeds: Vec<u64> = (0..cfg.pairs as u64).map(|i| child_seed(seed, i)).collect();
    let outcomes = pair_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &pair_seed)| {
            let mut rng = keyed(pair_seed, streams::TOY_LAYOUT);
            let a = rng.random_range(0..n_cat);
            let b = (a + rng.random_range(1..n_cat)) % n_cat;
            let sc = SamplerConfig {
                pair_id: format!("pair-{i:04}"),
                label1: cfg.categories[a].clone(),
                label2: cfg.categories[b].clone(),
                permutation2: random_permutation(pair_seed, k, true)?,
                seed: pair_seed,
                ..base.clone()
            };
            log::debug!("sampling {}", sc.pair_id);
            Ok(sample_anagram(&denoiser, &sc, &schedule)?)
        })
        .collect::<Result<Vec<SampleOutcome>, LabError>>()?;

    let pairs_dir = ctx.out_dir("pairs")?;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut summaries = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let id = &o.pair.pair_id;
        let names = [
            format!("{id}_view1.png"),
            format!("{id}_view2.png"),
            format!("{id}_canvas.png"),
        ];
        write_png(&pairs_dir.join(&names[0]), &o.pair.canvas1)?;
        write_png(&pairs_dir.join(&names[1]), &o.pair.canvas2)?;
        write_png(&pairs_dir.join(&names[2]), &o.canvas)?;
        records.push(PairRecord {
            id: id.clone(),
            image1: format!("pairs/{}", names[0]),
            image2: format!("pairs/{}", names[1]),
            label1: o.pair.label1.clone(),
            label2: o.pair.label2.clone(),
            permutation: o.pair.permutation2.as_slice().to_vec(),
        });
        summaries.push(PairSummary {
            id: id.clone(),
            label1: o.pair.label1.clone(),
            label2: o.pair.label2.clone(),
            multiset_equal: o.verification.multiset_equal,
            histograms_equal: o.verification.histograms_equal,
        });
    }
    let out = ctx.out_dir("")?;
    write_json(
        &out.join("manifest.json"),
        &PairManifest {
            categories: cfg.categories.clone(),
            pairs: records,
        },
    )?;

    let mut control_pairs = 0;
    if let Some(per_type) = cfg.control_pairs_per_type.filter(|&n| n > 0) {
        let control = build_control_set(
            &denoiser,
            &schedule,
            &base,
            &cfg.categories,
            per_type,
            child_seed(seed, u64::MAX),
        )?;
        let dir = ctx.out_dir("control")?;
        let mut recs = Vec::with_capacity(control.len());
        for p in &control {
            let (a, b) = (format!("{}_a.png", p.pair_id), format!("{}_b.png", p.pair_id));
            write_png(&dir.join(&a), &p.first.canvas)?;
            write_png(&dir.join(&b), &p.second.canvas)?;
            recs.push(ControlRecord {
                id: p.pair_id.clone(),
                pair_type: p.pair_type,
                image1: a,
                image2: b,
                label1: p.first.label.clone(),
                label2: p.second.label.clone(),
            });
        }
        control_pairs = recs.len();
        write_json(
            &dir.join("manifest.json"),
            &ControlManifest {
                categories: cfg.categories.clone(),
                grid_side: cfg.grid_side,
                pairs: recs,
            },
        )?;
    }

    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION"),
        schedule: "cosine",
        steps: cfg.steps,
        schedule_offset: cfg.schedule_offset,
        pair_seeds,
    };
    write_json(
        &out.join("provenance.json"),
        &Report::new("synthesize", Some(seed), &cfg, &provenance),
    )?;
    let result = SynthesizeResult {
        pairs: summaries,
        control_pairs,
    };
    write_json(
        &out.join("synthesize.json"),
        &Report::new("synthesize", Some(seed), &cfg, &result),
    )?;
    let mut table = Table::new(["id", "label1", "label2", "multisetEqual", "histogramsEqual"]);
    for s in &result.pairs {
        table.push(vec![
            s.id.clone(),
            s.label1.clone(),
            s.label2.clone(),
            s.multiset_equal.to_string(),
            s.histograms_equal.to_string(),
        ]);
    }
    table.write(&out.join("synthesize.csv"))?;
    Ok(format!(
        "synthesized {} verified pairs ({} control pairs) into {}",
        result.pairs.len(),
        control_pairs,
        out.display()
    ))
}
