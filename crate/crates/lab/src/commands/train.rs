use anagram_core::css::{evaluate, EvalReport, TransformerClassifier};
use anagram_core::mask::MaskSpec;
use anagram_core::model::train::{train as fit, Example, TrainConfig, TrainLog};
use anagram_core::model::{ModelConfig, PatchTransformer};
use anagram_core::patch::AnagramPair;
use anagram_core::pooled::{PixelFeatures, PooledLocalClassifier};
use anagram_core::rng::child_seed;
use anagram_core::toy::ArrangementTask;
use serde::Serialize;

use super::Context;
use crate::config::{load_config, TrainToyConfig};
use crate::error::LabError;
use crate::manifest::{PairManifest, PairRecord};
use crate::models::{save_pooled, save_transformer};
use crate::png::write_png;
use crate::report::{num, write_json, Report, Table};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ModelOutcome {
    log: TrainLog,
    heldout: EvalReport,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainResult {
    transformer: ModelOutcome,
    pooled: ModelOutcome,
}

fn write_manifest(ctx: &Context, sub: &str, categories: Vec<String>, pairs: &[AnagramPair]) -> Result<(), LabError> {
    let dir = ctx.out_dir(sub)?;
    let images = ctx.out_dir(&format!("{sub}/pairs"))?;
    let mut records = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b) = (format!("{}_view1.png", p.pair_id), format!("{}_view2.png", p.pair_id));
        write_png(&images.join(&a), &p.canvas1)?;
        write_png(&images.join(&b), &p.canvas2)?;
        records.push(PairRecord {
            id: p.pair_id.clone(),
            image1: format!("pairs/{a}"),
            image2: format!("pairs/{b}"),
            label1: p.label1.clone(),
            label2: p.label2.clone(),
            permutation: p.permutation2.as_slice().to_vec(),
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &PairManifest {
            categories,
            pairs: records,
        },
    )
}

/// Trains a tiny transformer and a pooled-local classifier on the
/// arrangement task and scores both on held-out pairs.
pub fn train(ctx: &Context) -> Result<String, LabError> {
    let cfg: TrainToyConfig = load_config(&ctx.config)?;
    let seed = ctx.seed_or(cfg.seed, "train")?;
    let task = ArrangementTask::new(cfg.grid_side, cfg.patch_size)?;
    let categories = task.categories();
    let train_pairs = task.pairs(child_seed(seed, 0), cfg.train_pairs)?;
    let heldout = task.pairs(child_seed(seed, 1), cfg.heldout_pairs)?;
    let labelled: Vec<(anagram_core::Image, usize)> = train_pairs
        .iter()
        .flat_map(|p| [(&p.canvas1, &p.label1), (&p.canvas2, &p.label2)])
        .map(|(c, l)| (c.clone(), categories.iter().position(|x| x == l).expect("task label")))
        .collect();

    let mut model = PatchTransformer::new_random(
        ModelConfig::tiny(cfg.grid_side, cfg.patch_size, categories.clone()),
        child_seed(seed, 2),
    )?;
    model.init_sincos_positions();
    let examples: Vec<Example> = labelled
        .iter()
        .map(|(c, l)| Example {
            input: model.normalize(c),
            label: *l,
        })
        .collect();
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: child_seed(seed, 3),
        ..TrainConfig::default()
    };
    let t_log = fit(&mut model, &examples, &tcfg)?;
    for e in &t_log.epochs {
        log::info!(
            "transformer epoch {} loss {:.4} accuracy {:.3}",
            e.epoch,
            e.mean_loss,
            e.accuracy
        );
    }
    // score the weights as stored, at 32-bit precision
    let model = PatchTransformer::from_tensors(model.config().clone(), &model.to_tensors())?;
    let t_eval = evaluate(
        &TransformerClassifier::new(&model, MaskSpec::none()),
        &heldout,
        "model.ntar",
        None,
    )?;

    let mut pooled = PooledLocalClassifier::new(
        PixelFeatures {
            patch_size: cfg.patch_size,
        },
        cfg.grid_side,
        categories.clone(),
        child_seed(seed, 4),
    );
    let pcfg = TrainConfig {
        epochs: cfg.pooled_epochs,
        batch_size: 64,
        learning_rate: 0.01,
        seed: child_seed(seed, 5),
        ..TrainConfig::default()
    };
    let p_log = pooled.train_head(&labelled, &pcfg)?;
    let out = ctx.out_dir("")?;
    save_pooled(
        &pooled,
        cfg.patch_size,
        &out.join("pooled.json"),
        &out.join("pooled.ntar"),
    )?;
    let pooled = crate::models::load_pooled(&out.join("pooled.json"), &out.join("pooled.ntar"))?;
    let p_eval = evaluate(&pooled, &heldout, "pooled.ntar", None)?;

    save_transformer(&model, &out.join("model.json"), &out.join("model.ntar"))?;
    write_manifest(ctx, "heldout", categories, &heldout)?;
    let result = TrainResult {
        transformer: ModelOutcome {
            log: t_log,
            heldout: t_eval,
        },
        pooled: ModelOutcome {
            log: p_log,
            heldout: p_eval,
        },
    };
    write_json(
        &out.join("train.json"),
        &Report::new("train", Some(seed), &cfg, &result),
    )?;
    let mut table = Table::new(["model", "epoch", "meanLoss", "accuracy"]);
    for (name, log) in [("transformer", &result.transformer.log), ("pooled", &result.pooled.log)] {
        for e in &log.epochs {
            table.push(vec![
                name.into(),
                e.epoch.to_string(),
                num(e.mean_loss),
                num(e.accuracy),
            ]);
        }
    }
    table.write(&out.join("train.csv"))?;
    Ok(format!(
        "held-out css: transformer {} (accuracy {}), pooled {} (accuracy {})",
        result.transformer.heldout.css,
        result.transformer.heldout.accuracy,
        result.pooled.heldout.css,
        result.pooled.heldout.accuracy
    ))
}
