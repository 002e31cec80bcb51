//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use anagram_core::ablation::{ablation_record, Baseline};
use anagram_core::css::{css, evaluate, CategoryMap, PairLabels, PairPrediction, TransformerClassifier};
use anagram_core::mask::{manhattan_mask, ClassKeyPolicy, MaskMode, MaskSpec};
use anagram_core::model::train::{train as fit, Example, TrainConfig};
use anagram_core::model::{ModelConfig, PatchTransformer};
use anagram_core::patch::{compose, decompose, random_permutation, verify_anagram, AnagramPair};
use anagram_core::pooled::{PixelFeatures, PooledLocalClassifier};
use anagram_core::rng::{child_seed, keyed};
use anagram_core::rsa::{build_control_set, influence_scores, layer_profile, CategoryEmbedder, PairType};
use anagram_core::sampler::{
    decode_latent, mean_mode_fixed_point, reverse_diffusion, sample_anagram, CombineMode, NoiseMode, SamplerConfig,
    SecondBranch, TemplateDenoiser,
};
use anagram_core::schedule::cosine_schedule;
use anagram_core::stats::{corrected_shape_bias, williams_test, BiasCounts, DependentCorrelations};
use anagram_core::toy::{category_templates, ArrangementTask};
use anagram_core::Image;
use anagram_lab::png::{read_png, write_png};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("runtime {:.1} s exceeds {limit_s} s", elapsed.as_secs_f64())
    })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn imagenet9() -> Vec<String> {
    CategoryMap::imagenet9().categories()
}

fn base_sampler(resolution: usize, grid_side: usize) -> SamplerConfig {
    SamplerConfig {
        pair_id: String::new(),
        resolution,
        grid_side,
        label1: String::new(),
        label2: String::new(),
        permutation2: random_permutation(1, grid_side * grid_side, true).expect("grid has at least two cells"),
        combine: CombineMode::Mean,
        noise: NoiseMode::Stochastic,
        second_branch: SecondBranch::OwnLabel,
        seed: 0,
        upsample: 1,
    }
}

fn distinct_labels(seed: u64, n: usize) -> (usize, usize) {
    let mut rng = keyed(seed, 7);
    let a = rng.random_range(0..n);
    (a, (a + rng.random_range(1..n)) % n)
}

fn chance_level() -> Outcome {
    let start = Instant::now();
    let categories = imagenet9();
    let n = 100_000;
    let mut rng = keyed(11, 0);
    let mut labels = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let a = rng.random_range(0..9);
        let b = (a + rng.random_range(1..9)) % 9;
        labels.push(PairLabels {
            pair_id: i.to_string(),
            label1: categories[a].clone(),
            label2: categories[b].clone(),
        });
        predictions.push(PairPrediction {
            view1: rng.random_range(0..9),
            view2: rng.random_range(0..9),
        });
    }
    let score = css(&categories, &labels, &predictions, "uniform", None)
        .map_err(err)?
        .css;
    let elapsed = start.elapsed();
    ensure((score - 1.0 / 81.0).abs() <= 0.002, || {
        format!("css {score:.5} outside 0.01235 ± 0.002")
    })?;
    within(elapsed, 10.0)?;
    Ok(format!("css {score:.5}, {:.2} s", elapsed.as_secs_f64()))
}

/// Also returns the synthesized pairs for the pooled-classifier criterion.
fn anagram_invariance() -> (Outcome, Vec<AnagramPair>) {
    let mut pairs = Vec::new();
    let outcome = (|| {
        let start = Instant::now();
        let categories = imagenet9();
        let denoiser = TemplateDenoiser::from_canvases(category_templates(&categories, 64)).map_err(err)?;
        let schedule = cosine_schedule(250, 0.008).map_err(err)?;
        let dir = tempfile::tempdir().map_err(err)?;
        for i in 0..50u64 {
            let seed = child_seed(2024, i);
            let (a, b) = distinct_labels(seed, categories.len());
            let cfg = SamplerConfig {
                pair_id: format!("pair-{i:02}"),
                label1: categories[a].clone(),
                label2: categories[b].clone(),
                permutation2: random_permutation(seed, 16, true).map_err(err)?,
                seed,
                ..base_sampler(64, 4)
            };
            let pair = sample_anagram(&denoiser, &cfg, &schedule).map_err(err)?.pair;
            // the check has to survive an 8-bit PNG round trip as well
            let (p1, p2) = (
                dir.path().join(format!("{i}_1.png")),
                dir.path().join(format!("{i}_2.png")),
            );
            write_png(&p1, &pair.canvas1).map_err(err)?;
            write_png(&p2, &pair.canvas2).map_err(err)?;
            let reread = AnagramPair {
                canvas1: read_png(&p1).map_err(err)?,
                canvas2: read_png(&p2).map_err(err)?,
                ..pair.clone()
            };
            for (what, p) in [("sampled", &pair), ("reread", &reread)] {
                let v = verify_anagram(p).map_err(err)?;
                ensure(v.multiset_equal && v.histograms_equal, || {
                    format!("{} ({what}) failed verification: {v}", p.pair_id)
                })?;
            }
            pairs.push(pair);
        }
        let elapsed = start.elapsed();
        within(elapsed, 300.0)?;
        Ok(format!("50/50 pairs verified, {:.1} s", elapsed.as_secs_f64()))
    })();
    (outcome, pairs)
}

fn random_canvas_pairs(
    grid_side: usize,
    patch: usize,
    count: usize,
    categories: &[String],
    seed: u64,
) -> Vec<AnagramPair> {
    let res = grid_side * patch;
    (0..count as u64)
        .map(|i| {
            let s = child_seed(seed, i);
            let mut rng = keyed(s, 3);
            let data = (0..res * res * 3).map(|_| rng.random::<f64>()).collect();
            let canvas1 = Image::from_vec(res, res, 3, data).expect("shape matches data");
            let perm = random_permutation(s, grid_side * grid_side, true).expect("grid has at least two cells");
            let canvas2 = compose(&decompose(&canvas1, grid_side).expect("divisible"), &perm).expect("sizes match");
            let (a, b) = distinct_labels(s, categories.len());
            AnagramPair {
                pair_id: format!("random-{i}"),
                canvas1,
                canvas2,
                label1: categories[a].clone(),
                label2: categories[b].clone(),
                permutation2: perm,
            }
        })
        .collect()
}

fn pooled_impossibility(synthesized: &[AnagramPair]) -> Outcome {
    let nine = imagenet9();
    let toy = ArrangementTask::new(4, 4).map_err(err)?;
    let toy_pairs = toy.pairs(5, 200).map_err(err)?;
    // (name, pairs, grid side, patch size, categories)
    type Manifest = (&'static str, Vec<AnagramPair>, usize, usize, Vec<String>);
    let manifests: Vec<Manifest> = vec![
        ("synthesized", synthesized.to_vec(), 4, 16, nine.clone()),
        ("toy", toy_pairs, 4, 4, toy.categories()),
        ("random-16x16", random_canvas_pairs(16, 2, 100, &nine, 9), 16, 2, nine),
    ];
    ensure(!manifests[0].1.is_empty(), || "no synthesized pairs to score".into())?;
    let mut checked = 0;
    for (name, pairs, grid, patch, categories) in &manifests {
        for seed in 0..5 {
            let clf = PooledLocalClassifier::new(PixelFeatures { patch_size: *patch }, *grid, categories.clone(), seed);
            for p in pairs {
                let (l1, l2) = (
                    clf.logits(&p.canvas1).map_err(err)?,
                    clf.logits(&p.canvas2).map_err(err)?,
                );
                ensure(l1 == l2, || {
                    format!("{name}: pooled logits differ between the views of {}", p.pair_id)
                })?;
            }
            let report = evaluate(&clf, pairs, "pooled", None).map_err(err)?;
            ensure(report.css == 0.0 && report.joint_correct == 0, || {
                format!("{name} seed {seed}: pooled css {}", report.css)
            })?;
            checked += pairs.len();
        }
    }
    Ok(format!(
        "css 0 on {checked} pair evaluations over 3 manifests × 5 heads"
    ))
}

fn mask_correctness() -> Outcome {
    let g = 16;
    for policy in [ClassKeyPolicy::Local, ClassKeyPolicy::Excluded] {
        for r in 0..=30 {
            let inside = manhattan_mask(g, r, MaskMode::Inside, policy);
            let outside = manhattan_mask(g, r, MaskMode::Outside, policy);
            for q in 1..=g * g {
                for k in 1..=g * g {
                    ensure(inside.allowed(q, k) ^ outside.allowed(q, k), || {
                        format!("{policy:?} r {r}: patch pair ({q}, {k}) not partitioned")
                    })?;
                }
            }
        }
    }

    let categories = imagenet9();
    let model = PatchTransformer::new_random(ModelConfig::tiny(g, 2, categories.clone()), 77).map_err(err)?;
    let pairs = random_canvas_pairs(g, 2, 6, &categories, 31);
    let all_blocks: BTreeSet<usize> = (0..model.config().depth).collect();
    let saturating = MaskSpec {
        mode: MaskMode::Inside,
        radius: 30,
        target_blocks: all_blocks.clone(),
        class_key: ClassKeyPolicy::Local,
    };
    let mut worst: f64 = 0.0;
    for p in &pairs {
        for canvas in [&p.canvas1, &p.canvas2] {
            let x = model.normalize(canvas);
            let a = model.forward(&x, &MaskSpec::none()).map_err(err)?.logits;
            let b = model.forward(&x, &saturating).map_err(err)?.logits;
            worst = a.iter().zip(&b).fold(worst, |m, (u, v)| m.max((u - v).abs()));
        }
    }
    ensure(worst <= 1e-6, || {
        format!("saturating inside mask moves logits by {worst:e}")
    })?;

    let baseline = Baseline::new(&model, &pairs).map_err(err)?;
    let none = MaskSpec {
        mode: MaskMode::None,
        radius: 3,
        target_blocks: all_blocks,
        class_key: ClassKeyPolicy::Local,
    };
    let record = ablation_record(&model, &baseline, &none).map_err(err)?;
    ensure(
        (record.mean_cosine - 1.0).abs() <= 1e-12 && record.css == baseline.css(),
        || {
            format!(
                "mode none: cosine {} css {} vs {}",
                record.mean_cosine,
                record.css,
                baseline.css()
            )
        },
    )?;
    Ok(format!(
        "partition holds for r 0..=30, saturating max-abs {worst:.1e}, none cosine {}",
        record.mean_cosine
    ))
}

fn sampler_fixed_point() -> Outcome {
    let start = Instant::now();
    let categories = imagenet9();
    let denoiser = TemplateDenoiser::from_canvases(category_templates(&categories, 64)).map_err(err)?;
    let schedule = cosine_schedule(250, 0.008).map_err(err)?;
    let mut worst: f64 = 0.0;
    for i in 0..3u64 {
        let seed = child_seed(55, i);
        let (a, b) = distinct_labels(seed, categories.len());
        let cfg = SamplerConfig {
            label1: categories[a].clone(),
            label2: categories[b].clone(),
            permutation2: random_permutation(seed, 16, true).map_err(err)?,
            noise: NoiseMode::Deterministic,
            seed,
            ..base_sampler(64, 4)
        };
        let z0 = reverse_diffusion(&denoiser, &cfg, &schedule, |_, _| {}).map_err(err)?;
        let target = mean_mode_fixed_point(&denoiser, &cfg.label1, &cfg.label2, &cfg.permutation2).map_err(err)?;
        worst = worst.max(decode_latent(&z0).max_abs_diff(&decode_latent(&target)).map_err(err)?);
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-4, || {
        format!("canvas max-abs {worst:e} from the fixed point")
    })?;
    within(elapsed, 60.0)?;
    Ok(format!(
        "max-abs {worst:.1e} over 3 samples, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn toy_experiment() -> Outcome {
    let start = Instant::now();
    let task = ArrangementTask::new(4, 4).map_err(err)?;
    let categories = task.categories();
    let train_pairs = task.pairs(100, 2000).map_err(err)?;
    let heldout = task.pairs(200, 200).map_err(err)?;
    let labelled: Vec<(Image, usize)> = train_pairs
        .iter()
        .flat_map(|p| [(&p.canvas1, &p.label1), (&p.canvas2, &p.label2)])
        .map(|(c, l)| (c.clone(), categories.iter().position(|x| x == l).expect("task label")))
        .collect();

    let mut model = PatchTransformer::new_random(ModelConfig::tiny(4, 4, categories.clone()), 300).map_err(err)?;
    model.init_sincos_positions();
    let examples: Vec<Example> = labelled
        .iter()
        .map(|(c, l)| Example {
            input: model.normalize(c),
            label: *l,
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 32,
        learning_rate: 0.002,
        seed: 301,
        ..TrainConfig::default()
    };
    fit(&mut model, &examples, &cfg).map_err(err)?;
    let t = evaluate(
        &TransformerClassifier::new(&model, MaskSpec::none()),
        &heldout,
        "toy",
        None,
    )
    .map_err(err)?;

    let mut pooled = PooledLocalClassifier::new(PixelFeatures { patch_size: 4 }, 4, categories.clone(), 302);
    let pcfg = TrainConfig {
        epochs: 100,
        batch_size: 64,
        learning_rate: 0.01,
        seed: 303,
        ..TrainConfig::default()
    };
    pooled.train_head(&labelled, &pcfg).map_err(err)?;
    let p = evaluate(&pooled, &heldout, "pooled", None).map_err(err)?;
    let elapsed = start.elapsed();

    let chance = 1.0 / categories.len() as f64;
    ensure(t.css >= 0.9, || format!("transformer held-out css {}", t.css))?;
    ensure(p.css == 0.0, || format!("pooled held-out css {}", p.css))?;
    ensure(p.accuracy > chance, || {
        format!("pooled single-image accuracy {} ≤ {chance}", p.accuracy)
    })?;
    within(elapsed, 900.0)?;
    Ok(format!(
        "transformer css {:.3}, pooled css {} with accuracy {:.3}, {:.1} s",
        t.css,
        p.css,
        p.accuracy,
        elapsed.as_secs_f64()
    ))
}

fn gradient_check() -> Outcome {
    let categories: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    let mut model = PatchTransformer::new_random(ModelConfig::tiny(3, 2, categories), 41).map_err(err)?;
    let mut rng = keyed(42, 0);
    let canvas = Image::from_vec(6, 6, 3, (0..108).map(|_| rng.random::<f64>()).collect()).map_err(err)?;
    let x = model.normalize(&canvas);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let specs = [MaskSpec::none(), MaskSpec::at_block(MaskMode::Outside, 1, 1)];
    for spec in &specs {
        let mut grad = vec![0.0; model.param_count()];
        model.accumulate_gradient(&x, 2, spec, &mut grad).map_err(err)?;
        for (i, &analytic) in grad.iter().enumerate() {
            let p = model.params()[i];
            model.params_mut()[i] = p + h;
            let up = model.loss(&x, 2, spec).map_err(err)?;
            model.params_mut()[i] = p - h;
            let down = model.loss(&x, 2, spec).map_err(err)?;
            model.params_mut()[i] = p;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-3, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "{} parameters × 2 masks, max relative error {worst:.1e}",
        model.param_count()
    ))
}

fn williams_reproduction() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (r12, r13, expected) in [(0.81, 0.62, 3.4116), (0.76, 0.32, 7.618), (0.73, 0.52, 3.39)] {
        let w = williams_test(DependentCorrelations {
            r12,
            r13,
            r23: 0.64,
            n: 86,
        })
        .map_err(err)?;
        ensure((w.t - expected).abs() <= 0.3, || {
            format!("({r12}, {r13}): t {} vs {expected}", w.t)
        })?;
        if r12 == 0.81 {
            ensure(w.p <= 0.001, || format!("({r12}, {r13}): one-tailed p {}", w.p))?;
        }
        parts.push(format!("t {:.3}", w.t));
    }
    within(start.elapsed(), 1.0)?;
    Ok(parts.join(", "))
}

fn rsa_fixtures() -> Outcome {
    let categories = imagenet9();
    let denoiser = TemplateDenoiser::from_canvases(category_templates(&categories, 32)).map_err(err)?;
    let schedule = cosine_schedule(250, 0.008).map_err(err)?;
    let pairs = build_control_set(&denoiser, &schedule, &base_sampler(32, 4), &categories, 4, 606).map_err(err)?;

    let synthetic = CategoryEmbedder {
        categories: categories.clone(),
        layers: 3,
    };
    let profile = layer_profile(&synthetic, &pairs).map_err(err)?;
    for i in 0..profile.rows.len() {
        let s = influence_scores(&profile, i).map_err(err)?;
        ensure(
            s.puzzle_component_influence.abs() <= 1e-12 && (s.category_influence - 1.0).abs() <= 1e-12,
            || {
                format!(
                    "{}: PCI {} CI {}",
                    s.layer, s.puzzle_component_influence, s.category_influence
                )
            },
        )?;
    }

    let pooled = PooledLocalClassifier::new(PixelFeatures { patch_size: 8 }, 4, categories, 607);
    let profile = layer_profile(&pooled, &pairs).map_err(err)?;
    for row in &profile.rows {
        ensure(row.mean(PairType::SpDc) == Some(1.0), || {
            format!("pooled {}: SP-DC similarity {:?}", row.layer, row.mean(PairType::SpDc))
        })?;
    }
    Ok(format!(
        "{} control pairs, PCI 0 and CI 1, pooled SP-DC 1 at {} layers",
        pairs.len(),
        profile.rows.len()
    ))
}

#[allow(clippy::approx_constant)]
fn shape_bias_formula() -> Outcome {
    let full = corrected_shape_bias(BiasCounts {
        shape_correct: 1200,
        texture_correct: 0,
        total: 1200,
    })
    .map_err(err)?;
    let half = corrected_shape_bias(BiasCounts {
        shape_correct: 600,
        texture_correct: 0,
        total: 1200,
    })
    .map_err(err)?;
    ensure(full == 1.0, || format!("(N, 0, N) gives {full}"))?;
    ensure((half - 0.70711).abs() <= 1e-5, || {
        format!("(600, 0, 1200) gives {half}")
    })?;
    Ok(format!("{full}, {half:.5}"))
}

fn report(index: usize, name: &str, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{status} criterion {index:>2} {name}: {detail} [{secs:.1} s]");
    std::io::stdout().flush().ok();
    outcome.is_ok()
}

fn main() {
    let mut passed = Vec::new();
    passed.push(report(1, "chance level", chance_level));
    let mut synthesized = Vec::new();
    passed.push(report(2, "anagram invariance", || {
        let (outcome, pairs) = anagram_invariance();
        synthesized = pairs;
        outcome
    }));
    passed.push(report(3, "pooled classifiers cannot solve anagrams", || {
        pooled_impossibility(&synthesized)
    }));
    passed.push(report(4, "attention masks", mask_correctness));
    passed.push(report(5, "sampler fixed point", sampler_fixed_point));
    passed.push(report(6, "toy configural experiment", toy_experiment));
    passed.push(report(7, "gradient check", gradient_check));
    passed.push(report(8, "williams test", williams_reproduction));
    passed.push(report(9, "rsa fixtures", rsa_fixtures));
    passed.push(report(10, "corrected shape bias", shape_bias_formula));
    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
