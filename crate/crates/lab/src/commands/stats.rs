use std::collections::HashMap;
use std::path::Path;

use anagram_core::stats::{corrected_shape_bias, pearson, williams_test, BiasCounts, DependentCorrelations};
use serde::Serialize;

use super::Context;
use crate::config::{load_config, resolve, StatsAnalysis, StatsConfig};
use crate::error::LabError;
use crate::report::{num, write_json, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum StatsResult {
    Williams {
        r12: f64,
        r13: f64,
        r23: f64,
        n: usize,
        t: f64,
        p: f64,
        df: usize,
    },
    Pearson {
        x: String,
        y: String,
        n: usize,
        r: f64,
    },
    ShapeBias {
        shape_correct: u64,
        texture_correct: u64,
        total: u64,
        bias: f64,
    },
}

impl StatsResult {
    fn kind(&self) -> &'static str {
        match self {
            StatsResult::Williams { .. } => "williams",
            StatsResult::Pearson { .. } => "pearson",
            StatsResult::ShapeBias { .. } => "shapeBias",
        }
    }

    /// `(quantity, value)` rows for the long-format CSV.
    fn quantities(&self) -> Vec<(&'static str, String)> {
        match self {
            StatsResult::Williams {
                r12,
                r13,
                r23,
                n,
                t,
                p,
                df,
            } => vec![
                ("r12", num(*r12)),
                ("r13", num(*r13)),
                ("r23", num(*r23)),
                ("n", n.to_string()),
                ("t", num(*t)),
                ("p", num(*p)),
                ("df", df.to_string()),
            ],
            StatsResult::Pearson { n, r, .. } => vec![("n", n.to_string()), ("r", num(*r))],
            StatsResult::ShapeBias {
                shape_correct,
                texture_correct,
                total,
                bias,
            } => vec![
                ("shapeCorrect", shape_correct.to_string()),
                ("textureCorrect", texture_correct.to_string()),
                ("total", total.to_string()),
                ("bias", num(*bias)),
            ],
        }
    }
}

/// Reads the named numeric columns of a CSV file.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, LabError> {
    let data_err = |m: String| LabError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let header: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| data_err(e.to_string()))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let idx = names
        .iter()
        .map(|n| {
            header
                .get(*n)
                .copied()
                .ok_or_else(|| data_err(format!("no column {n:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(e.to_string()))?;
        for (col, &i) in cols.iter_mut().zip(&idx) {
            let v = record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| data_err(format!("row {}: column {i} is not a number", line + 1)))?;
            col.push(v);
        }
    }
    Ok(cols)
}

fn williams(r12: f64, r13: f64, r23: f64, n: usize) -> Result<StatsResult, LabError> {
    let w = williams_test(DependentCorrelations { r12, r13, r23, n })?;
    Ok(StatsResult::Williams {
        r12,
        r13,
        r23,
        n,
        t: w.t,
        p: w.p,
        df: w.df,
    })
}

pub fn run_analysis(analysis: &StatsAnalysis, base: &Path) -> Result<StatsResult, LabError> {
    match analysis {
        StatsAnalysis::Williams { r12, r13, r23, n } => williams(*r12, *r13, *r23, *n),
        StatsAnalysis::WilliamsCsv {
            csv,
            criterion,
            predictor_a,
            predictor_b,
        } => {
            let cols = read_columns(&resolve(base, csv), &[criterion, predictor_a, predictor_b])?;
            let (c, a, b) = (&cols[0], &cols[1], &cols[2]);
            williams(pearson(a, c)?, pearson(b, c)?, pearson(a, b)?, c.len())
        }
        StatsAnalysis::Pearson { csv, x, y } => {
            let cols = read_columns(&resolve(base, csv), &[x, y])?;
            Ok(StatsResult::Pearson {
                x: x.clone(),
                y: y.clone(),
                n: cols[0].len(),
                r: pearson(&cols[0], &cols[1])?,
            })
        }
        StatsAnalysis::ShapeBias {
            shape_correct,
            texture_correct,
            total,
        } => Ok(StatsResult::ShapeBias {
            shape_correct: *shape_correct,
            texture_correct: *texture_correct,
            total: *total,
            bias: corrected_shape_bias(BiasCounts {
                shape_correct: *shape_correct,
                texture_correct: *texture_correct,
                total: *total,
            })?,
        }),
    }
}

#[derive(Debug, Serialize)]
struct StatsReport {
    results: Vec<StatsResult>,
}

pub fn stats(ctx: &Context) -> Result<String, LabError> {
    let cfg: StatsConfig = load_config(&ctx.config)?;
    if cfg.analyses.is_empty() {
        return Err(LabError::Config("no analyses requested".into()));
    }
    let base = ctx.base();
    let results = cfg
        .analyses
        .iter()
        .map(|a| run_analysis(a, &base))
        .collect::<Result<Vec<_>, _>>()?;
    let report = StatsReport { results };

    let out = ctx.out_dir("")?;
    write_json(&out.join("stats.json"), &Report::new("stats", None, &cfg, &report))?;
    let mut table = Table::new(["analysis", "kind", "quantity", "value"]);
    for (i, r) in report.results.iter().enumerate() {
        for (q, v) in r.quantities() {
            table.push(vec![i.to_string(), r.kind().to_string(), q.to_string(), v]);
        }
    }
    table.write(&out.join("stats.csv"))?;
    let lines: Vec<String> = report
        .results
        .iter()
        .map(|r| match r {
            StatsResult::Williams { t, p, .. } => format!("williams t={t:.4} p={p:.3e}"),
            StatsResult::Pearson { r, .. } => format!("pearson r={r:.5}"),
            StatsResult::ShapeBias { bias, .. } => format!("shape bias {bias:.5}"),
        })
        .collect();
    Ok(lines.join("; "))
}
