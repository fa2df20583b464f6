//! Ablation sweeps over merge weights and densities.
//!
//! Each grid point is merged, handed to a caller-supplied scorer, and
//! compared against declared baseline scores as a percentage change.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{
    check_density, check_spread, check_weight, merge, MergeRecipe, Method, TaskWeight,
};
use crate::numeric::l2_norm;
use crate::taskvector::{compute_delta, TaskVector};
use crate::tensor::TensorMap;

/// Metric name → score.
pub type Scores = BTreeMap<String, f64>;

/// Weight pairs `0.1/0.9, 0.2/0.8, ..., 0.9/0.1`.
pub fn ratio_grid() -> Vec<Vec<f64>> {
    (1..=9)
        .map(|i| {
            let g = f64::from(i) / 10.0;
            let s = f64::from(10 - i) / 10.0;
            vec![g, s]
        })
        .collect()
}

fn default_densities() -> Vec<f64> {
    vec![1.0]
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub methods: Vec<Method>,
    /// One weight per task at each grid point.
    pub weights: Vec<Vec<f64>>,
    #[serde(default = "default_densities")]
    pub densities: Vec<f64>,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub normalize_weights: bool,
    #[serde(default)]
    pub task_ids: Vec<String>,
    /// Declared reference scores, e.g. those of the single-task specialists.
    #[serde(default)]
    pub baseline: Scores,
}

impl SweepPlan {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidPlan(e.to_string()))
    }

    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.methods.is_empty() || self.weights.is_empty() || self.densities.is_empty() {
            return bad("methods, weights and densities must be non-empty".into());
        }
        for w in &self.weights {
            if w.len() != n_tasks {
                return bad(format!(
                    "weight point {w:?} has {} entries for {n_tasks} tasks",
                    w.len()
                ));
            }
            for &x in w {
                check_weight(x)?;
            }
            if w.iter().all(|&x| x == 0.0) {
                return bad(format!("weight point {w:?} is all zero"));
            }
        }
        for &d in &self.densities {
            check_density(d)?;
            if self.methods.contains(&Method::Della) {
                check_spread(d, self.spread)?;
            }
        }
        if !self.task_ids.is_empty() && self.task_ids.len() != n_tasks {
            return bad(format!(
                "{} task_ids for {n_tasks} tasks",
                self.task_ids.len()
            ));
        }
        if self.baseline.is_empty() {
            return bad("baseline must name at least one metric".into());
        }
        for (m, &b) in &self.baseline {
            if !b.is_finite() || b == 0.0 {
                return bad(format!("baseline for {m:?} must be finite and non-zero"));
            }
        }
        Ok(())
    }

    pub fn task_id(&self, i: usize) -> String {
        self.task_ids
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("task{i}"))
    }

    /// Grid points in report order: method, then weights, then density.
    pub fn points(&self) -> Vec<(Method, Vec<f64>, f64)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            for w in &self.weights {
                for &d in &self.densities {
                    out.push((m, w.clone(), d));
                }
            }
        }
        out
    }

    fn recipe(&self, method: Method, weights: &[f64], density: f64) -> MergeRecipe {
        MergeRecipe {
            method,
            tasks: weights
                .iter()
                .enumerate()
                .map(|(i, &weight)| TaskWeight {
                    task_id: self.task_id(i),
                    weight,
                })
                .collect(),
            density,
            spread: self.spread,
            seed: self.seed,
            normalize_weights: self.normalize_weights,
            scale: self.scale,
        }
    }
}

/// `100 · (score − baseline) / baseline`.
pub fn percent_change(score: f64, baseline: f64) -> f64 {
    100.0 * (score - baseline) / baseline
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub weights: Vec<f64>,
    pub density: f64,
    pub scores: Scores,
    pub pct_change: Scores,
    pub avg_pct_change: f64,
    /// Highest `avg_pct_change` among rows of the same method.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub metrics: Vec<String>,
    pub baseline: Scores,
    pub rows: Vec<SweepRow>,
}

fn weights_label(w: &[f64]) -> String {
    w.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

/// Merges and scores every grid point of `plan`.
pub fn run_sweep<F>(
    plan: &SweepPlan,
    base: &TensorMap,
    tasks: &[TensorMap],
    scorer: F,
) -> Result<SweepReport>
where
    F: Fn(&TensorMap) -> Result<Scores> + Sync,
{
    plan.validate(tasks.len())?;
    let metrics: Vec<String> = plan.baseline.keys().cloned().collect();
    let rows = plan
        .points()
        .into_par_iter()
        .map(|(method, weights, density)| {
            let annotate = |e: Error| Error::GridPoint {
                point: format!("{method} {} d={density}", weights_label(&weights)),
                source: Box::new(e),
            };
            let merged =
                merge(&plan.recipe(method, &weights, density), base, tasks).map_err(annotate)?;
            let all = scorer(&merged).map_err(annotate)?;
            let mut scores = Scores::new();
            let mut pct = Scores::new();
            for (m, &b) in &plan.baseline {
                let s = *all
                    .get(m)
                    .ok_or_else(|| annotate(Error::Scorer(format!("no score for metric {m:?}"))))?;
                scores.insert(m.clone(), s);
                pct.insert(m.clone(), percent_change(s, b));
            }
            let avg = pct.values().sum::<f64>() / pct.len() as f64;
            Ok(SweepRow {
                method,
                weights,
                density,
                scores,
                pct_change: pct,
                avg_pct_change: avg,
                best: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SweepReport {
        metrics,
        baseline: plan.baseline.clone(),
        rows,
    };
    mark_best(&mut report.rows);
    Ok(report)
}

fn mark_best(rows: &mut [SweepRow]) {
    let mut best: BTreeMap<Method, usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        match best.get(&r.method) {
            Some(&j) if rows[j].avg_pct_change >= r.avg_pct_change => {}
            _ => {
                best.insert(r.method, i);
            }
        }
    }
    for i in best.into_values() {
        rows[i].best = true;
    }
}

/// Signed percentage with two decimals: `+1.59%`, `-0.77%`, `0.00%`.
pub fn format_pct(p: f64) -> String {
    let s = format!("{p:.2}");
    let s = if s == "-0.00" { "0.00".to_string() } else { s };
    if s == "0.00" || s.starts_with('-') {
        format!("{s}%")
    } else {
        format!("+{s}%")
    }
}

fn plain_pct(p: f64) -> String {
    let s = format!("{p:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    /// Picks a format from a file extension (`csv`, `json`, `md`).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            "md" | "markdown" => Some(Self::Markdown),
            _ => None,
        }
    }
}

pub fn format_report(report: &SweepReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = String::from("method,weights,density");
            for m in &report.metrics {
                write!(out, ",{m},{m}_pct").unwrap();
            }
            out.push_str(",avg_pct,best\n");
            for r in &report.rows {
                write!(
                    out,
                    "{},{},{}",
                    r.method,
                    weights_label(&r.weights),
                    r.density
                )
                .unwrap();
                for m in &report.metrics {
                    write!(out, ",{},{}", r.scores[m], plain_pct(r.pct_change[m])).unwrap();
                }
                writeln!(out, ",{},{}", plain_pct(r.avg_pct_change), r.best).unwrap();
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| Method | Weight | Density |");
            for m in &report.metrics {
                write!(out, " {m} |").unwrap();
            }
            out.push_str(" AVG % |\n|---|---|---|");
            for _ in &report.metrics {
                out.push_str("---|");
            }
            out.push_str("---|\n");
            for r in &report.rows {
                let mut cells = vec![
                    r.method.to_string(),
                    weights_label(&r.weights),
                    r.density.to_string(),
                ];
                for m in &report.metrics {
                    cells.push(format!(
                        "{:.4}({})",
                        r.scores[m],
                        format_pct(r.pct_change[m])
                    ));
                }
                cells.push(format_pct(r.avg_pct_change));
                out.push('|');
                for c in cells {
                    if r.best {
                        write!(out, " **{c}** |").unwrap();
                    } else {
                        write!(out, " {c} |").unwrap();
                    }
                }
                out.push('\n');
            }
            out
        }
    }
}

/// Analytic scorer: cosine similarity between the merged model's delta and
/// each task's delta, reported as `cos_<task_id>`. A specialist scores 1.0
/// against its own task.
pub struct DeltaCosineScorer {
    base: TensorMap,
    tasks: Vec<(String, TaskVector)>,
}

impl DeltaCosineScorer {
    pub fn new(base: &TensorMap, tasks: &[(String, TensorMap)]) -> Result<Self> {
        let tasks = tasks
            .iter()
            .map(|(id, t)| Ok((id.clone(), compute_delta(base, t)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base: base.clone(),
            tasks,
        })
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.tasks
            .iter()
            .map(|(id, _)| format!("cos_{id}"))
            .collect()
    }

    pub fn score(&self, merged: &TensorMap) -> Result<Scores> {
        let md = compute_delta(&self.base, merged)?;
        let flat = |tv: &TaskVector| -> Vec<f32> {
            tv.deltas()
                .iter()
                .flat_map(|(_, t)| t.data().iter().copied())
                .collect()
        };
        let m = flat(&md);
        let mn = l2_norm(&m);
        Ok(self
            .tasks
            .iter()
            .map(|(id, tv)| {
                let t = flat(tv);
                let tn = l2_norm(&t);
                let dot: f64 = m
                    .iter()
                    .zip(&t)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                let cos = if mn == 0.0 || tn == 0.0 {
                    0.0
                } else {
                    dot / (mn * tn)
                };
                (format!("cos_{id}"), cos)
            })
            .collect())
    }
}
