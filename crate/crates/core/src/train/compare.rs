use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::engine::{train, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::scene::{ClassCatalog, ClassGroup, DatasetSplit};

/// Mean and sample standard deviation (`None` below two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl MetricStat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Self { mean, std, n })
    }
}

/// Headline numbers of one evaluation, keyed `overall_*`, `majority_*`, `minority_*`.
pub fn run_metrics(report: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("overall_ap".to_string(), report.map50);
    m.insert("overall_recall".to_string(), report.mean_recall);
    for g in &report.groups {
        let prefix = match g.group {
            ClassGroup::Majority => "majority",
            ClassGroup::Minority => "minority",
        };
        m.insert(format!("{prefix}_ap"), g.mean_ap);
        m.insert(format!("{prefix}_recall"), g.mean_recall);
        m.insert(format!("{prefix}_bg_rate"), g.mean_background_rate);
    }
    m
}

#[derive(Debug)]
pub struct ComparisonRun {
    pub seed: u64,
    pub cfpl_enabled: bool,
    /// Training and held-out evaluation; a failure does not abort the other runs.
    pub result: Result<(TrainOutcome, EvalReport)>,
}

impl ComparisonRun {
    pub fn label(&self) -> String {
        format!("{}_seed{}", if self.cfpl_enabled { "cfpl" } else { "baseline" }, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonAggregate {
    pub seeds: Vec<u64>,
    pub baseline: BTreeMap<String, MetricStat>,
    pub cfpl: BTreeMap<String, MetricStat>,
    /// CFPL mean minus baseline mean, for metrics present in both arms.
    pub delta: BTreeMap<String, f64>,
    pub failed_runs: Vec<String>,
}

#[derive(Debug)]
pub struct Comparison {
    pub runs: Vec<ComparisonRun>,
    pub aggregate: ComparisonAggregate,
}

fn aggregate_arm(runs: &[ComparisonRun], cfpl: bool) -> BTreeMap<String, MetricStat> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs.iter().filter(|r| r.cfpl_enabled == cfpl) {
        if let Ok((_, report)) = &run.result {
            for (k, v) in run_metrics(report) {
                values.entry(k).or_default().push(v);
            }
        }
    }
    values.into_iter().filter_map(|(k, v)| Some((k, MetricStat::from_values(&v)?))).collect()
}

pub fn aggregate(runs: &[ComparisonRun], seeds: Vec<u64>) -> ComparisonAggregate {
    let baseline = aggregate_arm(runs, false);
    let cfpl = aggregate_arm(runs, true);
    let delta = cfpl.iter().filter_map(|(k, c)| Some((k.clone(), c.mean - baseline.get(k)?.mean))).collect();
    ComparisonAggregate {
        seeds,
        baseline,
        cfpl,
        delta,
        failed_runs: runs.iter().filter(|r| r.result.is_err()).map(|r| r.label()).collect(),
    }
}

/// Trains a baseline and a masked run for each of `num_seeds` seeds
/// (`config.seed`, `config.seed + 1`, ...) on identical data, evaluates the
/// final models on the test partition, and aggregates.
pub fn run_comparison(split: &DatasetSplit, catalog: &ClassCatalog, config: &TrainConfig, num_seeds: usize) -> Result<Comparison> {
    run_comparison_with(split, catalog, config, num_seeds, |_| {})
}

/// As [`run_comparison`], calling `on_run` after each run finishes.
pub fn run_comparison_with(
    split: &DatasetSplit,
    catalog: &ClassCatalog,
    config: &TrainConfig,
    num_seeds: usize,
    mut on_run: impl FnMut(&ComparisonRun),
) -> Result<Comparison> {
    if num_seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    config.validate()?;
    let held_out = if split.test.is_empty() { &split.val } else { &split.test };
    let seeds: Vec<u64> = (0..num_seeds as u64).map(|k| config.seed + k).collect();
    let mut runs = Vec::with_capacity(2 * num_seeds);
    for &seed in &seeds {
        for enabled in [false, true] {
            let mut cfg = config.with_cfpl_enabled(enabled);
            cfg.seed = seed;
            let result = train(split, catalog, &cfg, None).and_then(|outcome| {
                let report = evaluate(&outcome.final_checkpoint.detector, held_out, catalog, &cfg.eval)?;
                Ok((outcome, report))
            });
            let run = ComparisonRun {
                seed,
                cfpl_enabled: enabled,
                result,
            };
            on_run(&run);
            runs.push(run);
        }
    }
    let aggregate = aggregate(&runs, seeds);
    Ok(Comparison { runs, aggregate })
}

fn fmt_stat(s: Option<&MetricStat>) -> String {
    match s {
        Some(MetricStat { mean, std: Some(sd), .. }) => format!("{:.2} ± {:.2}", mean * 100.0, sd * 100.0),
        Some(MetricStat { mean, std: None, .. }) => format!("{:.2}", mean * 100.0),
        None => "-".to_string(),
    }
}

impl ComparisonAggregate {
    /// Markdown table of group metrics (percent), baseline vs masked with deltas.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| group | metric | baseline | CFPL | Δ |\n|---|---|---|---|---|\n");
        for group in ["majority", "minority", "overall"] {
            for (metric, label) in [("ap", "AP@0.5"), ("recall", "recall@0.5"), ("bg_rate", "background rate")] {
                let key = format!("{group}_{metric}");
                if !self.baseline.contains_key(&key) && !self.cfpl.contains_key(&key) {
                    continue;
                }
                let delta = self.delta.get(&key).map_or("-".to_string(), |d| format!("{:+.2}", d * 100.0));
                let _ = writeln!(
                    out,
                    "| {group} | {label} | {} | {} | {delta} |",
                    fmt_stat(self.baseline.get(&key)),
                    fmt_stat(self.cfpl.get(&key))
                );
            }
        }
        if !self.failed_runs.is_empty() {
            let _ = writeln!(out, "\nfailed runs: {}", self.failed_runs.join(", "));
        }
        out
    }
}
