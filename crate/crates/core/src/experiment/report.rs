use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentKind;
use crate::error::{Error, Result};
use crate::probes::{mean_std, CompressionReport, FlatnessCurve, MetricBundle};
use crate::splitnet::{SplitPlan, StageReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const BASELINE: &str = "baseline";
pub const PC_ANN: &str = "pc_ann";
pub const MODELS: [&str; 2] = [BASELINE, PC_ANN];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub metrics: BTreeMap<String, f64>,
    pub eval: MetricBundle,
    pub stages: Vec<StageReport>,
    pub plan: Option<SplitPlan>,
    pub flatness: Option<FlatnessCurve>,
    pub compression: Option<CompressionReport>,
    pub train_samples: usize,
    pub train_class_counts: Vec<usize>,
    /// Trainable scalars that are not structurally masked.
    pub effective_parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub result: Option<ModelResult>,
    pub error: Option<String>,
}

impl ModelOutcome {
    pub fn from_result(r: Result<ModelResult>) -> Self {
        match r {
            Ok(result) => Self {
                result: Some(result),
                error: None,
            },
            Err(e) => Self {
                result: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub models: BTreeMap<String, ModelOutcome>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub std: f64,
    pub n: usize,
}

/// Results of one grid cell over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub config_hash: String,
    pub experiment: String,
    pub kind: ExperimentKind,
    pub grid_axis: String,
    /// Position of this cell in the configured grid.
    pub grid_index: usize,
    pub grid_label: String,
    pub seeds: Vec<SeedResult>,
    /// `model → metric → aggregate` over the seeds where the model succeeded.
    pub aggregate: BTreeMap<String, BTreeMap<String, Aggregate>>,
    pub failures: usize,
    pub wall_clock_seconds: f64,
}

pub fn aggregate(seeds: &[SeedResult]) -> BTreeMap<String, BTreeMap<String, Aggregate>> {
    let mut out = BTreeMap::new();
    for model in MODELS {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in seeds {
            if let Some(r) = s.models.get(model).and_then(|o| o.result.as_ref()) {
                for (k, v) in &r.metrics {
                    values.entry(k.clone()).or_default().push(*v);
                }
            }
        }
        let agg: BTreeMap<String, Aggregate> = values
            .into_iter()
            .map(|(k, v)| {
                let (mean, std) = mean_std(&v);
                (k, Aggregate { mean, std, n: v.len() })
            })
            .collect();
        out.insert(model.to_string(), agg);
    }
    out
}

impl RunReport {
    /// JSON with the wall-clock field zeroed; identical configs give
    /// identical bodies.
    pub fn body_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_clock_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&copy)?)
    }

    /// Whether the stored aggregates equal those recomputed from the seeds.
    pub fn check_aggregates(&self) -> Result<()> {
        if aggregate(&self.seeds) != self.aggregate {
            return Err(Error::State(format!(
                "aggregates of grid cell {} do not match its per-seed entries",
                self.grid_label
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(REPORT_SCHEMA_VERSION as u64) {
            return Err(Error::Version(format!(
                "{} has report schema {:?}, expected {REPORT_SCHEMA_VERSION}",
                path.display(),
                version
            )));
        }
        let report: Self = serde_json::from_value(value)?;
        report.check_aggregates()?;
        Ok(report)
    }

    pub fn metric(&self, model: &str, metric: &str) -> Option<Aggregate> {
        self.aggregate.get(model).and_then(|m| m.get(metric)).copied()
    }
}

/// Metrics shown in the summary table for an experiment kind.
pub fn headline_metrics(kind: ExperimentKind, report: &RunReport) -> Vec<String> {
    match kind {
        ExperimentKind::Performance | ExperimentKind::Imbalance | ExperimentKind::SampleEfficiency => {
            vec!["test_accuracy".into()]
        }
        ExperimentKind::Shortcut => {
            let mut names: Vec<String> = vec!["test_accuracy".into()];
            let mut cells: Vec<String> = report
                .aggregate
                .values()
                .flat_map(|m| m.keys())
                .filter(|k| k.starts_with("cell_"))
                .cloned()
                .collect();
            cells.sort();
            cells.dedup();
            names.extend(cells);
            names
        }
        ExperimentKind::Flatness => vec!["train_accuracy".into(), "flatness_at_max_sigma".into()],
        ExperimentKind::Compression => vec!["random_label_accuracy".into()],
        ExperimentKind::GroupingRecovery => vec![
            "partition_recovered".into(),
            "final_disjoint".into(),
            "mean_max_probability".into(),
        ],
    }
}

/// Percent with two decimals: `"92.49 ± 0.25"`.
pub fn format_mean_std(a: Option<Aggregate>, scale: f64) -> String {
    match a {
        Some(a) => format!("{:.2} ± {:.2}", a.mean * scale, a.std * scale),
        None => "n/a".into(),
    }
}

fn metric_scale(metric: &str) -> f64 {
    if metric.contains("accuracy")
        || metric.starts_with("cell_")
        || metric == "partition_recovered"
        || metric.starts_with("flatness")
    {
        100.0
    } else {
        1.0
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Summary CSV: one row per (grid cell, headline metric) with baseline and
/// PC-ANN columns.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let mut hashes: Vec<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.dedup();
    let axis = reports.first().map(|r| r.grid_axis.as_str()).unwrap_or("setting");
    let _ = writeln!(
        out,
        "# experiment={} config_hash={} artifact_version={}",
        reports.first().map(|r| r.experiment.as_str()).unwrap_or(""),
        hashes.join("+"),
        reports.first().map(|r| r.artifact_version.as_str()).unwrap_or("")
    );
    let _ = writeln!(out, "{axis},metric,{BASELINE},{PC_ANN},status");
    for r in reports {
        let status = if r.failures == 0 {
            "ok".to_string()
        } else {
            format!("failed({})", r.failures)
        };
        for metric in headline_metrics(r.kind, r) {
            let scale = metric_scale(&metric);
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.grid_label),
                csv_field(&metric),
                format_mean_std(r.metric(BASELINE, &metric), scale),
                format_mean_std(r.metric(PC_ANN, &metric), scale),
                status
            );
        }
    }
    out
}

/// Plot series: flatness curves `(σ, mean, std)` averaged over seeds and
/// per-cell shortcut accuracies.
pub fn plot_data(reports: &[RunReport]) -> serde_json::Value {
    let mut flatness = Vec::new();
    let mut cells = Vec::new();
    for r in reports {
        for model in MODELS {
            let curves: Vec<&FlatnessCurve> = r
                .seeds
                .iter()
                .filter_map(|s| s.models.get(model)?.result.as_ref()?.flatness.as_ref())
                .collect();
            if let Some(first) = curves.first() {
                let mut mean = Vec::new();
                let mut std = Vec::new();
                for i in 0..first.sigmas.len() {
                    let v: Vec<f64> = curves.iter().map(|c| c.mean_accuracy[i]).collect();
                    let (m, s) = mean_std(&v);
                    mean.push(m);
                    std.push(s);
                }
                flatness.push(json!({
                    "experiment": r.experiment,
                    "grid": r.grid_label,
                    "model": model,
                    "sigma": first.sigmas,
                    "mean": mean,
                    "std": std,
                }));
            }
            if let Some(metrics) = r.aggregate.get(model) {
                for (name, a) in metrics.iter().filter(|(k, _)| k.starts_with("cell_")) {
                    cells.push(json!({
                        "experiment": r.experiment,
                        "grid": r.grid_label,
                        "model": model,
                        "cell": name.trim_start_matches("cell_"),
                        "mean": a.mean,
                        "std": a.std,
                    }));
                }
            }
        }
    }
    let mut hashes: Vec<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.dedup();
    json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "artifact_version": reports.first().map(|r| r.artifact_version.clone()),
        "config_hashes": hashes,
        "flatness": flatness,
        "shortcut_cells": cells,
    })
}

/// Checks that reports can be aggregated together.
pub fn check_compatible(reports: &[RunReport], force: bool) -> Result<()> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Input("no run reports given".into()))?;
    if let Some(r) = reports.iter().find(|r| r.schema_version != first.schema_version) {
        return Err(Error::Version(format!(
            "mixed report schemas {} and {}",
            first.schema_version, r.schema_version
        )));
    }
    if !force {
        if let Some(r) = reports.iter().find(|r| r.config_hash != first.config_hash) {
            return Err(Error::Config(format!(
                "reports come from different configs ({} vs {}); pass --force to combine",
                first.config_hash, r.config_hash
            )));
        }
    }
    Ok(())
}

/// Expands directories into the run reports they contain (every `*.json`
/// except `config.json` and `plot.json`), in name order.
pub fn collect_report_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| {
                f.extension().is_some_and(|e| e == "json")
                    && !matches!(
                        f.file_name().and_then(|n| n.to_str()),
                        Some("config.json" | "plot.json")
                    )
            });
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SummaryOutput {
    pub csv_path: PathBuf,
    pub plot_path: PathBuf,
    pub reports: usize,
}

/// Loads, checks and orders the reports, then writes `summary.csv` and
/// `plot.json` into `out`. Nothing is written if any step fails.
pub fn summarize(paths: &[PathBuf], out: &Path, force: bool) -> Result<SummaryOutput> {
    let files = collect_report_paths(paths)?;
    if files.is_empty() {
        return Err(Error::Input("no run reports given".into()));
    }
    let mut reports = files.iter().map(|f| RunReport::load(f)).collect::<Result<Vec<_>>>()?;
    check_compatible(&reports, force)?;
    reports.sort_by(|a, b| (&a.experiment, a.grid_index).cmp(&(&b.experiment, b.grid_index)));
    let csv = summary_csv(&reports);
    let plot = serde_json::to_string_pretty(&plot_data(&reports))?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("summary.csv");
    let plot_path = out.join("plot.json");
    std::fs::write(&csv_path, csv)?;
    std::fs::write(&plot_path, plot)?;
    Ok(SummaryOutput {
        csv_path,
        plot_path,
        reports: reports.len(),
    })
}
