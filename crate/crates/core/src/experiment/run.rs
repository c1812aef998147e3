use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{DataSplit, ExperimentConfig, ExperimentKind};
use super::report::{
    aggregate, summary_csv, ModelOutcome, ModelResult, RunReport, SeedResult, BASELINE, PC_ANN, REPORT_SCHEMA_VERSION,
};
use crate::data::{imbalance_counts, subsample, Dataset, SubsampleMode};
use crate::error::{Error, Result};
use crate::grouping::{assignment_probs, mean_max_probability, reg_disjoint};
use crate::probes::{compression_probe, eval_metrics, flatness_probe};
use crate::rng::{derive_seed, tag};
use crate::splitnet::{train_baseline, train_two_stage, SplitPlan, StageReport};
use crate::tensor::{NetworkParams, NetworkSpec};
use crate::ARTIFACT_VERSION;

/// One point of the protocol grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub label: String,
    pub sampling: Option<SubsampleMode>,
    pub gamma: Option<f64>,
}

pub fn grid_cells(config: &ExperimentConfig) -> Vec<GridCell> {
    match config.kind {
        ExperimentKind::Imbalance => config
            .grid
            .gammas
            .iter()
            .map(|&g| GridCell {
                label: format!("{g}"),
                sampling: None,
                gamma: Some(g),
            })
            .collect(),
        ExperimentKind::SampleEfficiency => config
            .grid
            .percents
            .iter()
            .map(|&p| GridCell {
                label: format!("{p}"),
                sampling: Some(SubsampleMode::Fraction(p / 100.0)),
                gamma: None,
            })
            .collect(),
        _ => vec![GridCell {
            label: "default".into(),
            sampling: None,
            gamma: None,
        }],
    }
}

fn cell_train_data(config: &ExperimentConfig, cell: &GridCell, train: &Dataset, seed: u64) -> Result<Dataset> {
    let mode = match (&cell.sampling, cell.gamma) {
        (Some(mode), _) => mode.clone(),
        (None, Some(gamma)) => SubsampleMode::PerClass(imbalance_counts(
            train.classes(),
            gamma,
            config.grid.n_max,
            config.grid.n_min,
        )?),
        (None, None) => return Ok(train.clone()),
    };
    subsample(
        train,
        &mode,
        config.grid.stratified,
        derive_seed(seed, &[tag::SUBSAMPLE]),
    )
}

fn effective_parameters(params: &NetworkParams) -> usize {
    let masked = params
        .split_mask
        .as_ref()
        .map_or(0, |m| m.as_slice().iter().filter(|&&x| x == 0.0).count());
    params.parameter_count() - masked
}

struct Trained<'a> {
    params: NetworkParams,
    plan: Option<SplitPlan>,
    stages: Vec<StageReport>,
    extra: BTreeMap<String, f64>,
    train: &'a Dataset,
}

fn evaluate(
    config: &ExperimentConfig,
    spec: &NetworkSpec,
    data: &DataSplit,
    t: Trained<'_>,
    seed: u64,
) -> Result<ModelResult> {
    let eval = eval_metrics(spec, &t.params, &data.test, t.plan.as_ref(), data.test_cells.as_deref())?;
    let train_eval = eval_metrics(spec, &t.params, t.train, None, None)?;
    let mut metrics = t.extra;
    metrics.insert("test_accuracy".into(), eval.overall);
    metrics.insert("train_accuracy".into(), train_eval.overall);
    for cell in eval.per_cell.iter().flatten() {
        metrics.insert(format!("cell_{}", cell.name), cell.accuracy);
    }
    let flatness = if config.kind == ExperimentKind::Flatness {
        let curve = flatness_probe(
            spec,
            &t.params,
            t.train,
            &config.flatness.sigmas,
            config.flatness.trials,
            derive_seed(seed, &[tag::FLATNESS]),
        )?;
        metrics.insert(
            "flatness_at_max_sigma".into(),
            *curve.mean_accuracy.last().expect("sigma grid is nonempty"),
        );
        Some(curve)
    } else {
        None
    };
    let compression = if config.kind == ExperimentKind::Compression {
        let report = compression_probe(spec, &t.params, t.train, &config.compression, seed)?;
        metrics.insert("random_label_accuracy".into(), report.accuracy);
        Some(report)
    } else {
        None
    };
    Ok(ModelResult {
        metrics,
        eval,
        stages: t.stages,
        plan: t.plan,
        flatness,
        compression,
        train_samples: t.train.len(),
        train_class_counts: t.train.class_counts(),
        effective_parameters: effective_parameters(&t.params),
    })
}

fn network_spec(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<NetworkSpec> {
    NetworkSpec::relu_trunk(train.input_dim(), &config.network.hidden, train.classes(), seed)
}

fn run_baseline(config: &ExperimentConfig, data: &DataSplit, train: &Dataset, seed: u64) -> Result<ModelResult> {
    let spec = network_spec(config, train, seed)?;
    let (params, report) = train_baseline(&spec, train, None, &config.train, seed)?;
    let t = Trained {
        params,
        plan: None,
        stages: vec![report],
        extra: BTreeMap::new(),
        train,
    };
    evaluate(config, &spec, data, t, seed)
}

fn run_pc_ann(config: &ExperimentConfig, data: &DataSplit, train: &Dataset, seed: u64) -> Result<ModelResult> {
    let spec = network_spec(config, train, seed)?;
    let (s1, s2) = config.split.stage_configs(&config.train);
    let out = train_two_stage(&spec, train, None, &s1, &s2, &config.split.stage1_options(), seed)?;
    let probs = assignment_probs(&out.assignment)?;
    let mut extra = BTreeMap::new();
    extra.insert("final_disjoint".into(), reg_disjoint(&probs.features, &probs.classes)?);
    extra.insert("mean_max_probability".into(), mean_max_probability(&probs));
    if let Some(truth) = &data.ground_truth {
        extra.insert(
            "partition_recovered".into(),
            f64::from(u8::from(out.plan.class_partition_matches(truth))),
        );
    }
    let t = Trained {
        params: out.params,
        plan: Some(out.plan),
        stages: vec![out.stage1, out.stage2],
        extra,
        train,
    };
    evaluate(config, &spec, data, t, seed)
}

fn run_seed(config: &ExperimentConfig, cell: &GridCell, data: &Result<DataSplit>, seed: u64) -> SeedResult {
    let models = match data {
        Err(e) => failed_models(e),
        Ok(split) => match cell_train_data(config, cell, &split.train, seed) {
            Err(e) => failed_models(&e),
            Ok(train) => BTreeMap::from([
                (
                    BASELINE.to_string(),
                    ModelOutcome::from_result(run_baseline(config, split, &train, seed)),
                ),
                (
                    PC_ANN.to_string(),
                    ModelOutcome::from_result(run_pc_ann(config, split, &train, seed)),
                ),
            ]),
        },
    };
    SeedResult { seed, models }
}

fn failed_models(e: &Error) -> BTreeMap<String, ModelOutcome> {
    [BASELINE, PC_ANN]
        .into_iter()
        .map(|m| {
            (
                m.to_string(),
                ModelOutcome {
                    result: None,
                    error: Some(e.to_string()),
                },
            )
        })
        .collect()
}

/// Trains baseline and PC-ANN for every grid cell and seed. Failures are
/// recorded in the affected cell; the grid always completes.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let hash = config.hash();
    let data: Vec<Result<DataSplit>> = config.seeds.iter().map(|&s| config.dataset.materialize(s)).collect();
    let mut reports = Vec::new();
    for (grid_index, cell) in grid_cells(config).into_iter().enumerate() {
        let started = Instant::now();
        let seeds: Vec<SeedResult> = config
            .seeds
            .iter()
            .zip(&data)
            .map(|(&seed, d)| run_seed(config, &cell, d, seed))
            .collect();
        let failures = seeds
            .iter()
            .flat_map(|s| s.models.values())
            .filter(|m| m.error.is_some())
            .count();
        reports.push(RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            artifact_version: ARTIFACT_VERSION.to_string(),
            config_hash: hash.clone(),
            experiment: config.name.clone(),
            kind: config.kind,
            grid_axis: config.kind.grid_axis().to_string(),
            grid_index,
            grid_label: cell.label.clone(),
            aggregate: aggregate(&seeds),
            seeds,
            failures,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<RunReport>,
    pub report_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    /// Failed (seed, model) entries over the whole grid.
    pub failures: usize,
}

pub fn report_file_name(report: &RunReport) -> String {
    let label: String = report
        .grid_label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{}_{}.json", report.grid_axis, label)
}

/// Runs the grid and writes `config.json`, one report per grid cell and
/// `summary.csv` into `out`. Existing outputs are only replaced with `force`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, force: bool) -> Result<RunOutcome> {
    config.validate()?;
    let summary_path = out.join("summary.csv");
    if !force && summary_path.exists() {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            summary_path.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    let reports = run_grid(config)?;
    std::fs::write(out.join("config.json"), config.to_json()?)?;
    let mut report_paths = Vec::new();
    for r in &reports {
        let path = out.join(report_file_name(r));
        std::fs::write(&path, serde_json::to_string_pretty(r)?)?;
        report_paths.push(path);
    }
    std::fs::write(&summary_path, summary_csv(&reports))?;
    let failures = reports.iter().map(|r| r.failures).sum();
    Ok(RunOutcome {
        reports,
        report_paths,
        summary_path,
        failures,
    })
}
