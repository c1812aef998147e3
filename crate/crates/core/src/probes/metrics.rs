use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ShortcutCell};
use crate::error::{Error, Result};
use crate::splitnet::SplitPlan;
use crate::tensor::{predict, NetworkParams, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAccuracy {
    pub cell: ShortcutCell,
    pub name: String,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub overall: f64,
    pub samples: usize,
    /// `None` for classes with no samples.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
    /// Accuracy over the samples whose true class belongs to each group.
    pub per_group: Option<Vec<Option<f64>>>,
    pub group_counts: Option<Vec<usize>>,
    /// Sorted by cell.
    pub per_cell: Option<Vec<CellAccuracy>>,
}

fn ratio(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

pub fn metrics_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
    plan: Option<&SplitPlan>,
    cells: Option<&[ShortcutCell]>,
) -> Result<MetricBundle> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("predictions vs labels", labels.len(), predictions.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    let n = labels.len();
    let mut class_hits = vec![0usize; classes];
    let mut class_counts = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        class_counts[l] += 1;
        class_hits[l] += usize::from(p == l);
    }
    let hits: usize = class_hits.iter().sum();

    let (per_group, group_counts) = match plan {
        None => (None, None),
        Some(plan) => {
            if plan.class_group().len() != classes {
                return Err(Error::dim("plan classes", classes, plan.class_group().len()));
            }
            let mut gh = vec![0usize; plan.groups()];
            let mut gc = vec![0usize; plan.groups()];
            for c in 0..classes {
                gh[plan.class_group()[c]] += class_hits[c];
                gc[plan.class_group()[c]] += class_counts[c];
            }
            (Some(gh.iter().zip(&gc).map(|(&h, &c)| ratio(h, c)).collect()), Some(gc))
        }
    };

    let per_cell = match cells {
        None => None,
        Some(cells) => {
            if cells.len() != n {
                return Err(Error::dim("cell annotations", n, cells.len()));
            }
            let mut tally = std::collections::BTreeMap::<ShortcutCell, (usize, usize)>::new();
            for ((&p, &l), cell) in predictions.iter().zip(labels).zip(cells) {
                if cell.label != l {
                    return Err(Error::Input(format!(
                        "cell annotation label {} disagrees with dataset label {l}",
                        cell.label
                    )));
                }
                let e = tally.entry(*cell).or_default();
                e.0 += usize::from(p == l);
                e.1 += 1;
            }
            Some(
                tally
                    .into_iter()
                    .map(|(cell, (h, c))| CellAccuracy {
                        cell,
                        name: cell.name(),
                        count: c,
                        accuracy: h as f64 / c as f64,
                    })
                    .collect(),
            )
        }
    };

    Ok(MetricBundle {
        overall: ratio(hits, n).unwrap_or(0.0),
        samples: n,
        per_class: class_hits
            .iter()
            .zip(&class_counts)
            .map(|(&h, &c)| ratio(h, c))
            .collect(),
        class_counts,
        per_group,
        group_counts,
        per_cell,
    })
}

pub fn eval_metrics(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &Dataset,
    plan: Option<&SplitPlan>,
    cells: Option<&[ShortcutCell]>,
) -> Result<MetricBundle> {
    data.validate()?;
    let predictions = predict(spec, params, &data.features)?;
    metrics_from_predictions(&predictions, &data.labels, data.classes(), plan, cells)
}
