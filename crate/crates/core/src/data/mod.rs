//! Datasets: IDX ingestion, synthetic generators, imbalance and fractional
//! subsampling, batching with optional image augmentation, and a columnar
//! text export.

mod batch;
mod columnar;
mod idx;
mod imbalance;
mod sampling;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use batch::{augment_image, Augment, AugmentOutcome, Batch, BatchStream};
pub use columnar::{read_columnar, write_columnar, COLUMNAR_SCHEMA_VERSION};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use imbalance::{imbalance_counts, ImbalanceSpec};
pub use sampling::{subsample, SubsampleMode};
pub use synth::{
    gen_hierarchical, gen_shortcut, HierarchicalData, HierarchicalGeometry, HierarchicalSpec, ShortcutCell,
    ShortcutData, ShortcutSpec,
};

/// Per-feature standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Population mean and standard deviation of every column.
    pub fn fit(features: &Matrix) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Input("cannot fit normalization on an empty split".into()));
        }
        let mean: Vec<f64> = features.column_sums().into_iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; features.cols()];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// `(x − mean) / std`; constant columns are only centred.
    pub fn apply(&self, features: &mut Matrix) -> Result<()> {
        if features.cols() != self.mean.len() {
            return Err(Error::dim("normalization width", self.mean.len(), features.cols()));
        }
        for r in 0..features.rows() {
            for ((x, m), s) in features.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                let s = if *s > 0.0 { *s } else { 1.0 };
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Source descriptor, including the generation seed for synthetic data.
    pub provenance: String,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    /// `(height, width)` when each row is a single-channel image.
    #[serde(default)]
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, provenance: impl Into<String>) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
            provenance: provenance.into(),
            normalization: None,
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() {
            return Err(Error::dim(
                "label count vs feature rows",
                self.features.rows(),
                self.labels.len(),
            ));
        }
        let k = self.classes();
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Input(format!("label {l} at sample {i} outside [0, {k})")));
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != self.features.cols() {
                return Err(Error::dim("image shape", self.features.cols(), format!("{h}x{w}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            normalization: self.normalization.clone(),
            image_shape: self.image_shape,
        }
    }

    /// Fits normalization on `self` (a training split) and applies it.
    pub fn normalize_in_place(&mut self) -> Result<Normalization> {
        let stats = Normalization::fit(&self.features)?;
        stats.apply(&mut self.features)?;
        self.normalization = Some(stats.clone());
        Ok(stats)
    }

    /// Applies statistics fitted on a training split.
    pub fn apply_normalization(&mut self, stats: &Normalization) -> Result<()> {
        stats.apply(&mut self.features)?;
        self.normalization = Some(stats.clone());
        Ok(())
    }
}
