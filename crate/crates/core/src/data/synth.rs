//! Synthetic generators with known structure.
//!
//! * Hierarchical: `S` supercluster centres at exact pairwise distance
//!   `inter_distance`, `K/S` class means per supercluster at distance
//!   `class_spread` from their centre, isotropic Gaussian samples around each
//!   class mean.
//! * Shortcut: binary labels carried weakly by `core_dim` overlapping
//!   Gaussian dimensions, plus a binary attribute carried perfectly by
//!   `shortcut_dim` dimensions. In training the attribute equals the label
//!   with probability `skew`; in test every (label, attribute) cell has
//!   exactly `n_test / 4` samples.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::tensor::Matrix;

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn orthonormal_set(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchicalSpec {
    pub classes: usize,
    pub superclusters: usize,
    pub input_dim: usize,
    pub n_per_class: usize,
    pub intra_sigma: f64,
    pub inter_distance: f64,
    /// Distance of each class mean from its supercluster centre; defaults to
    /// `0.375 · inter_distance`.
    pub class_spread: Option<f64>,
}

impl Default for HierarchicalSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            superclusters: 2,
            input_dim: 20,
            n_per_class: 500,
            intra_sigma: 0.5,
            inter_distance: 4.0,
            class_spread: None,
        }
    }
}

impl HierarchicalSpec {
    pub fn class_spread(&self) -> f64 {
        self.class_spread.unwrap_or(0.375 * self.inter_distance)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.superclusters;
        if s == 0 || self.classes < 2 || self.classes % s != 0 {
            return Err(Error::Input(format!(
                "classes ({}) must be >= 2 and divisible by superclusters ({s})",
                self.classes
            )));
        }
        if !(self.inter_distance > 0.0) || !(self.intra_sigma >= 0.0) || !(self.class_spread() >= 0.0) {
            return Err(Error::Input(
                "need inter_distance > 0, intra_sigma >= 0 and class_spread >= 0".into(),
            ));
        }
        if s > self.input_dim {
            return Err(Error::Input(format!(
                "cannot place {s} equidistant supercluster centres in {} dimensions",
                self.input_dim
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::Input("n_per_class must be positive".into()));
        }
        Ok(())
    }

    /// Supercluster of class `c`: classes are laid out in contiguous blocks.
    pub fn supercluster_of(&self, class: usize) -> usize {
        class / (self.classes / self.superclusters)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalGeometry {
    pub centers: Vec<Vec<f64>>,
    pub class_means: Vec<Vec<f64>>,
    pub intra_sigma: f64,
}

impl HierarchicalGeometry {
    pub fn build(spec: &HierarchicalSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let radius = spec.inter_distance / std::f64::consts::SQRT_2;
        let centers: Vec<Vec<f64>> = orthonormal_set(spec.superclusters, spec.input_dim, rng)
            .into_iter()
            .map(|u| u.into_iter().map(|x| x * radius).collect())
            .collect();
        let spread = spec.class_spread();
        let class_means = (0..spec.classes)
            .map(|c| {
                let center = &centers[spec.supercluster_of(c)];
                let dir = unit_vector(spec.input_dim, rng);
                center.iter().zip(dir).map(|(m, d)| m + spread * d).collect()
            })
            .collect();
        Ok(Self {
            centers,
            class_means,
            intra_sigma: spec.intra_sigma,
        })
    }

    /// Class-major samples: `n_per_class` rows of class 0, then class 1, ...
    pub fn sample(&self, n_per_class: usize, rng: &mut Rng) -> (Matrix, Vec<usize>) {
        let k = self.class_means.len();
        let dim = self.class_means[0].len();
        let mut data = Vec::with_capacity(k * n_per_class * dim);
        let mut labels = Vec::with_capacity(k * n_per_class);
        for (c, mean) in self.class_means.iter().enumerate() {
            for _ in 0..n_per_class {
                data.extend(mean.iter().map(|m| m + self.intra_sigma * gaussian(rng)));
                labels.push(c);
            }
        }
        (Matrix::new(k * n_per_class, dim, data).expect("sized"), labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalData {
    pub dataset: Dataset,
    /// Supercluster id of every class.
    pub ground_truth: Vec<usize>,
    pub geometry: HierarchicalGeometry,
    seed: u64,
}

impl HierarchicalData {
    /// Fresh samples from the same geometry (a held-out split).
    pub fn test_split(&self, n_per_class: usize) -> Dataset {
        let mut rng = rng::stream(self.seed, &[tag::DATA, 2]);
        let (features, labels) = self.geometry.sample(n_per_class, &mut rng);
        Dataset {
            features,
            labels,
            provenance: format!("{}:test", self.dataset.provenance),
            ..self.dataset.clone()
        }
    }
}

pub fn gen_hierarchical(spec: &HierarchicalSpec, seed: u64) -> Result<HierarchicalData> {
    let geometry = HierarchicalGeometry::build(spec, &mut rng::stream(seed, &[tag::DATA, 0]))?;
    let (features, labels) = geometry.sample(spec.n_per_class, &mut rng::stream(seed, &[tag::DATA, 1]));
    let dataset = Dataset::new(
        features,
        labels,
        spec.classes,
        format!(
            "hierarchical(K={},S={},dim={},sigma={},dist={},spread={};seed={seed})",
            spec.classes,
            spec.superclusters,
            spec.input_dim,
            spec.intra_sigma,
            spec.inter_distance,
            spec.class_spread()
        ),
    )?;
    Ok(HierarchicalData {
        dataset,
        ground_truth: (0..spec.classes).map(|c| spec.supercluster_of(c)).collect(),
        geometry,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShortcutSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub core_dim: usize,
    pub shortcut_dim: usize,
    /// Probability that the attribute equals the label in training.
    pub skew: f64,
    /// Per-dimension mean offset `±core_shift` of the unit-variance core
    /// dimensions.
    pub core_shift: f64,
    /// Mean offset `±shortcut_shift` of the shortcut dimensions.
    pub shortcut_shift: f64,
    pub shortcut_noise: f64,
}

impl Default for ShortcutSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            core_dim: 10,
            shortcut_dim: 2,
            skew: 1.0,
            core_shift: 0.25,
            shortcut_shift: 2.0,
            shortcut_noise: 0.1,
        }
    }
}

impl ShortcutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::Input(format!("skew must lie in [0, 1], got {}", self.skew)));
        }
        if self.n_test % 4 != 0 || self.n_test == 0 {
            return Err(Error::Input(format!(
                "n_test must be a positive multiple of 4, got {}",
                self.n_test
            )));
        }
        if self.n_train < 2 || self.core_dim == 0 || self.shortcut_dim == 0 {
            return Err(Error::Input("need n_train >= 2 and nonzero core/shortcut dims".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.core_dim + self.shortcut_dim
    }

    /// Column range holding the shortcut attribute.
    pub fn shortcut_columns(&self) -> std::ops::Range<usize> {
        self.core_dim..self.core_dim + self.shortcut_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShortcutCell {
    pub label: usize,
    pub attribute: usize,
}

impl ShortcutCell {
    pub fn congruent(&self) -> bool {
        self.label == self.attribute
    }

    pub fn name(&self) -> String {
        format!(
            "label{}_attr{}_{}",
            self.label,
            self.attribute,
            if self.congruent() { "congruent" } else { "incongruent" }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortcutData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_cells: Vec<ShortcutCell>,
    pub test_cells: Vec<ShortcutCell>,
}

fn shortcut_row(spec: &ShortcutSpec, cell: ShortcutCell, rng: &mut Rng, out: &mut Vec<f64>) {
    let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
    for _ in 0..spec.core_dim {
        out.push(sign(cell.label) * spec.core_shift + gaussian(rng));
    }
    for _ in 0..spec.shortcut_dim {
        out.push(sign(cell.attribute) * spec.shortcut_shift + spec.shortcut_noise * gaussian(rng));
    }
}

fn build_split(spec: &ShortcutSpec, cells: &[ShortcutCell], rng: &mut Rng, name: &str, seed: u64) -> Result<Dataset> {
    let mut data = Vec::with_capacity(cells.len() * spec.input_dim());
    for &cell in cells {
        shortcut_row(spec, cell, rng, &mut data);
    }
    let features = Matrix::new(cells.len(), spec.input_dim(), data)?;
    let mut ds = Dataset::new(
        features,
        cells.iter().map(|c| c.label).collect(),
        2,
        format!("shortcut(skew={};seed={seed}):{name}", spec.skew),
    )?;
    ds.class_names = vec!["negative".into(), "positive".into()];
    Ok(ds)
}

pub fn gen_shortcut(spec: &ShortcutSpec, seed: u64) -> Result<ShortcutData> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[tag::DATA, 3]);
    let train_cells: Vec<ShortcutCell> = (0..spec.n_train)
        .map(|i| {
            let label = i % 2;
            let attribute = if rng.random_bool(spec.skew) { label } else { 1 - label };
            ShortcutCell { label, attribute }
        })
        .collect();
    let quarter = spec.n_test / 4;
    let test_cells: Vec<ShortcutCell> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .into_iter()
        .flat_map(|(label, attribute)| std::iter::repeat_n(ShortcutCell { label, attribute }, quarter))
        .collect();
    let train = build_split(spec, &train_cells, &mut rng, "train", seed)?;
    let test = build_split(spec, &test_cells, &mut rng, "test", seed)?;
    Ok(ShortcutData {
        train,
        test,
        train_cells,
        test_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hierarchical_construction() {
        let spec = HierarchicalSpec::default();
        let data = gen_hierarchical(&spec, 1).unwrap();
        assert_eq!(data.dataset.len(), 2000);
        assert_eq!(data.dataset.class_counts(), vec![500; 4]);
        assert_eq!(data.ground_truth, vec![0, 0, 1, 1]);
        let g = &data.geometry;
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((dist(&g.centers[0], &g.centers[1]) - 4.0).abs() < 1e-9);
        for (c, mean) in g.class_means.iter().enumerate() {
            let d = dist(mean, &g.centers[spec.supercluster_of(c)]);
            assert!((d - 1.5).abs() < 1e-9);
        }
        assert_eq!(gen_hierarchical(&spec, 1).unwrap(), data);
        assert_ne!(gen_hierarchical(&spec, 2).unwrap().dataset, data.dataset);
    }

    #[test]
    fn hierarchical_rejects_bad_geometry() {
        let bad = [
            HierarchicalSpec {
                classes: 5,
                ..HierarchicalSpec::default()
            },
            HierarchicalSpec {
                inter_distance: 0.0,
                ..HierarchicalSpec::default()
            },
            HierarchicalSpec {
                superclusters: 4,
                classes: 8,
                input_dim: 3,
                ..HierarchicalSpec::default()
            },
        ];
        for spec in bad {
            assert!(matches!(gen_hierarchical(&spec, 0), Err(Error::Input(_))));
        }
    }

    #[test]
    fn hierarchical_test_split_shares_geometry() {
        let spec = HierarchicalSpec {
            n_per_class: 20,
            ..HierarchicalSpec::default()
        };
        let data = gen_hierarchical(&spec, 5).unwrap();
        let test = data.test_split(10);
        assert_eq!(test.len(), 40);
        assert_ne!(test.features.row(0), data.dataset.features.row(0));
    }

    #[test]
    fn fully_skewed_train_is_congruent() {
        let spec = ShortcutSpec::default();
        let data = gen_shortcut(&spec, 3).unwrap();
        assert!(data.train_cells.iter().all(ShortcutCell::congruent));
        let mut per_cell = std::collections::BTreeMap::new();
        for c in &data.test_cells {
            *per_cell.entry(*c).or_insert(0usize) += 1;
        }
        assert_eq!(per_cell.len(), 4);
        assert!(per_cell.values().all(|&n| n == spec.n_test / 4));
        assert_eq!(data.test.len(), spec.n_test);
    }

    #[test]
    fn partial_skew_mixes_cells() {
        let spec = ShortcutSpec {
            skew: 0.5,
            ..ShortcutSpec::default()
        };
        let data = gen_shortcut(&spec, 3).unwrap();
        let incongruent = data.train_cells.iter().filter(|c| !c.congruent()).count();
        let frac = incongruent as f64 / spec.n_train as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn shortcut_validation() {
        for spec in [
            ShortcutSpec {
                skew: 1.5,
                ..ShortcutSpec::default()
            },
            ShortcutSpec {
                n_test: 10,
                ..ShortcutSpec::default()
            },
        ] {
            assert!(gen_shortcut(&spec, 0).is_err());
        }
    }
}
