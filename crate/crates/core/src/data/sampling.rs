use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    /// Keep this fraction in `(0, 1]` of the data.
    Fraction(f64),
    /// Keep exactly this many samples of each class.
    PerClass(Vec<usize>),
}

/// Deterministic subset selection. Selected indices keep their original
/// relative order, so `Fraction(1.0)` is the identity.
///
/// Stratified fractions keep `round(p · n_c)` samples of class `c`
/// (ties to even); unstratified fractions draw `round(p · N)` samples
/// uniformly without replacement.
pub fn subsample(dataset: &Dataset, mode: &SubsampleMode, stratified: bool, seed: u64) -> Result<Dataset> {
    let by_class = dataset.indices_by_class();
    let mut selected: Vec<usize> = match mode {
        SubsampleMode::Fraction(p) => {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Input(format!("fraction must lie in (0, 1], got {p}")));
            }
            if stratified {
                let counts: Vec<usize> = by_class
                    .iter()
                    .map(|idx| (p * idx.len() as f64).round_ties_even() as usize)
                    .collect();
                take_per_class(&by_class, &counts, seed)?
            } else {
                let n = (p * dataset.len() as f64).round_ties_even() as usize;
                let mut all: Vec<usize> = (0..dataset.len()).collect();
                all.shuffle(&mut rng::stream(seed, &[tag::SUBSAMPLE]));
                all.truncate(n);
                all
            }
        }
        SubsampleMode::PerClass(counts) => {
            if counts.len() != dataset.classes() {
                return Err(Error::dim("per-class counts", dataset.classes(), counts.len()));
            }
            take_per_class(&by_class, counts, seed)?
        }
    };
    selected.sort_unstable();
    Ok(dataset.select(&selected))
}

fn take_per_class(by_class: &[Vec<usize>], counts: &[usize], seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (c, (pool, &want)) in by_class.iter().zip(counts).enumerate() {
        if want > pool.len() {
            return Err(Error::Input(format!(
                "class {c} has {} samples, {want} requested",
                pool.len()
            )));
        }
        let mut pool = pool.clone();
        pool.shuffle(&mut rng::stream(seed, &[tag::SUBSAMPLE, c as u64]));
        out.extend_from_slice(&pool[..want]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::imbalance_counts;
    use crate::tensor::Matrix;

    fn balanced(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(Matrix::from_fn(n, 1, |i, _| i as f64), labels, classes, "test").unwrap()
    }

    #[test]
    fn stratified_ten_percent() {
        let ds = balanced(100, 10);
        let sub = subsample(&ds, &SubsampleMode::Fraction(0.1), true, 3).unwrap();
        assert_eq!(sub.len(), 100);
        assert!(sub.class_counts().iter().all(|&c| c == 10));
    }

    #[test]
    fn full_fraction_is_identity() {
        let ds = balanced(7, 3);
        for stratified in [true, false] {
            let sub = subsample(&ds, &SubsampleMode::Fraction(1.0), stratified, 9).unwrap();
            assert_eq!(sub, ds);
        }
    }

    #[test]
    fn per_class_counts_realize_imbalance() {
        let ds = balanced(5000, 10);
        let counts = imbalance_counts(10, 1.0, 5000, 250).unwrap();
        let sub = subsample(&ds, &SubsampleMode::PerClass(counts.clone()), false, 1).unwrap();
        assert_eq!(sub.class_counts(), counts);
    }

    #[test]
    fn insufficient_class_named() {
        let ds = balanced(5, 3);
        let err = subsample(&ds, &SubsampleMode::PerClass(vec![5, 6, 1]), false, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = balanced(50, 4);
        let a = subsample(&ds, &SubsampleMode::Fraction(0.3), false, 5).unwrap();
        let b = subsample(&ds, &SubsampleMode::Fraction(0.3), false, 5).unwrap();
        let c = subsample(&ds, &SubsampleMode::Fraction(0.3), false, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert_ne!(a, c);
    }
}
