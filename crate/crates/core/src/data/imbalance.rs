//! Power-law class sizes `n_c = round(a / (c^{−γ} + b))`, `c = 1..K`, with
//! `a`, `b` fitted so that `n_1 = n_min` and `n_K = n_max`.
//!
//! The index is shifted by one relative to the `(c−1)^{−γ}` form, which
//! diverges at `c = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub gamma: f64,
    pub n_max: usize,
    pub n_min: usize,
    pub classes: usize,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Input(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.classes < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.n_min < 1 || self.n_max <= self.n_min {
            return Err(Error::Input(format!(
                "need n_max > n_min >= 1, got ({}, {})",
                self.n_max, self.n_min
            )));
        }
        Ok(())
    }

    /// Offsets `(a, b)` from the two endpoint constraints.
    pub fn offsets(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let (lo, hi) = (self.n_min as f64, self.n_max as f64);
        let tail = (self.classes as f64).powf(-self.gamma);
        let b = (lo - hi * tail) / (hi - lo);
        let a = lo * (1.0 + b);
        // c^{−γ} + b is smallest at c = K.
        if !(a > 0.0 && tail + b > 0.0) {
            return Err(Error::Input(format!(
                "no positive-denominator solution for gamma={}, K={}, ({}, {})",
                self.gamma, self.classes, self.n_max, self.n_min
            )));
        }
        Ok((a, b))
    }

    pub fn counts(&self) -> Result<Vec<usize>> {
        let (a, b) = self.offsets()?;
        let k = self.classes;
        let mut counts: Vec<usize> = (1..=k)
            .map(|c| (a / ((c as f64).powf(-self.gamma) + b)).round_ties_even().max(1.0) as usize)
            .collect();
        counts[0] = self.n_min;
        counts[k - 1] = self.n_max;
        Ok(counts)
    }
}

pub fn imbalance_counts(classes: usize, gamma: f64, n_max: usize, n_min: usize) -> Result<Vec<usize>> {
    ImbalanceSpec {
        gamma,
        n_max,
        n_min,
        classes,
    }
    .counts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cifar10_bounds() {
        let spec = ImbalanceSpec {
            gamma: 1.0,
            n_max: 5000,
            n_min: 250,
            classes: 10,
        };
        let (a, b) = spec.offsets().unwrap();
        assert!((a - 236.842).abs() < 1e-3, "{a}");
        assert!((b + 0.052632).abs() < 1e-6, "{b}");
        let c = spec.counts().unwrap();
        assert_eq!((c[0], c[9], c[4]), (250, 5000, 1607));

        let c2 = imbalance_counts(10, 2.0, 5000, 250).unwrap();
        assert_eq!(c2[4], 3173);
    }

    #[test]
    fn invalid_inputs() {
        assert!(imbalance_counts(10, 0.0, 5000, 250).is_err());
        assert!(imbalance_counts(1, 1.0, 5000, 250).is_err());
        assert!(imbalance_counts(10, 1.0, 250, 250).is_err());
        assert!(imbalance_counts(10, 1.0, 250, 0).is_err());
    }

    proptest! {
        #[test]
        fn endpoints_exact_and_monotone(
            k in 2usize..120,
            gamma in 0.05f64..4.0,
            n_min in 1usize..300,
            extra in 1usize..6000,
        ) {
            let n_max = n_min + extra;
            let c = imbalance_counts(k, gamma, n_max, n_min).unwrap();
            prop_assert_eq!(c.len(), k);
            prop_assert_eq!(c[0], n_min);
            prop_assert_eq!(c[k - 1], n_max);
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.iter().all(|&n| n >= 1));
        }
    }
}
