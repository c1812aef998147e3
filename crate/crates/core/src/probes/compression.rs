use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::splitnet::{accuracy, fit};
use crate::tensor::{trunk_features, NetworkParams, NetworkSpec, TrainConfig};

pub const DEFAULT_HEAD: [usize; 2] = [400, 200];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HEAD.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// Final training accuracy of the head on the random labels.
    pub accuracy: f64,
    pub ones_fraction: f64,
    pub majority_fraction: f64,
    pub samples: usize,
    pub seed: u64,
}

/// How well a fresh MLP head fits fair-coin labels on frozen trunk features.
/// Lower accuracy means more compressed features.
///
/// The head's output layer starts at zero weights and log-prior biases, so
/// before any training it predicts the majority label.
pub fn compression_probe(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &Dataset,
    config: &CompressionConfig,
    seed: u64,
) -> Result<CompressionReport> {
    config.train.validate()?;
    if config.hidden.is_empty() {
        return Err(Error::Config("compression head needs at least one hidden layer".into()));
    }
    if data.len() < 2 * config.train.batch_size {
        return Err(Error::Config(format!(
            "compression probe needs at least {} samples, got {}",
            2 * config.train.batch_size,
            data.len()
        )));
    }
    let features = trunk_features(spec, params, &data.features)?;
    let mut coin = rng::stream(seed, &[tag::COMPRESSION_LABELS]);
    let labels: Vec<usize> = (0..data.len()).map(|_| usize::from(coin.random_bool(0.5))).collect();
    let ones = labels.iter().sum::<usize>();
    let n = labels.len();
    let head_data = Dataset::new(features, labels, 2, format!("random-labels(seed={seed})"))?;

    let head_spec = NetworkSpec::relu_trunk(
        spec.feature_dim(),
        &config.hidden,
        2,
        rng::derive_seed(seed, &[tag::COMPRESSION_HEAD]),
    )?;
    let mut head = NetworkParams::init(&head_spec)?;
    let out = head.split_mut();
    out.weight.scale_in_place(0.0);
    // A class that was never drawn would need a -inf bias; clamp at one count.
    out.bias = vec![((n - ones).max(1) as f64).ln(), (ones.max(1) as f64).ln()];
    fit(
        &head_spec,
        &mut head,
        &head_data,
        &config.train,
        rng::derive_seed(seed, &[tag::COMPRESSION_HEAD, tag::SHUFFLE]),
    )?;
    Ok(CompressionReport {
        hidden: config.hidden.clone(),
        epochs: config.train.epochs,
        accuracy: accuracy(&head_spec, &head, &head_data)?,
        ones_fraction: ones as f64 / n as f64,
        majority_fraction: ones.max(n - ones) as f64 / n as f64,
        samples: n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_hierarchical, HierarchicalSpec};

    fn data(n_per_class: usize) -> Dataset {
        let spec = HierarchicalSpec {
            n_per_class,
            ..HierarchicalSpec::default()
        };
        gen_hierarchical(&spec, 8).unwrap().dataset
    }

    #[test]
    fn zero_epochs_predict_majority() {
        let spec = NetworkSpec::relu_trunk(20, &[16], 4, 1).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        for seed in 0..5 {
            let cfg = CompressionConfig {
                train: TrainConfig {
                    epochs: 0,
                    ..TrainConfig::default()
                },
                ..CompressionConfig::default()
            };
            let r = compression_probe(&spec, &params, &data(40), &cfg, seed).unwrap();
            assert_eq!(r.hidden, vec![400, 200]);
            assert!((r.accuracy - r.majority_fraction).abs() <= 1e-12);
            // 3 binomial standard deviations around a fair coin
            let tol = 3.0 * (0.25 / r.samples as f64).sqrt();
            assert!((r.ones_fraction - 0.5).abs() <= tol);
        }
    }

    #[test]
    fn too_little_data_rejected() {
        let spec = NetworkSpec::relu_trunk(20, &[4], 4, 1).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        let r = compression_probe(&spec, &params, &data(10), &CompressionConfig::default(), 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
