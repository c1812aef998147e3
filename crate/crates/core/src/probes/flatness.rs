use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mean_std;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::splitnet::accuracy;
use crate::tensor::{NetworkParams, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessCurve {
    pub sigmas: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub std_accuracy: Vec<f64>,
    pub trials_per_sigma: usize,
    pub seed: u64,
    /// Training accuracy of the unperturbed model.
    pub unperturbed_accuracy: f64,
}

fn perturb(params: &NetworkParams, sigma: f64, rng: &mut rng::Rng) -> NetworkParams {
    let noise = Normal::new(0.0, sigma).expect("sigma validated as finite and nonnegative");
    let mut out = params.clone();
    let last = out.layers.len() - 1;
    let mask = out.split_mask.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let w = layer.weight.as_mut_slice();
        for (idx, x) in w.iter_mut().enumerate() {
            let masked = l == last && mask.as_ref().is_some_and(|m| m.as_slice()[idx] == 0.0);
            let eps = noise.sample(rng);
            if !masked {
                *x += eps;
            }
        }
        for b in &mut layer.bias {
            *b += noise.sample(rng);
        }
    }
    out
}

/// Training accuracy under i.i.d. Gaussian noise of absolute standard
/// deviation `sigma` on every trainable parameter (masked split weights are
/// structural zeros and stay zero). Trial `i` of sigma index `s` draws from
/// stream `(seed, [FLATNESS, s, i])`. The model itself is never modified.
pub fn flatness_probe(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &Dataset,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<FlatnessCurve> {
    params.check_shapes(spec)?;
    if trials == 0 {
        return Err(Error::Config("flatness trials must be >= 1".into()));
    }
    if sigmas.first() != Some(&0.0) {
        return Err(Error::Config("sigma grid must start at 0".into()));
    }
    if sigmas.iter().any(|s| !s.is_finite()) || sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("sigma grid must be finite and ascending".into()));
    }
    let unperturbed = accuracy(spec, params, data)?;
    let mut mean_accuracy = Vec::with_capacity(sigmas.len());
    let mut std_accuracy = Vec::with_capacity(sigmas.len());
    for (s, &sigma) in sigmas.iter().enumerate() {
        if sigma == 0.0 {
            mean_accuracy.push(unperturbed);
            std_accuracy.push(0.0);
            continue;
        }
        let accs = (0..trials)
            .map(|i| {
                let mut r = rng::stream(seed, &[tag::FLATNESS, s as u64, i as u64]);
                accuracy(spec, &perturb(params, sigma, &mut r), data)
            })
            .collect::<Result<Vec<_>>>()?;
        let (m, sd) = mean_std(&accs);
        mean_accuracy.push(m);
        std_accuracy.push(sd);
    }
    Ok(FlatnessCurve {
        sigmas: sigmas.to_vec(),
        mean_accuracy,
        std_accuracy,
        trials_per_sigma: trials,
        seed,
        unperturbed_accuracy: unperturbed,
    })
}
