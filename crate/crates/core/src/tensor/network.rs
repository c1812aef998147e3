//! Dense feed-forward network: a shared trunk of fully connected layers
//! followed by one linear split layer that maps the `D` trunk features to
//! `K` class logits.
//!
//! The split layer may carry a binary mask. When it does, the layer computes
//! with `W ⊙ mask`, so masked connections are structurally absent: they do not
//! influence the logits and receive exactly zero gradient.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::optim::{lr_schedule, AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLayerSpec {
    /// Trunk output width `D`.
    pub feature_dim: usize,
    /// Number of classes `K`.
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub trunk: Vec<LayerSpec>,
    pub split: SplitLayerSpec,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, trunk: Vec<LayerSpec>, classes: usize, seed: u64) -> Result<Self> {
        let feature_dim = trunk.last().map_or(input_dim, |l| l.width);
        let spec = Self {
            input_dim,
            trunk,
            split: SplitLayerSpec { feature_dim, classes },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Convenience constructor: ReLU trunk with the given widths.
    pub fn relu_trunk(input_dim: usize, widths: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let trunk = widths
            .iter()
            .map(|&width| LayerSpec {
                width,
                activation: Activation::Relu,
            })
            .collect();
        Self::new(input_dim, trunk, classes, seed)
    }

    pub fn feature_dim(&self) -> usize {
        self.split.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.split.classes
    }

    /// (fan_in, fan_out) for every layer, split layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.trunk.len() + 1);
        let mut fan_in = self.input_dim;
        for l in &self.trunk {
            shapes.push((fan_in, l.width));
            fan_in = l.width;
        }
        shapes.push((self.split.feature_dim, self.split.classes));
        shapes
    }

    pub fn activation(&self, layer: usize) -> Activation {
        self.trunk.get(layer).map_or(Activation::Identity, |l| l.activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if let Some((i, _)) = self.trunk.iter().enumerate().find(|(_, l)| l.width == 0) {
            return Err(Error::Config(format!("trunk layer {i} has zero width")));
        }
        let trunk_out = self.trunk.last().map_or(self.input_dim, |l| l.width);
        if trunk_out != self.split.feature_dim {
            return Err(Error::dim(
                "split layer feature dimension (trunk output width)",
                trunk_out,
                self.split.feature_dim,
            ));
        }
        if self.split.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.split.classes
            )));
        }
        Ok(())
    }

    /// Checks that a `groups`-way split of the final layer is feasible.
    pub fn validate_groups(&self, groups: usize) -> Result<()> {
        self.validate()?;
        if groups < 2 || groups > self.feature_dim().min(self.classes()) {
            return Err(Error::Config(format!(
                "group count {groups} must lie in [2, min(D={}, K={})]",
                self.feature_dim(),
                self.classes()
            )));
        }
        Ok(())
    }
}

/// Weight `(fan_in × fan_out)` and bias of one fully connected layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Trunk layers followed by the split layer.
    pub layers: Vec<Dense>,
    /// Binary `D × K` mask on the split layer, present once a split is applied.
    #[serde(default)]
    pub split_mask: Option<Matrix>,
    #[serde(default)]
    pub optimizer: AdamState,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, drawn from `spec.seed`.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, &[tag::INIT]);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
                Dense {
                    weight,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            split_mask: None,
            optimizer: AdamState::default(),
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense {
                weight: Matrix::zeros(i, o),
                bias: vec![0.0; o],
            })
            .collect();
        Self {
            layers,
            split_mask: None,
            optimizer: AdamState::default(),
        }
    }

    pub fn split(&self) -> &Dense {
        self.layers.last().expect("network has a split layer")
    }

    pub fn split_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("network has a split layer")
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::dim("layer count", shapes.len(), self.layers.len()));
        }
        for (i, ((fi, fo), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.weight.shape() != (*fi, *fo) || layer.bias.len() != *fo {
                return Err(Error::dim(
                    format!("layer {i}"),
                    format!("{fi}x{fo} weight, {fo} bias"),
                    format!(
                        "{}x{} weight, {} bias",
                        layer.weight.rows(),
                        layer.weight.cols(),
                        layer.bias.len()
                    ),
                ));
            }
        }
        if let Some(mask) = &self.split_mask {
            mask.check_same_shape(&self.split().weight, "split mask")?;
        }
        Ok(())
    }

    /// Split-layer weight as seen by the forward pass.
    pub fn effective_split_weight(&self) -> Matrix {
        let w = &self.split().weight;
        match &self.split_mask {
            None => w.clone(),
            Some(mask) => Matrix::from_fn(w.rows(), w.cols(), |i, j| {
                if mask.get(i, j) == 0.0 {
                    0.0
                } else {
                    w.get(i, j)
                }
            }),
        }
    }

    /// Every trainable scalar in layer order (weight row-major, then bias).
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::dim("parameter vector", self.parameter_count(), values.len()));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&values[offset..offset + w.len()]);
            offset += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// One Adam update with the learning rate scheduled for `epoch`.
    pub fn adam_step(&mut self, grads: &Gradients, config: &TrainConfig, epoch: usize) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("gradient layers", self.layers.len(), grads.layers.len()));
        }
        let lr = lr_schedule(config, epoch);
        let mut pairs: Vec<(&mut [f64], &[f64])> = Vec::with_capacity(2 * self.layers.len());
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.check_same_shape(&g.weight, "weight gradient")?;
            pairs.push((l.weight.as_mut_slice(), g.weight.as_slice()));
            pairs.push((l.bias.as_mut_slice(), g.bias.as_slice()));
        }
        self.optimizer.step(&mut pairs, config, config.weight_decay, lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn split(&self) -> &DenseGrad {
        self.layers.last().expect("split layer gradient")
    }

    pub fn split_mut(&mut self) -> &mut DenseGrad {
        self.layers.last_mut().expect("split layer gradient")
    }

    /// Flattened in the same order as [`NetworkParams::values`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Inputs to every layer plus the logits; consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `activations[l]` is the input of layer `l`; the last entry is the
    /// trunk output feeding the split layer.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardPass {
    pub fn features(&self) -> &Matrix {
        self.activations.last().expect("at least the input is retained")
    }
}

fn dense_forward(input: &Matrix, weight: &Matrix, bias: &[f64], act: Activation, layer: usize) -> Result<Matrix> {
    if input.cols() != weight.rows() {
        return Err(Error::dim(
            format!("layer {layer} input width"),
            weight.rows(),
            input.cols(),
        ));
    }
    let mut z = input.matmul(weight)?;
    z.add_row_vector(bias)?;
    if act == Activation::Relu {
        z = z.map(|x| act.apply(x));
    }
    Ok(z)
}

pub fn forward(spec: &NetworkSpec, params: &NetworkParams, batch: &Matrix) -> Result<ForwardPass> {
    params.check_shapes(spec)?;
    if batch.cols() != spec.input_dim {
        return Err(Error::dim("layer 0 input width", spec.input_dim, batch.cols()));
    }
    let mut activations = Vec::with_capacity(params.layers.len());
    let mut current = batch.clone();
    for (l, layer) in params.trunk().iter().enumerate() {
        let next = dense_forward(&current, &layer.weight, &layer.bias, spec.activation(l), l)?;
        activations.push(std::mem::replace(&mut current, next));
    }
    let split_idx = params.layers.len() - 1;
    let w = params.effective_split_weight();
    let logits = dense_forward(&current, &w, &params.split().bias, Activation::Identity, split_idx)?;
    activations.push(current);
    Ok(ForwardPass { activations, logits })
}

/// Trunk output (penultimate features) only.
pub fn trunk_features(spec: &NetworkSpec, params: &NetworkParams, batch: &Matrix) -> Result<Matrix> {
    Ok(forward(spec, params, batch)?.activations.pop().expect("trunk output"))
}

pub fn predict(spec: &NetworkSpec, params: &NetworkParams, batch: &Matrix) -> Result<Vec<usize>> {
    Ok(forward(spec, params, batch)?.logits.argmax_rows())
}

pub fn backward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    pass: &ForwardPass,
    grad_logits: &Matrix,
) -> Result<Gradients> {
    params.check_shapes(spec)?;
    let n_layers = params.layers.len();
    if pass.activations.len() != n_layers {
        return Err(Error::State(format!(
            "forward pass holds {} activations, network has {n_layers} layers",
            pass.activations.len()
        )));
    }
    for (l, (a, layer)) in pass.activations.iter().zip(&params.layers).enumerate() {
        if a.cols() != layer.weight.rows() || a.rows() != grad_logits.rows() {
            return Err(Error::State(format!(
                "activation {l} is {}x{}, expected {}x{}; forward pass is stale",
                a.rows(),
                a.cols(),
                grad_logits.rows(),
                layer.weight.rows()
            )));
        }
    }
    if grad_logits.shape() != pass.logits.shape() {
        return Err(Error::State("logit gradient does not match forward pass logits".into()));
    }

    let mut grads: Vec<DenseGrad> = Vec::with_capacity(n_layers);
    let mut delta = grad_logits.clone();
    for l in (0..n_layers).rev() {
        let input = &pass.activations[l];
        let mut dw = input.t_matmul(&delta)?;
        let db = delta.column_sums();
        let is_split = l == n_layers - 1;
        let weight = if is_split {
            if let Some(mask) = &params.split_mask {
                for (g, &m) in dw.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    if m == 0.0 {
                        *g = 0.0;
                    }
                }
            }
            params.effective_split_weight()
        } else {
            params.layers[l].weight.clone()
        };
        grads.push(DenseGrad { weight: dw, bias: db });
        if l == 0 {
            break;
        }
        let mut d_input = delta.matmul_t(&weight)?;
        // `input` is the post-activation output of layer l-1.
        if spec.activation(l - 1) == Activation::Relu {
            for (d, &a) in d_input.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        delta = d_input;
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetworkSpec {
        NetworkSpec::relu_trunk(4, &[6, 5], 3, 11).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::relu_trunk(4, &[6], 1, 0).is_err());
        let mut s = small_spec();
        s.split.feature_dim = 4;
        assert!(s.validate().is_err());
        let s = small_spec();
        assert!(s.validate_groups(2).is_ok());
        assert!(s.validate_groups(4).is_err());
        assert!(s.validate_groups(1).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let spec = small_spec();
        let params = NetworkParams::zeros(&spec);
        let x = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let pass = forward(&spec, &params, &x).unwrap();
        assert!(pass.logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_trunk_composes() {
        let trunk = vec![LayerSpec {
            width: 3,
            activation: Activation::Identity,
        }];
        let spec = NetworkSpec::new(3, trunk, 2, 0).unwrap();
        let mut params = NetworkParams::zeros(&spec);
        params.layers[0].weight = Matrix::identity(3);
        let w = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [-1.0, 1.0]]).unwrap();
        params.layers[1].weight = w.clone();
        params.layers[1].bias = vec![0.25, -0.75];
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]]).unwrap();
        let mut expected = x.matmul(&w).unwrap();
        expected.add_row_vector(&[0.25, -0.75]).unwrap();
        assert_eq!(forward(&spec, &params, &x).unwrap().logits, expected);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = small_spec();
        let params = NetworkParams::init(&spec).unwrap();
        let err = forward(&spec, &params, &Matrix::zeros(2, 5)).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");

        let mut broken = params.clone();
        broken.layers[1].weight = Matrix::zeros(6, 4);
        let err = forward(&spec, &broken, &Matrix::zeros(2, 4)).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn random_net_shapes_and_determinism() {
        let spec = NetworkSpec::relu_trunk(7, &[9, 8, 6], 4, 3).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        let x = Matrix::from_fn(5, 7, |i, j| ((i * 7 + j) as f64).sin());
        let a = forward(&spec, &params, &x).unwrap();
        let b = forward(&spec, &params, &x).unwrap();
        assert_eq!(a.logits.shape(), (5, 4));
        assert!(a.logits.is_finite());
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits));
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let spec = small_spec();
        let params = NetworkParams::init(&spec).unwrap();
        for ((fi, fo), l) in spec.layer_shapes().into_iter().zip(&params.layers) {
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= limit));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let spec = small_spec();
        let params = NetworkParams::init(&spec).unwrap();
        let x = Matrix::from_fn(4, 4, |i, j| (i as f64) - (j as f64));
        let pass = forward(&spec, &params, &x).unwrap();
        let g = backward(&spec, &params, &pass, &Matrix::zeros(4, 3)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_sum_loss() {
        let spec = NetworkSpec::new(3, vec![], 2, 5).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, -5.0, 6.0]]).unwrap();
        let pass = forward(&spec, &params, &x).unwrap();
        let g = backward(&spec, &params, &pass, &Matrix::filled(2, 2, 1.0)).unwrap();
        let expected = x.t_matmul(&Matrix::filled(2, 2, 1.0)).unwrap();
        assert_eq!(g.layers[0].weight, expected);
        assert_eq!(g.layers[0].bias, vec![2.0, 2.0]);
    }

    #[test]
    fn stale_activations_rejected() {
        let spec = small_spec();
        let params = NetworkParams::init(&spec).unwrap();
        let x = Matrix::zeros(3, 4);
        let mut pass = forward(&spec, &params, &x).unwrap();
        pass.activations.pop();
        let err = backward(&spec, &params, &pass, &Matrix::zeros(3, 3)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
