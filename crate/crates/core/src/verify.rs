//! Fast self-check suite behind `popnet verify`: closed-form values,
//! finite-difference gradients and structural invariants on small random
//! instances. Runs in a few seconds.

use rand::Rng as _;
use serde::Serialize;

use crate::data::{gen_hierarchical, imbalance_counts, HierarchicalSpec};
use crate::error::Result;
use crate::grouping::{reg_gradients, reg_group_weight, reg_total, GroupAssignment, RegWeights};
use crate::probes::{compression_probe, flatness_probe, CompressionConfig};
use crate::rng;
use crate::splitnet::{apply_split, stage1_train, train_baseline, verify_partial_error, SplitPlan, Stage1Options};
use crate::tensor::{
    backward, finite_diff_check, forward, lr_schedule, softmax_xent, AdamState, Matrix, NetworkParams, NetworkSpec,
    TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_matrix(rows: usize, cols: usize, r: &mut rng::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn network_gradient() -> Result<(bool, String)> {
    let spec = NetworkSpec::relu_trunk(4, &[5, 3], 3, 11)?;
    let params = NetworkParams::init(&spec)?;
    let mut r = rng::stream(11, &[100]);
    let x = random_matrix(6, 4, &mut r);
    let labels = vec![0, 1, 2, 0, 1, 2];
    let pass = forward(&spec, &params, &x)?;
    let (_, dlogits) = softmax_xent(&pass.logits, &labels)?;
    let analytic = backward(&spec, &params, &pass, &dlogits)?.flatten();
    let mut probe = params.clone();
    let err = finite_diff_check(
        |theta| {
            probe.set_values(theta).expect("sized");
            let logits = forward(&spec, &probe, &x).expect("valid").logits;
            softmax_xent(&logits, &labels).expect("valid").0
        },
        &params.values(),
        &analytic,
        1e-6,
    )?;
    Ok((err < 1e-5, format!("max relative error {err:.2e}")))
}

fn regularizer_gradient() -> Result<(bool, String)> {
    let mut r = rng::stream(12, &[100]);
    let w = random_matrix(5, 4, &mut r);
    let assignment = GroupAssignment::new(random_matrix(2, 5, &mut r), random_matrix(2, 4, &mut r))?;
    let weights = RegWeights::default();
    let g = reg_gradients(&w, &assignment, &weights)?;
    let mut worst = 0.0f64;
    let eval = |w: &Matrix, a: &GroupAssignment| reg_total(w, a, &weights).expect("valid");
    worst = worst.max(finite_diff_check(
        |t| eval(&Matrix::new(5, 4, t.to_vec()).expect("sized"), &assignment),
        w.as_slice(),
        g.weight.as_slice(),
        1e-6,
    )?);
    worst = worst.max(finite_diff_check(
        |t| {
            let a = GroupAssignment::new(
                Matrix::new(2, 5, t.to_vec()).expect("sized"),
                assignment.class_logits.clone(),
            )
            .expect("valid");
            eval(&w, &a)
        },
        assignment.feature_logits.as_slice(),
        g.feature_logits.as_slice(),
        1e-6,
    )?);
    worst = worst.max(finite_diff_check(
        |t| {
            let a = GroupAssignment::new(
                assignment.feature_logits.clone(),
                Matrix::new(2, 4, t.to_vec()).expect("sized"),
            )
            .expect("valid");
            eval(&w, &a)
        },
        assignment.class_logits.as_slice(),
        g.class_logits.as_slice(),
        1e-6,
    )?);
    Ok((worst < 1e-5, format!("max relative error {worst:.2e}")))
}

fn worked_example() -> Result<(bool, String)> {
    let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])?;
    let hard = Matrix::identity(2);
    let v = reg_group_weight(&w, &hard, &hard, 0.0)?;
    Ok((v == 10.0, format!("R_W = {v}")))
}

fn closed_forms() -> Result<(bool, String)> {
    let (loss, _) = softmax_xent(&Matrix::from_rows(&[[1.0, 2.0]])?, &[1])?;
    let expected = (1.0 + (-1.0f64).exp()).ln();
    let mut theta = [0.0];
    let mut adam = AdamState::default();
    let config = TrainConfig::default();
    adam.step(&mut [(&mut theta[..], &[1.0][..])], &config, 0.0, 1e-4)?;
    let lr = [9, 10, 50].map(|e| lr_schedule(&config, e));
    let ok = (loss - expected).abs() < 1e-15
        && (theta[0] + 1e-4).abs() < 1e-12
        && (lr[0] - 1e-4).abs() < 1e-18
        && (lr[1] - 1e-5).abs() < 1e-18
        && (lr[2] - 1e-7).abs() < 1e-20;
    Ok((ok, format!("xent {loss:.6}, adam step {:.3e}, lr {lr:?}", theta[0])))
}

fn imbalance() -> Result<(bool, String)> {
    let counts = imbalance_counts(10, 1.0, 5000, 250)?;
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    let totals: Vec<usize> = [2.0, 1.0, 0.6, 0.2]
        .iter()
        .map(|&g| imbalance_counts(10, g, 5000, 250).map(|c| c.iter().sum()))
        .collect::<Result<_>>()?;
    let decreasing = totals.windows(2).all(|w| w[0] > w[1]);
    let ok = counts[0] == 250 && counts[9] == 5000 && monotone && decreasing && counts[4] == 1607;
    Ok((ok, format!("counts {counts:?}, totals {totals:?}")))
}

fn isolation() -> Result<(bool, String)> {
    let spec = NetworkSpec::relu_trunk(4, &[6], 4, 13)?;
    let params = NetworkParams::init(&spec)?;
    let plan = SplitPlan::new(2, vec![0, 0, 1, 1, 0, 1], vec![0, 1, 1, 0])?;
    let probe = random_matrix(5, 4, &mut rng::stream(13, &[100]));
    let masked = verify_partial_error(&spec, &apply_split(&params, &plan)?, &plan, &probe)?;
    let dense = verify_partial_error(&spec, &params, &plan, &probe)?;
    Ok((
        masked.passed() && !dense.gradient_ok,
        format!(
            "masked max FD {:.1e}, dense control violations {}",
            masked.max_fd_cross, dense.violation_count
        ),
    ))
}

fn small_data() -> Result<crate::data::Dataset> {
    let spec = HierarchicalSpec {
        n_per_class: 40,
        input_dim: 6,
        ..HierarchicalSpec::default()
    };
    let mut data = gen_hierarchical(&spec, 14)?.dataset;
    data.normalize_in_place()?;
    Ok(data)
}

fn degenerate_lambda() -> Result<(bool, String)> {
    let data = small_data()?;
    let spec = NetworkSpec::relu_trunk(6, &[8], 4, 14)?;
    let config = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let (base, _) = train_baseline(&spec, &data, None, &config, 14)?;
    let opts = Stage1Options {
        reg: RegWeights::zero(),
        ..Stage1Options::default()
    };
    let s1 = stage1_train(&spec, &data, None, &config, &opts, 14)?;
    let same = base
        .values()
        .iter()
        .zip(s1.params.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, "stage 1 with zero weights vs baseline".into()))
}

fn probes() -> Result<(bool, String)> {
    let data = small_data()?;
    let spec = NetworkSpec::relu_trunk(6, &[8], 4, 15)?;
    let params = NetworkParams::init(&spec)?;
    let before = params.values();
    let curve = flatness_probe(&spec, &params, &data, &[0.0, 0.1], 5, 15)?;
    let restored = params.values() == before;
    let flat_ok = curve.mean_accuracy[0] == curve.unperturbed_accuracy && curve.std_accuracy[0] == 0.0;
    let compression = compression_probe(
        &spec,
        &params,
        &data,
        &CompressionConfig {
            train: TrainConfig {
                epochs: 0,
                batch_size: 16,
                ..TrainConfig::default()
            },
            ..CompressionConfig::default()
        },
        15,
    )?;
    let comp_ok =
        (compression.accuracy - compression.majority_fraction).abs() < 1e-12 && compression.hidden == [400, 200];
    Ok((
        restored && flat_ok && comp_ok,
        format!(
            "flatness at sigma 0 {:.4}, zero-epoch compression {:.4} vs majority {:.4}",
            curve.mean_accuracy[0], compression.accuracy, compression.majority_fraction
        ),
    ))
}

/// Runs every check; never panics on a failing check.
pub fn run_checks() -> Vec<Check> {
    vec![
        check("network_gradient", network_gradient),
        check("regularizer_gradient", regularizer_gradient),
        check("worked_example", worked_example),
        check("closed_forms", closed_forms),
        check("imbalance_counts", imbalance),
        check("split_isolation", isolation),
        check("degenerate_lambda", degenerate_lambda),
        check("probes", probes),
    ]
}
