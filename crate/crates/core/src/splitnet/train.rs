use serde::{Deserialize, Serialize};

use super::{apply_split, harden, SplitPlan};
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::grouping::{
    assignment_entropy, assignment_probs, reg_gradients, reg_terms, GroupAssignment, RegTerms, RegWeights,
};
use crate::rng::{self, tag};
use crate::tensor::{backward, forward, lr_schedule, softmax_xent, AdamState, NetworkParams, NetworkSpec, TrainConfig};

/// Stream tags distinguishing the shuffling of each training phase. The
/// baseline shares stage 1's tag so that a stage-1 run with all weights zero
/// replays the baseline exactly.
const PHASE_STAGE1: u64 = 1;
const PHASE_STAGE2: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches (sample weighted).
    pub loss: f64,
    /// Regularizer components at the end of the epoch (stage 1 only).
    pub reg: Option<RegTerms>,
    pub assignment_entropy: Option<f64>,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub epochs: Vec<EpochRecord>,
    /// Plan hardened from the final assignment (stage 1), when feasible.
    pub plan: Option<SplitPlan>,
}

impl StageReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Options {
    pub groups: usize,
    pub reg: RegWeights,
    /// Standard deviation of the initial assignment logits.
    pub assignment_init_scale: f64,
    /// Assignment learning rate as a multiple of the scheduled network rate.
    pub assignment_lr_scale: f64,
    /// Adam epsilon for the assignment logits.
    pub assignment_epsilon: f64,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            groups: 2,
            reg: RegWeights::default(),
            assignment_init_scale: 0.01,
            assignment_lr_scale: 1.0,
            assignment_epsilon: 1e-8,
        }
    }
}

struct RegState<'a> {
    assignment: &'a mut GroupAssignment,
    optimizer: AdamState,
    weights: RegWeights,
    lr_scale: f64,
    config: TrainConfig,
}

pub(crate) fn accuracy(spec: &NetworkSpec, params: &NetworkParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = forward(spec, params, &data.features)?.logits.argmax_rows();
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

fn check_data(spec: &NetworkSpec, train: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    if train.input_dim() != spec.input_dim {
        return Err(Error::dim(
            "dataset width vs network input",
            spec.input_dim,
            train.input_dim(),
        ));
    }
    if train.classes() != spec.classes() {
        return Err(Error::dim(
            "dataset classes vs network classes",
            spec.classes(),
            train.classes(),
        ));
    }
    Ok(())
}

fn train_loop(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    mut reg: Option<RegState<'_>>,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    check_data(spec, train)?;
    let stream = BatchStream::new(train, config.batch_size, shuffle_seed, config.augment)?;
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let diverged = |e: Error| Error::Training {
            epoch,
            message: e.to_string(),
        };
        let mut loss_sum = 0.0;
        for batch in stream.epoch(epoch) {
            let pass = forward(spec, params, &batch.features)?;
            let (loss, grad_logits) = softmax_xent(&pass.logits, &batch.labels).map_err(diverged)?;
            let mut grads = backward(spec, params, &pass, &grad_logits)?;
            loss_sum += loss * batch.labels.len() as f64;

            let reg_grads = match reg.as_ref() {
                Some(r) => Some(reg_gradients(&params.split().weight, r.assignment, &r.weights).map_err(diverged)?),
                None => None,
            };
            if let (Some(r), Some(rg)) = (reg.as_ref(), reg_grads.as_ref()) {
                if r.weights.lambda1 != 0.0 {
                    grads.split_mut().weight.axpy(1.0, &rg.weight)?;
                }
            }
            params.adam_step(&grads, config, epoch).map_err(diverged)?;
            if let (Some(r), Some(rg)) = (reg.as_mut(), reg_grads) {
                let lr = r.lr_scale * lr_schedule(config, epoch);
                let a = &mut *r.assignment;
                let mut pairs: [(&mut [f64], &[f64]); 2] = [
                    (a.feature_logits.as_mut_slice(), rg.feature_logits.as_slice()),
                    (a.class_logits.as_mut_slice(), rg.class_logits.as_slice()),
                ];
                r.optimizer.step(&mut pairs, &r.config, 0.0, lr).map_err(diverged)?;
            }
        }
        let loss = loss_sum / train.len() as f64;
        if !loss.is_finite() {
            return Err(diverged(Error::Numeric("epoch loss".into())));
        }
        let (reg_record, entropy) = match reg.as_ref() {
            Some(r) => (
                Some(reg_terms(&params.split().weight, r.assignment, &r.weights)?),
                Some(assignment_entropy(&assignment_probs(r.assignment)?)),
            ),
            None => (None, None),
        };
        records.push(EpochRecord {
            epoch,
            loss,
            reg: reg_record,
            assignment_entropy: entropy,
            train_accuracy: accuracy(spec, params, train)?,
            validation_accuracy: validation.map(|v| accuracy(spec, params, v)).transpose()?,
        });
    }
    Ok(records)
}

/// Cross-entropy training of caller-initialized parameters.
pub(crate) fn fit(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    train: &Dataset,
    config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<Vec<EpochRecord>> {
    train_loop(spec, params, None, train, None, config, shuffle_seed)
}

/// Plain cross-entropy training of the unsplit network.
pub fn train_baseline(
    spec: &NetworkSpec,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(NetworkParams, StageReport)> {
    let mut params = NetworkParams::init(spec)?;
    let epochs = train_loop(
        spec,
        &mut params,
        None,
        train,
        validation,
        config,
        rng::derive_seed(seed, &[PHASE_STAGE1]),
    )?;
    Ok((params, StageReport { epochs, plan: None }))
}

#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub params: NetworkParams,
    pub assignment: GroupAssignment,
    pub report: StageReport,
}

/// Joint training of network weights and group assignments on mean
/// cross-entropy plus the group regularizer.
///
/// Network weights start from `spec.seed`; assignment logits and batch
/// order are drawn from `seed`.
pub fn stage1_train(
    spec: &NetworkSpec,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    options: &Stage1Options,
    seed: u64,
) -> Result<Stage1Output> {
    spec.validate_groups(options.groups)?;
    options.reg.validate()?;
    let mut params = NetworkParams::init(spec)?;
    let mut assignment = GroupAssignment::random(
        options.groups,
        spec.feature_dim(),
        spec.classes(),
        options.assignment_init_scale,
        &mut rng::stream(seed, &[tag::ASSIGNMENT]),
    )?;
    let epochs = train_loop(
        spec,
        &mut params,
        Some(RegState {
            assignment: &mut assignment,
            optimizer: AdamState::default(),
            weights: options.reg,
            lr_scale: options.assignment_lr_scale,
            config: TrainConfig {
                epsilon: options.assignment_epsilon,
                ..config.clone()
            },
        }),
        train,
        validation,
        config,
        rng::derive_seed(seed, &[PHASE_STAGE1]),
    )?;
    let plan = harden(&assignment).ok();
    Ok(Stage1Output {
        params,
        assignment,
        report: StageReport { epochs, plan },
    })
}

/// Cross-entropy finetuning of an already-masked network. Optimizer state is
/// reset and the learning-rate schedule restarts at epoch 0. Masked weights
/// get zero gradient on every step and so stay exactly zero.
pub fn stage2_finetune(
    spec: &NetworkSpec,
    params: &NetworkParams,
    plan: &SplitPlan,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(NetworkParams, StageReport)> {
    match &params.split_mask {
        Some(mask) if mask == plan.block_mask() => {}
        _ => return Err(Error::State("stage 2 requires params masked by the given plan".into())),
    }
    let off_block_nonzero = params
        .split()
        .weight
        .as_slice()
        .iter()
        .zip(plan.block_mask().as_slice())
        .any(|(&w, &m)| m == 0.0 && w != 0.0);
    if off_block_nonzero {
        return Err(Error::State("off-block split weights are not zero".into()));
    }
    let mut params = params.clone();
    params.optimizer.reset();
    let epochs = train_loop(
        spec,
        &mut params,
        None,
        train,
        validation,
        config,
        rng::derive_seed(seed, &[PHASE_STAGE2]),
    )?;
    Ok((
        params,
        StageReport {
            epochs,
            plan: Some(plan.clone()),
        },
    ))
}

#[derive(Clone, Debug)]
pub struct TwoStageOutput {
    pub params: NetworkParams,
    pub plan: SplitPlan,
    pub assignment: GroupAssignment,
    pub stage1: StageReport,
    pub stage2: StageReport,
}

/// Stage 1, hardening, masking and stage 2 in sequence. Fails with
/// [`Error::SplitInfeasible`] if a group ends up empty.
pub fn train_two_stage(
    spec: &NetworkSpec,
    train: &Dataset,
    validation: Option<&Dataset>,
    stage1_config: &TrainConfig,
    stage2_config: &TrainConfig,
    options: &Stage1Options,
    seed: u64,
) -> Result<TwoStageOutput> {
    let s1 = stage1_train(spec, train, validation, stage1_config, options, seed)?;
    let plan = harden(&s1.assignment)?;
    let masked = apply_split(&s1.params, &plan)?;
    let (params, stage2) = stage2_finetune(spec, &masked, &plan, train, validation, stage2_config, seed)?;
    Ok(TwoStageOutput {
        params,
        plan,
        assignment: s1.assignment,
        stage1: s1.report,
        stage2,
    })
}
