//! Two-stage split training.
//!
//! Stage 1 trains the network jointly with soft group assignments under the
//! group regularizer. The assignments are then hardened into a [`SplitPlan`],
//! the split layer is masked to its block-diagonal structure, and stage 2
//! finetunes the masked network with cross-entropy alone.

mod checkpoint;
mod isolation;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{assignment_probs, GroupAssignment};
use crate::tensor::{Matrix, NetworkParams};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use isolation::{verify_partial_error, IsolationCheck, IsolationReport, IsolationViolation};
pub(crate) use train::{accuracy, fit};
pub use train::{
    stage1_train, stage2_finetune, train_baseline, train_two_stage, EpochRecord, Stage1Options, Stage1Output,
    StageReport, TwoStageOutput,
};

/// Hard group membership of every feature and class of the split layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct SplitPlan {
    groups: usize,
    feature_group: Vec<usize>,
    class_group: Vec<usize>,
    block_mask: Matrix,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawPlan {
    groups: usize,
    feature_group: Vec<usize>,
    class_group: Vec<usize>,
}

impl TryFrom<RawPlan> for SplitPlan {
    type Error = Error;

    fn try_from(raw: RawPlan) -> Result<Self> {
        SplitPlan::new(raw.groups, raw.feature_group, raw.class_group)
    }
}

impl From<SplitPlan> for RawPlan {
    fn from(plan: SplitPlan) -> Self {
        RawPlan {
            groups: plan.groups,
            feature_group: plan.feature_group,
            class_group: plan.class_group,
        }
    }
}

impl SplitPlan {
    /// Validates that every id is in `[0, groups)` and every group owns at
    /// least one feature and one class.
    pub fn new(groups: usize, feature_group: Vec<usize>, class_group: Vec<usize>) -> Result<Self> {
        for (what, ids) in [("feature", &feature_group), ("class", &class_group)] {
            if let Some((i, &g)) = ids.iter().enumerate().find(|(_, &g)| g >= groups) {
                return Err(Error::Input(format!("{what} {i} assigned to group {g} of {groups}")));
            }
        }
        for g in 0..groups {
            if !feature_group.contains(&g) {
                return Err(Error::SplitInfeasible {
                    group: g,
                    what: "features",
                });
            }
            if !class_group.contains(&g) {
                return Err(Error::SplitInfeasible {
                    group: g,
                    what: "classes",
                });
            }
        }
        let block_mask = Matrix::from_fn(feature_group.len(), class_group.len(), |i, j| {
            if feature_group[i] == class_group[j] {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self {
            groups,
            feature_group,
            class_group,
            block_mask,
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn feature_group(&self) -> &[usize] {
        &self.feature_group
    }

    pub fn class_group(&self) -> &[usize] {
        &self.class_group
    }

    /// `D × K`, 1 where feature and class share a group.
    pub fn block_mask(&self) -> &Matrix {
        &self.block_mask
    }

    /// Group owning split weight `(feature, class)`, if any.
    pub fn owner(&self, feature: usize, class: usize) -> Option<usize> {
        let g = self.class_group[class];
        (self.feature_group[feature] == g).then_some(g)
    }

    pub fn classes_in(&self, group: usize) -> Vec<usize> {
        (0..self.class_group.len())
            .filter(|&j| self.class_group[j] == group)
            .collect()
    }

    /// Whether the class partition equals `truth` up to relabelling groups.
    pub fn class_partition_matches(&self, truth: &[usize]) -> bool {
        same_partition(&self.class_group, truth)
    }
}

/// True when `a` and `b` induce the same partition of their indices.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn argmax_columns(probs: &Matrix) -> Vec<usize> {
    (0..probs.cols())
        .map(|c| {
            let mut best = 0;
            for g in 1..probs.rows() {
                if probs.get(g, c) > probs.get(best, c) {
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Assigns each feature and class to its most probable group (ties go to
/// the lowest group index).
pub fn harden(assignment: &GroupAssignment) -> Result<SplitPlan> {
    assignment.validate()?;
    let probs = assignment_probs(assignment)?;
    SplitPlan::new(
        assignment.groups(),
        argmax_columns(&probs.features),
        argmax_columns(&probs.classes),
    )
}

/// Zeroes every off-block split weight and attaches the plan's mask. Trunk
/// layers, in-block weights and biases are copied unchanged.
pub fn apply_split(params: &NetworkParams, plan: &SplitPlan) -> Result<NetworkParams> {
    let split = params.split();
    if split.weight.shape() != plan.block_mask.shape() {
        return Err(Error::dim(
            "split plan vs split layer",
            format!("{}x{}", split.weight.rows(), split.weight.cols()),
            format!("{}x{}", plan.block_mask.rows(), plan.block_mask.cols()),
        ));
    }
    let mut out = params.clone();
    let w = &mut out.split_mut().weight;
    for (x, &m) in w.as_mut_slice().iter_mut().zip(plan.block_mask.as_slice()) {
        if m == 0.0 {
            *x = 0.0;
        }
    }
    out.split_mask = Some(plan.block_mask.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{forward, NetworkSpec};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn plan_mask_matches_groups() {
        let plan = SplitPlan::new(2, vec![0, 1, 1], vec![1, 0]).unwrap();
        assert_eq!(plan.block_mask(), &m(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(plan.owner(0, 1), Some(0));
        assert_eq!(plan.owner(0, 0), None);
        assert!(SplitPlan::new(2, vec![0, 0], vec![0, 1]).is_err());
        assert!(SplitPlan::new(2, vec![0, 3], vec![0, 1]).is_err());
    }

    #[test]
    fn harden_rules() {
        let feats = m(&[&[0.9f64.ln(), 0.0, 0.0], &[0.1f64.ln(), 0.0, 1.0]]);
        let classes = m(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let plan = harden(&GroupAssignment::new(feats, classes).unwrap()).unwrap();
        // [0.9, 0.1] -> 0; exact tie -> 0; clear preference -> 1
        assert_eq!(plan.feature_group(), &[0, 0, 1]);
        assert_eq!(plan.class_group(), &[0, 1]);

        let all_zero = GroupAssignment::new(m(&[&[1.0, -1.0], &[-1.0, 1.0]]), m(&[&[1.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!(matches!(
            harden(&all_zero),
            Err(Error::SplitInfeasible {
                group: 1,
                what: "classes"
            })
        ));
    }

    #[test]
    fn apply_split_masks_only_off_block() {
        let spec = NetworkSpec::relu_trunk(5, &[4], 3, 2).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        let plan = SplitPlan::new(2, vec![0, 0, 1, 1], vec![0, 1, 1]).unwrap();
        let split = apply_split(&params, &plan).unwrap();
        assert_eq!(split.trunk(), params.trunk());
        for i in 0..4 {
            for j in 0..3 {
                let after = split.split().weight.get(i, j);
                if plan.block_mask().get(i, j) == 0.0 {
                    assert_eq!(after.to_bits(), 0.0f64.to_bits());
                } else {
                    assert_eq!(after.to_bits(), params.split().weight.get(i, j).to_bits());
                }
            }
        }
        let bad = SplitPlan::new(2, vec![0, 1], vec![0, 1, 1]).unwrap();
        assert!(apply_split(&params, &bad).is_err());
    }

    #[test]
    fn logit_change_bounded_by_off_block_mass() {
        for seed in 0..20 {
            let spec = NetworkSpec::relu_trunk(6, &[8, 5], 4, seed).unwrap();
            let params = NetworkParams::init(&spec).unwrap();
            let plan = SplitPlan::new(2, vec![0, 1, 0, 1, 1], vec![1, 0, 0, 1]).unwrap();
            let masked = apply_split(&params, &plan).unwrap();
            let off_mass = params
                .split()
                .weight
                .as_slice()
                .iter()
                .zip(plan.block_mask().as_slice())
                .filter(|(_, &mk)| mk == 0.0)
                .map(|(w, _)| w * w)
                .sum::<f64>()
                .sqrt();
            let mut r = rng::stream(seed, &[99]);
            let x = Matrix::from_fn(10, 6, |_, _| rand::Rng::random_range(&mut r, -2.0..2.0));
            let before = forward(&spec, &params, &x).unwrap();
            let after = forward(&spec, &masked, &x).unwrap();
            let max_h = (0..10)
                .map(|n| before.features().row(n).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let max_change = before
                .logits
                .as_slice()
                .iter()
                .zip(after.logits.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_change <= off_mass * max_h + 1e-12);
        }
    }

    #[test]
    fn partition_comparison() {
        assert!(same_partition(&[0, 0, 1, 1], &[1, 1, 0, 0]));
        assert!(!same_partition(&[0, 1, 0, 1], &[0, 0, 1, 1]));
    }

    proptest! {
        #[test]
        fn harden_commutes_with_group_permutation(seed in any::<u64>(), shift in 1usize..3) {
            let mut r = rng::stream(seed, &[]);
            let a = GroupAssignment::random(3, 9, 6, 3.0, &mut r).unwrap();
            let perm: Vec<usize> = (0..3).map(|g| (g + shift) % 3).collect();
            let permute = |mat: &Matrix| {
                let mut out = Matrix::zeros(mat.rows(), mat.cols());
                for g in 0..mat.rows() {
                    out.row_mut(perm[g]).copy_from_slice(mat.row(g));
                }
                out
            };
            let b = GroupAssignment::new(permute(&a.feature_logits), permute(&a.class_logits)).unwrap();
            match (harden(&a), harden(&b)) {
                (Ok(pa), Ok(pb)) => {
                    let mapped: Vec<usize> = pa.feature_group().iter().map(|&g| perm[g]).collect();
                    prop_assert_eq!(mapped, pb.feature_group().to_vec());
                    let mapped: Vec<usize> = pa.class_group().iter().map(|&g| perm[g]).collect();
                    prop_assert_eq!(mapped, pb.class_group().to_vec());
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "feasibility must not depend on labelling"),
            }
        }
    }
}
