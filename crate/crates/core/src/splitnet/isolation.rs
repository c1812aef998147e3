use serde::{Deserialize, Serialize};

use super::SplitPlan;
use crate::error::{Error, Result};
use crate::tensor::{backward, forward, Matrix, NetworkParams, NetworkSpec};

const MAX_RECORDED: usize = 32;
const FORWARD_DELTA: f64 = 0.5;
const FD_STEP: f64 = 1e-6;
/// Largest finite-difference cross-group derivative still counted as zero.
pub const FD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolationCheck {
    Forward,
    Gradient,
    FiniteDifference,
}

/// A logit that responded to a split weight outside its own subtree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationViolation {
    pub check: IsolationCheck,
    /// Split weight `(feature, weight_class)` that was varied.
    pub feature: usize,
    pub weight_class: usize,
    /// Class whose logit changed.
    pub logit_class: usize,
    pub sample: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IsolationReport {
    pub forward_ok: bool,
    pub gradient_ok: bool,
    /// Largest central-difference derivative of a logit w.r.t. a split
    /// weight outside its group.
    pub max_fd_cross: f64,
    pub violation_count: usize,
    /// The first few violations of each check, in discovery order.
    pub violations: Vec<IsolationViolation>,
}

impl IsolationReport {
    pub fn fd_ok(&self) -> bool {
        self.max_fd_cross < FD_TOLERANCE
    }

    pub fn passed(&self) -> bool {
        self.forward_ok && self.gradient_ok && self.fd_ok()
    }

    fn record(&mut self, v: IsolationViolation) {
        self.violation_count += 1;
        let recorded = self.violations.iter().filter(|r| r.check == v.check).count();
        if recorded < MAX_RECORDED {
            self.violations.push(v);
        }
    }
}

/// Whether logit `class` is allowed to depend on split weight `(i, j)`.
fn owned_by_logit(plan: &SplitPlan, i: usize, j: usize, class: usize) -> bool {
    plan.owner(i, j) == Some(plan.class_group()[class])
}

/// Checks that every class logit depends only on the trunk and on split
/// weights owned by the class's group: by perturbing foreign weights
/// (bit-exact comparison), by analytic per-logit gradients (exact zeros) and
/// by central finite differences.
///
/// Violations are reported, not raised; an unmasked network is a valid input
/// and is expected to fail.
pub fn verify_partial_error(
    spec: &NetworkSpec,
    params: &NetworkParams,
    plan: &SplitPlan,
    probe: &Matrix,
) -> Result<IsolationReport> {
    params.check_shapes(spec)?;
    let (d, k) = params.split().weight.shape();
    if plan.block_mask().shape() != (d, k) {
        return Err(Error::dim(
            "split plan vs split layer",
            format!("{d}x{k}"),
            format!("{}x{}", plan.block_mask().rows(), plan.block_mask().cols()),
        ));
    }
    if probe.rows() == 0 {
        return Err(Error::Input("probe batch is empty".into()));
    }
    let n = probe.rows();
    let mut report = IsolationReport {
        forward_ok: true,
        gradient_ok: true,
        ..IsolationReport::default()
    };
    let base = forward(spec, params, probe)?;
    let mut work = params.clone();

    for i in 0..d {
        for j in 0..k {
            let original = work.split().weight.get(i, j);
            work.split_mut().weight.set(i, j, original + FORWARD_DELTA);
            let moved = forward(spec, &work, probe)?.logits;
            work.split_mut().weight.set(i, j, original + FD_STEP);
            let up = forward(spec, &work, probe)?.logits;
            work.split_mut().weight.set(i, j, original - FD_STEP);
            let down = forward(spec, &work, probe)?.logits;
            work.split_mut().weight.set(i, j, original);

            for class in (0..k).filter(|&c| !owned_by_logit(plan, i, j, c)) {
                for s in 0..n {
                    let before = base.logits.get(s, class);
                    let after = moved.get(s, class);
                    if before.to_bits() != after.to_bits() {
                        report.forward_ok = false;
                        report.record(IsolationViolation {
                            check: IsolationCheck::Forward,
                            feature: i,
                            weight_class: j,
                            logit_class: class,
                            sample: s,
                            magnitude: (after - before).abs(),
                        });
                    }
                    let fd = ((up.get(s, class) - down.get(s, class)) / (2.0 * FD_STEP)).abs();
                    if fd > report.max_fd_cross {
                        report.max_fd_cross = fd;
                    }
                    if fd >= FD_TOLERANCE {
                        report.record(IsolationViolation {
                            check: IsolationCheck::FiniteDifference,
                            feature: i,
                            weight_class: j,
                            logit_class: class,
                            sample: s,
                            magnitude: fd,
                        });
                    }
                }
            }
        }
    }

    for s in 0..n {
        let single = Matrix::new(1, probe.cols(), probe.row(s).to_vec())?;
        let pass = forward(spec, params, &single)?;
        for class in 0..k {
            let mut seed = Matrix::zeros(1, k);
            seed.set(0, class, 1.0);
            let grads = backward(spec, params, &pass, &seed)?;
            let dw = &grads.split().weight;
            for i in 0..d {
                for j in 0..k {
                    let g = dw.get(i, j);
                    if !owned_by_logit(plan, i, j, class) && g != 0.0 {
                        report.gradient_ok = false;
                        report.record(IsolationViolation {
                            check: IsolationCheck::Gradient,
                            feature: i,
                            weight_class: j,
                            logit_class: class,
                            sample: s,
                            magnitude: g.abs(),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}
