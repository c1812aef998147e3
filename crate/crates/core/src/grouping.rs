//! Soft feature/class group assignments and the three group regularizers.
//!
//! For `G` groups over `D` features and `K` classes, `p_g ∈ R^D` and
//! `q_g ∈ R^K` are the rows of the `G × D` and `G × K` probability matrices
//! produced by [`assignment_probs`]. With `P_g = diag(p_g)`, `Q_g = diag(q_g)`
//! and the split-layer weight `W` (`D × K`):
//!
//! * group weight: `R_W = Σ_g Σ_i ‖((I−P_g) W Q_g)_{i*}‖ + Σ_g Σ_j ‖(P_g W (I−Q_g))_{*j}‖`
//! * disjointness: `R_D = Σ_{g<h} p_g·p_h + Σ_{g<h} q_g·q_h`
//! * balance: `R_E = Σ_g (Σ_i p_gi)² + (Σ_j q_gj)²`
//!
//! and the total is `λ₁ R_W + λ₂ R_D + λ₃ R_E`. Each ℓ₂ norm in `R_W` is
//! smoothed as `sqrt(‖x‖² + ε²) − ε`, which is exact at `ε = 0`. Nothing is
//! normalized by `D`, `K` or batch size.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Learnable assignment logits; probabilities are a softmax over the group
/// axis, independently for each feature column and each class column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub feature_logits: Matrix,
    pub class_logits: Matrix,
}

impl GroupAssignment {
    pub fn new(feature_logits: Matrix, class_logits: Matrix) -> Result<Self> {
        let a = Self {
            feature_logits,
            class_logits,
        };
        a.validate()?;
        Ok(a)
    }

    /// Logits drawn i.i.d. from `N(0, scale²)`.
    pub fn random(groups: usize, features: usize, classes: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let feature_logits = draw(groups, features);
        let class_logits = draw(groups, classes);
        Self::new(feature_logits, class_logits)
    }

    pub fn groups(&self) -> usize {
        self.feature_logits.rows()
    }

    pub fn features(&self) -> usize {
        self.feature_logits.cols()
    }

    pub fn classes(&self) -> usize {
        self.class_logits.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.feature_logits.rows();
        if self.class_logits.rows() != g {
            return Err(Error::dim("class logits group rows", g, self.class_logits.rows()));
        }
        if g < 2 {
            return Err(Error::Config(format!("need at least 2 groups, got {g}")));
        }
        if g > self.features().min(self.classes()) {
            return Err(Error::Config(format!(
                "{g} groups exceed min(D={}, K={})",
                self.features(),
                self.classes()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub smoothing_eps: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 2.0,
            lambda3: 10.0,
            smoothing_eps: 1e-8,
        }
    }
}

impl RegWeights {
    pub fn zero() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.smoothing_eps];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "regularizer weights must be finite and >= 0: {all:?}"
            )));
        }
        Ok(())
    }
}

/// Column-stochastic assignment probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentProbs {
    /// `G × D`
    pub features: Matrix,
    /// `G × K`
    pub classes: Matrix,
}

fn column_softmax(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::Numeric("assignment logits".into()));
    }
    let (g, n) = logits.shape();
    let mut out = Matrix::zeros(g, n);
    for c in 0..n {
        let max = (0..g).map(|r| logits.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..g {
            let e = (logits.get(r, c) - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..g {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    Ok(out)
}

/// Back-propagates `d_probs` through the per-column softmax.
fn column_softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Matrix {
    let (g, n) = probs.shape();
    let mut out = Matrix::zeros(g, n);
    for c in 0..n {
        let dot: f64 = (0..g).map(|r| probs.get(r, c) * d_probs.get(r, c)).sum();
        for r in 0..g {
            out.set(r, c, probs.get(r, c) * (d_probs.get(r, c) - dot));
        }
    }
    out
}

pub fn assignment_probs(assignment: &GroupAssignment) -> Result<AssignmentProbs> {
    Ok(AssignmentProbs {
        features: column_softmax(&assignment.feature_logits)?,
        classes: column_softmax(&assignment.class_logits)?,
    })
}

fn check_shapes(w: &Matrix, p: &Matrix, q: &Matrix) -> Result<()> {
    if p.rows() != q.rows() {
        return Err(Error::dim("group count of P vs Q", p.rows(), q.rows()));
    }
    if w.rows() != p.cols() {
        return Err(Error::dim("W rows vs feature count of P", p.cols(), w.rows()));
    }
    if w.cols() != q.cols() {
        return Err(Error::dim("W cols vs class count of Q", q.cols(), w.cols()));
    }
    Ok(())
}

fn check_pq(p: &Matrix, q: &Matrix) -> Result<()> {
    if p.rows() != q.rows() {
        return Err(Error::dim("group count of P vs Q", p.rows(), q.rows()));
    }
    Ok(())
}

/// Value of `R_W` and, optionally, its gradients w.r.t. `W`, `P` and `Q`.
fn group_weight_impl(
    w: &Matrix,
    p: &Matrix,
    q: &Matrix,
    eps: f64,
    mut grads: Option<(&mut Matrix, &mut Matrix, &mut Matrix)>,
) -> f64 {
    let (d, k) = w.shape();
    let g_count = p.rows();
    let mut total = 0.0;
    let mut row_buf = vec![0.0; k];
    let mut col_buf = vec![0.0; d];
    for g in 0..g_count {
        // Row terms: A = (I − P_g) W Q_g, A_ij = (1 − p_gi) W_ij q_gj.
        for i in 0..d {
            let keep = 1.0 - p.get(g, i);
            for j in 0..k {
                row_buf[j] = keep * w.get(i, j) * q.get(g, j);
            }
            let sq: f64 = row_buf.iter().map(|x| x * x).sum();
            let root = (sq + eps * eps).sqrt();
            total += root - eps;
            if let Some((dw, dp, dq)) = grads.as_mut() {
                if root == 0.0 {
                    continue;
                }
                for j in 0..k {
                    let s = row_buf[j] / root;
                    if s == 0.0 {
                        continue;
                    }
                    let wij = w.get(i, j);
                    let qgj = q.get(g, j);
                    dw.set(i, j, dw.get(i, j) + s * keep * qgj);
                    dp.set(g, i, dp.get(g, i) - s * wij * qgj);
                    dq.set(g, j, dq.get(g, j) + s * keep * wij);
                }
            }
        }
        // Column terms: B = P_g W (I − Q_g), B_ij = p_gi W_ij (1 − q_gj).
        for j in 0..k {
            let keep = 1.0 - q.get(g, j);
            for i in 0..d {
                col_buf[i] = p.get(g, i) * w.get(i, j) * keep;
            }
            let sq: f64 = col_buf.iter().map(|x| x * x).sum();
            let root = (sq + eps * eps).sqrt();
            total += root - eps;
            if let Some((dw, dp, dq)) = grads.as_mut() {
                if root == 0.0 {
                    continue;
                }
                for i in 0..d {
                    let s = col_buf[i] / root;
                    if s == 0.0 {
                        continue;
                    }
                    let wij = w.get(i, j);
                    let pgi = p.get(g, i);
                    dw.set(i, j, dw.get(i, j) + s * pgi * keep);
                    dp.set(g, i, dp.get(g, i) + s * wij * keep);
                    dq.set(g, j, dq.get(g, j) - s * pgi * wij);
                }
            }
        }
    }
    total
}

/// Group weight regularizer `R_W` on probability matrices `P` (`G × D`) and
/// `Q` (`G × K`).
pub fn reg_group_weight(w: &Matrix, p: &Matrix, q: &Matrix, smoothing_eps: f64) -> Result<f64> {
    check_shapes(w, p, q)?;
    Ok(group_weight_impl(w, p, q, smoothing_eps, None))
}

fn pairwise_overlap(m: &Matrix) -> f64 {
    let g = m.rows();
    let mut total = 0.0;
    for a in 0..g {
        for b in a + 1..g {
            total += m.row(a).iter().zip(m.row(b)).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    total
}

/// Disjointness regularizer `R_D`.
pub fn reg_disjoint(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_pq(p, q)?;
    Ok(pairwise_overlap(p) + pairwise_overlap(q))
}

fn squared_row_sums(m: &Matrix) -> f64 {
    (0..m.rows())
        .map(|g| {
            let s: f64 = m.row(g).iter().sum();
            s * s
        })
        .sum()
}

/// Balance regularizer `R_E`.
pub fn reg_balanced(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_pq(p, q)?;
    Ok(squared_row_sums(p) + squared_row_sums(q))
}

/// Unweighted components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegTerms {
    pub group_weight: f64,
    pub disjoint: f64,
    pub balanced: f64,
    pub total: f64,
}

pub fn reg_terms(w: &Matrix, assignment: &GroupAssignment, weights: &RegWeights) -> Result<RegTerms> {
    let probs = assignment_probs(assignment)?;
    let (p, q) = (&probs.features, &probs.classes);
    let group_weight = reg_group_weight(w, p, q, weights.smoothing_eps)?;
    let disjoint = reg_disjoint(p, q)?;
    let balanced = reg_balanced(p, q)?;
    Ok(RegTerms {
        group_weight,
        disjoint,
        balanced,
        total: weights.lambda1 * group_weight + weights.lambda2 * disjoint + weights.lambda3 * balanced,
    })
}

/// `λ₁ R_W + λ₂ R_D + λ₃ R_E`
pub fn reg_total(w: &Matrix, assignment: &GroupAssignment, weights: &RegWeights) -> Result<f64> {
    Ok(reg_terms(w, assignment, weights)?.total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegGradients {
    pub weight: Matrix,
    pub feature_logits: Matrix,
    pub class_logits: Matrix,
}

/// Gradients of [`reg_total`] w.r.t. `W` and both logit matrices.
///
/// Requires `smoothing_eps > 0`: at `ε = 0` the ℓ₂ terms are not
/// differentiable at zero rows or columns.
pub fn reg_gradients(w: &Matrix, assignment: &GroupAssignment, weights: &RegWeights) -> Result<RegGradients> {
    if !(weights.smoothing_eps > 0.0) {
        return Err(Error::Config(
            "reg_gradients requires smoothing_eps > 0 (the l2 terms are nonsmooth at zero)".into(),
        ));
    }
    let probs = assignment_probs(assignment)?;
    let (p, q) = (&probs.features, &probs.classes);
    check_shapes(w, p, q)?;
    let (g_count, d) = p.shape();
    let k = q.cols();

    let mut dw = Matrix::zeros(d, k);
    let mut dp = Matrix::zeros(g_count, d);
    let mut dq = Matrix::zeros(g_count, k);

    if weights.lambda1 != 0.0 {
        let mut rw_dw = Matrix::zeros(d, k);
        let mut rw_dp = Matrix::zeros(g_count, d);
        let mut rw_dq = Matrix::zeros(g_count, k);
        group_weight_impl(
            w,
            p,
            q,
            weights.smoothing_eps,
            Some((&mut rw_dw, &mut rw_dp, &mut rw_dq)),
        );
        dw.axpy(weights.lambda1, &rw_dw)?;
        dp.axpy(weights.lambda1, &rw_dp)?;
        dq.axpy(weights.lambda1, &rw_dq)?;
    }
    if weights.lambda2 != 0.0 {
        // ∂/∂p_gi Σ_{a<b} p_a·p_b = Σ_{h≠g} p_hi
        for (m, dm) in [(p, &mut dp), (q, &mut dq)] {
            let col_sums = m.column_sums();
            for g in 0..g_count {
                for c in 0..m.cols() {
                    dm.set(g, c, dm.get(g, c) + weights.lambda2 * (col_sums[c] - m.get(g, c)));
                }
            }
        }
    }
    if weights.lambda3 != 0.0 {
        // ∂/∂p_gi (Σ_i p_gi)² = 2 Σ_i p_gi
        for (m, dm) in [(p, &mut dp), (q, &mut dq)] {
            for g in 0..g_count {
                let s: f64 = m.row(g).iter().sum();
                for c in 0..m.cols() {
                    dm.set(g, c, dm.get(g, c) + weights.lambda3 * 2.0 * s);
                }
            }
        }
    }

    Ok(RegGradients {
        weight: dw,
        feature_logits: column_softmax_backward(p, &dp),
        class_logits: column_softmax_backward(q, &dq),
    })
}

/// Mean Shannon entropy (nats) of the per-item group distributions, over all
/// features and classes.
pub fn assignment_entropy(probs: &AssignmentProbs) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in [&probs.features, &probs.classes] {
        for c in 0..m.cols() {
            total -= (0..m.rows())
                .map(|g| m.get(g, c))
                .filter(|&v| v > 0.0)
                .map(|v| v * v.ln())
                .sum::<f64>();
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Mean over features and classes of the largest group probability.
pub fn mean_max_probability(probs: &AssignmentProbs) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in [&probs.features, &probs.classes] {
        for c in 0..m.cols() {
            total += (0..m.rows()).map(|g| m.get(g, c)).fold(0.0, f64::max);
            count += 1;
        }
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn one_hot_2x2() -> (Matrix, Matrix) {
        let p = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        (p.clone(), p)
    }

    #[test]
    fn probabilities_are_column_stochastic() {
        let a = GroupAssignment::new(m(&[&[20.0, 0.0, 3.0], &[-20.0, 0.0, -1.0]]), Matrix::zeros(2, 2)).unwrap();
        let probs = assignment_probs(&a).unwrap();
        assert!((probs.features.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(probs.features.get(1, 0) < 1e-17);
        assert!(probs.classes.as_slice().iter().all(|&v| v == 0.5));

        let mut r = rng::stream(3, &[]);
        let a = GroupAssignment::random(3, 7, 5, 4.0, &mut r).unwrap();
        let probs = assignment_probs(&a).unwrap();
        for mat in [&probs.features, &probs.classes] {
            for s in mat.column_sums() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_validation() {
        assert!(GroupAssignment::new(Matrix::zeros(1, 3), Matrix::zeros(1, 3)).is_err());
        assert!(GroupAssignment::new(Matrix::zeros(3, 4), Matrix::zeros(3, 2)).is_err());
        assert!(GroupAssignment::new(Matrix::zeros(2, 4), Matrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn group_weight_examples() {
        let (p, q) = one_hot_2x2();
        let diag = m(&[&[1.0, 0.0], &[0.0, 4.0]]);
        assert_eq!(reg_group_weight(&diag, &p, &q, 0.0).unwrap(), 0.0);
        let full = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(reg_group_weight(&full, &p, &q, 0.0).unwrap(), 10.0);
        let half = Matrix::filled(2, 2, 0.5);
        let corner = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!((reg_group_weight(&corner, &half, &half, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(reg_group_weight(&Matrix::zeros(3, 2), &p, &q, 0.0).is_err());
    }

    #[test]
    fn disjoint_examples() {
        let (p, q) = one_hot_2x2();
        assert_eq!(reg_disjoint(&p, &q).unwrap(), 0.0);
        let half = Matrix::filled(2, 2, 0.5);
        assert_eq!(reg_disjoint(&half, &half).unwrap(), 1.0);
        let p3 = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let q3 = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(reg_disjoint(&p3, &q3).unwrap(), 1.0);
    }

    #[test]
    fn balanced_examples() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(reg_balanced(&z, &z).unwrap(), 0.0);
        let (p, q) = one_hot_2x2();
        assert_eq!(reg_balanced(&p, &q).unwrap(), 4.0);
        let lopsided = m(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(reg_balanced(&lopsided, &q).unwrap(), 6.0);
    }

    #[test]
    fn total_is_linear_in_weights() {
        let mut r = rng::stream(5, &[]);
        let a = GroupAssignment::random(2, 4, 3, 1.0, &mut r).unwrap();
        let w = Matrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let base = RegWeights::default();
        let t = reg_terms(&w, &a, &base).unwrap();
        assert!((t.total - (t.group_weight + 2.0 * t.disjoint + 10.0 * t.balanced)).abs() < 1e-12);
        let doubled = RegWeights { lambda2: 4.0, ..base };
        let t2 = reg_total(&w, &a, &doubled).unwrap();
        assert!((t2 - t.total - 2.0 * t.disjoint).abs() < 1e-12);
        assert_eq!(reg_total(&w, &a, &RegWeights::zero()).unwrap(), 0.0);
    }

    #[test]
    fn gradients_need_smoothing() {
        let mut r = rng::stream(5, &[]);
        let a = GroupAssignment::random(2, 3, 3, 1.0, &mut r).unwrap();
        let w = Matrix::filled(3, 3, 1.0);
        let weights = RegWeights {
            smoothing_eps: 0.0,
            ..RegWeights::default()
        };
        assert!(matches!(reg_gradients(&w, &a, &weights), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_give_exact_zero_gradients() {
        let mut r = rng::stream(9, &[]);
        let a = GroupAssignment::random(3, 5, 4, 1.0, &mut r).unwrap();
        let w = Matrix::from_fn(5, 4, |i, j| (i * j) as f64 - 2.0);
        let g = reg_gradients(&w, &a, &RegWeights::zero()).unwrap();
        for mat in [&g.weight, &g.feature_logits, &g.class_logits] {
            assert!(mat.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn block_diagonal_has_no_in_block_pull() {
        // Near-hard assignments: the in-block entries of W get (almost) no
        // gradient from R_W.
        let big = 40.0;
        let logits = m(&[&[big, -big], &[-big, big]]);
        let a = GroupAssignment::new(logits.clone(), logits).unwrap();
        let w = m(&[&[1.5, 0.0], &[0.0, -2.0]]);
        let weights = RegWeights {
            lambda2: 0.0,
            lambda3: 0.0,
            ..RegWeights::default()
        };
        let g = reg_gradients(&w, &a, &weights).unwrap();
        assert!(g.weight.get(0, 0).abs() < 1e-12);
        assert!(g.weight.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn entropy_and_confidence() {
        let (p, q) = one_hot_2x2();
        let probs = AssignmentProbs {
            features: p,
            classes: q,
        };
        assert_eq!(assignment_entropy(&probs), 0.0);
        assert_eq!(mean_max_probability(&probs), 1.0);
        let half = Matrix::filled(2, 2, 0.5);
        let probs = AssignmentProbs {
            features: half.clone(),
            classes: half,
        };
        assert!((assignment_entropy(&probs) - 2f64.ln()).abs() < 1e-15);
    }
}
