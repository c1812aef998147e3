use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the rows of `logits` and its gradient.
///
/// Each row is shifted by its maximum before exponentiation.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim("labels", n, labels.len()));
    }
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Input(format!("label {label} at row {row} outside [0, {k})")));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut sum = 0.0;
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp();
            sum += *gj;
        }
        loss += sum.ln() - (row[label] - max);
        for gj in g.iter_mut() {
            *gj = *gj / sum * inv_n;
        }
        g[label] -= inv_n;
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}
