//! Post-hoc characterization of trained networks.

mod compression;
mod flatness;
mod metrics;

pub use compression::{compression_probe, CompressionConfig, CompressionReport, DEFAULT_HEAD};
pub use flatness::{flatness_probe, FlatnessCurve};
pub use metrics::{eval_metrics, metrics_from_predictions, CellAccuracy, MetricBundle};

/// Sample mean and sample standard deviation (`n - 1` denominator; 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[0.5, 0.6, 0.7]);
        assert!((m - 0.6).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }
}
