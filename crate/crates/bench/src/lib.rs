//! Fixtures shared by the benchmarks.

use popnet_core::grouping::GroupAssignment;
use popnet_core::{rng, Matrix, NetworkParams, NetworkSpec};

/// Deterministic pseudo-random matrix with entries in `[-1, 1]`.
pub fn filled(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| {
        let x = (r * 7919 + c * 104_729) as f64 + seed as f64 * 0.618;
        x.sin()
    })
}

pub struct NetFixture {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub batch: Matrix,
    pub labels: Vec<usize>,
}

pub fn network(input: usize, hidden: &[usize], classes: usize, batch: usize) -> NetFixture {
    let spec = NetworkSpec::relu_trunk(input, hidden, classes, 1).expect("valid spec");
    let params = NetworkParams::init(&spec).expect("valid spec");
    NetFixture {
        batch: filled(batch, input, 2),
        labels: (0..batch).map(|i| i % classes).collect(),
        spec,
        params,
    }
}

pub fn assignment(groups: usize, features: usize, classes: usize) -> GroupAssignment {
    GroupAssignment::random(groups, features, classes, 1.0, &mut rng::stream(3, &[0])).expect("valid shape")
}
