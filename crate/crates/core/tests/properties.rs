use popnet_core::data::{gen_hierarchical, gen_shortcut, HierarchicalSpec, ShortcutSpec};
use popnet_core::grouping::{
    assignment_probs, reg_balanced, reg_disjoint, reg_group_weight, reg_total, GroupAssignment, RegWeights,
};
use popnet_core::probes::metrics_from_predictions;
use popnet_core::rng;
use popnet_core::splitnet::{apply_split, harden, stage1_train, stage2_finetune, Stage1Options};
use popnet_core::tensor::{forward, softmax_xent, AdamState, Matrix, NetworkParams, NetworkSpec, TrainConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    let mut r = rng::stream(seed, &[77]);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

fn hard(groups: usize, members: &[usize]) -> Matrix {
    Matrix::from_fn(groups, members.len(), |g, i| f64::from(u8::from(members[i] == g)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_bit_deterministic(seed in any::<u64>(), input in 1usize..6, width in 2usize..8, classes in 2usize..6) {
        let spec = NetworkSpec::relu_trunk(input, &[width], classes, seed).unwrap();
        let params = NetworkParams::init(&spec).unwrap();
        let x = matrix(4, input, seed, 2.0);
        let a = forward(&spec, &params, &x).unwrap().logits;
        let b = forward(&spec, &params.clone(), &x.clone()).unwrap().logits;
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn cross_entropy_nonnegative_and_ln_k_at_uniform(seed in any::<u64>(), k in 2usize..10, c in 0.0f64..5.0) {
        let logits = matrix(3, k, seed, 20.0);
        let labels: Vec<usize> = (0..3).map(|i| (seed as usize + i) % k).collect();
        prop_assert!(softmax_xent(&logits, &labels).unwrap().0 >= 0.0);
        let (uniform, _) = softmax_xent(&Matrix::filled(3, k, c), &labels).unwrap();
        prop_assert!((uniform - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_identity(values in prop::collection::vec(-10.0f64..10.0, 1..20), steps in 1usize..5) {
        let mut theta = values.clone();
        let zeros = vec![0.0; values.len()];
        let mut adam = AdamState::default();
        let config = TrainConfig::default();
        for _ in 0..steps {
            adam.step(&mut [(&mut theta[..], &zeros[..])], &config, 0.0, 1e-3).unwrap();
        }
        prop_assert_eq!(theta, values);
    }

    #[test]
    fn regularizers_nonnegative(seed in any::<u64>(), g in 2usize..4, d in 3usize..8, k in 3usize..8) {
        let w = matrix(d, k, seed, 3.0);
        let a = GroupAssignment::new(matrix(g, d, seed ^ 1, 4.0), matrix(g, k, seed ^ 2, 4.0)).unwrap();
        let probs = assignment_probs(&a).unwrap();
        let (p, q) = (&probs.features, &probs.classes);
        for col in 0..d {
            let s: f64 = (0..g).map(|r| p.get(r, col)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(reg_group_weight(&w, p, q, 0.0).unwrap() >= 0.0);
        prop_assert!(reg_disjoint(p, q).unwrap() >= 0.0);
        prop_assert!(reg_balanced(p, q).unwrap() >= 0.0);
    }

    #[test]
    fn disjoint_zero_iff_supports_disjoint(seed in any::<u64>(), g in 2usize..4, n in 2usize..7) {
        let mut r = rng::stream(seed, &[]);
        // Nonnegative rows with random sparse supports.
        let m = Matrix::from_fn(g, n, |_, _| if r.random_bool(0.5) { r.random_range(0.1..1.0) } else { 0.0 });
        let overlap = (0..n).any(|c| (0..g).filter(|&row| m.get(row, c) > 0.0).count() > 1);
        let q = hard(g, &(0..g).collect::<Vec<_>>());
        prop_assert_eq!(reg_disjoint(&m, &q).unwrap() == 0.0, !overlap);
    }

    #[test]
    fn balance_term_bounds(seed in any::<u64>(), g in 2usize..5, d in 2usize..9) {
        let mut r = rng::stream(seed, &[]);
        let mut p = Matrix::from_fn(g, d, |_, _| r.random_range(0.0..1.0));
        for c in 0..d {
            let s: f64 = (0..g).map(|row| p.get(row, c)).sum();
            for row in 0..g {
                p.set(row, c, p.get(row, c) / s);
            }
        }
        let empty = Matrix::zeros(g, 1);
        let value = reg_balanced(&p, &empty).unwrap();
        let d2 = (d * d) as f64;
        prop_assert!(value >= d2 / g as f64 - 1e-9 && value <= d2 + 1e-9);
        let all_in_one = hard(g, &vec![0; d]);
        prop_assert!((reg_balanced(&all_in_one, &empty).unwrap() - d2).abs() < 1e-12);
        let uniform = Matrix::filled(g, d, 1.0 / g as f64);
        prop_assert!((reg_balanced(&uniform, &empty).unwrap() - d2 / g as f64).abs() < 1e-9);
    }

    #[test]
    fn total_invariant_under_group_permutation(seed in any::<u64>(), g in 2usize..4, d in 3usize..8, k in 3usize..8) {
        let w = matrix(d, k, seed, 2.0);
        let (fl, cl) = (matrix(g, d, seed ^ 3, 3.0), matrix(g, k, seed ^ 4, 3.0));
        let mut order: Vec<usize> = (0..g).collect();
        order.shuffle(&mut rng::stream(seed, &[1]));
        let permute = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(order[r], c));
        let weights = RegWeights::default();
        let a = reg_total(&w, &GroupAssignment::new(fl.clone(), cl.clone()).unwrap(), &weights).unwrap();
        let b = reg_total(&w, &GroupAssignment::new(permute(&fl), permute(&cl)).unwrap(), &weights).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn metrics_invariant_under_reordering(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100), seed in any::<u64>()) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[]));
        let pred2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let labels2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let a = metrics_from_predictions(&pred, &labels, 4, None, None).unwrap();
        let b = metrics_from_predictions(&pred2, &labels2, 4, None, None).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generators_are_pure(seed in any::<u64>()) {
        let spec = HierarchicalSpec { n_per_class: 20, ..HierarchicalSpec::default() };
        prop_assert_eq!(gen_hierarchical(&spec, seed).unwrap(), gen_hierarchical(&spec, seed).unwrap());
        let spec = ShortcutSpec { n_train: 40, n_test: 20, ..ShortcutSpec::default() };
        prop_assert_eq!(gen_shortcut(&spec, seed).unwrap(), gen_shortcut(&spec, seed).unwrap());
    }

    #[test]
    fn stage2_never_resurrects_masked_weights(seed in 0u64..1000) {
        let spec = HierarchicalSpec { n_per_class: 30, ..HierarchicalSpec::default() };
        let mut data = gen_hierarchical(&spec, seed).unwrap().dataset;
        data.normalize_in_place().unwrap();
        let net = NetworkSpec::relu_trunk(data.input_dim(), &[8], data.classes(), seed).unwrap();
        let config = TrainConfig { epochs: 2, batch_size: 16, learning_rate: 1e-2, ..TrainConfig::default() };
        let s1 = stage1_train(&net, &data, None, &config, &Stage1Options::default(), seed).unwrap();
        let Ok(plan) = harden(&s1.assignment) else { return Ok(()) };
        let masked = apply_split(&s1.params, &plan).unwrap();
        let (tuned, _) = stage2_finetune(&net, &masked, &plan, &data, None, &config, seed).unwrap();
        let w = &tuned.split().weight;
        let mask = plan.block_mask();
        prop_assert!(w.as_slice().iter().zip(mask.as_slice()).all(|(x, m)| *m != 0.0 || *x == 0.0));
    }
}
