use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rclp::buffer::{BatchItem, Provenance};
use rclp::metrics::{auc_roc, forgetting_pct, relative_gap, EvalResult, RunRecord};
use rclp::numeric::{Matrix, MlpModel, MlpShape, Objective};
use rclp::strategies::{
    masked_loss_terms, propagate_forward, FrozenModel, StrategyKind, Thresholds,
};
use rclp::stream::{build_stream, generate_task_data, Sample, StreamConfig};

fn model_strategy() -> impl Strategy<Value = (MlpModel, usize)> {
    (1usize..5, prop::collection::vec(1usize..6, 0..3), 1usize..5, any::<u64>()).prop_flat_map(
        |(input, hidden, out, seed)| {
            let layers = hidden.len() + 1;
            (0..layers).prop_map(move |tap| {
                let shape = MlpShape {
                    input_dim: input,
                    hidden: hidden.clone(),
                    n_outputs: out,
                    feature_tap: tap,
                };
                (MlpModel::init(&shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(), input)
            })
        },
    )
}

fn sample_strategy(n_classes: usize) -> impl Strategy<Value = (Sample, bool)> {
    (
        prop::collection::vec(0u8..2, n_classes),
        prop::collection::vec(0u8..2, n_classes),
        any::<bool>(),
    )
        .prop_map(|(t, k, memory)| (Sample::new(vec![0.0], t, k, 0).unwrap(), memory))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn memory_rows_never_touch_current_logits(
        items in prop::collection::vec(sample_strategy(7), 1..20),
        split in 1usize..6,
        seed in any::<u64>(),
    ) {
        let old: Vec<usize> = (0..split).collect();
        let current: Vec<usize> = (split..7).collect();
        let batch: Vec<BatchItem<'_>> = items
            .iter()
            .map(|(s, m)| BatchItem {
                sample: s,
                provenance: if *m { Provenance::Memory } else { Provenance::Current },
                entry: None,
            })
            .collect();
        let terms = masked_loss_terms(&batch, &old, &current, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::from_vec(batch.len(), 7, (0..batch.len() * 7)
            .map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect()).unwrap();
        let e = terms.evaluate(&logits, &Matrix::zeros(0, 0)).unwrap();
        prop_assert!(e.value >= 0.0);
        for (r, (s, m)) in items.iter().enumerate() {
            for j in 0..7 {
                let zero = e.d_logits.get(r, j) == 0.0;
                if *m && current.contains(&j) || !s.is_known(j) {
                    prop_assert!(zero, "row {} class {}", r, j);
                }
            }
        }
    }

    #[test]
    fn propagation_keeps_current_labels((model, input) in model_strategy(), seed in any::<u64>()) {
        let n_classes = model.n_outputs();
        prop_assume!(n_classes >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<Sample> = (0..10)
            .map(|_| {
                let x = (0..input).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
                let t = (0..n_classes).map(|_| u8::from(rand::Rng::random_bool(&mut rng, 0.5))).collect();
                let k = (0..n_classes).map(|j| u8::from(j == n_classes - 1)).collect();
                Sample::new(x, t, k, 1).unwrap()
            })
            .collect();
        let before = samples.clone();
        let old: Vec<usize> = (0..n_classes - 1).collect();
        propagate_forward(&FrozenModel::snapshot(&model), &mut samples, &old, &[n_classes - 1], &Thresholds::new(n_classes)).unwrap();
        for (s, b) in samples.iter().zip(&before) {
            prop_assert_eq!(s.label(n_classes - 1), b.label(n_classes - 1));
            for &j in &old {
                prop_assert!(s.is_known(j));
            }
        }
    }

    #[test]
    fn generated_tasks_obey_selection_and_mask((seed, task) in (0u64..50, 0usize..7)) {
        let spec = build_stream(&StreamConfig { seed, n_samples_per_task: 40, ..StreamConfig::default() }).unwrap();
        let ts = spec.task(task).unwrap().clone();
        let data = generate_task_data(&spec, task, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(data.train.len() + data.val.len() + data.test.len(), 40);
        for s in data.all_samples() {
            prop_assert_eq!(s.known_mask(), &ts.label_mask(spec.n_classes)[..]);
            prop_assert!(ts.label_set.iter().any(|&j| s.label(j) == Some(1)));
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms(
        scores in prop::collection::vec(-3.0f64..3.0, 2..40),
        flags in prop::collection::vec(any::<bool>(), 40),
    ) {
        let y: Vec<u8> = scores.iter().zip(&flags).map(|(_, &f)| u8::from(f)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(auc_roc(&scores, &y), auc_roc(&squashed, &y));
        if let Some(a) = auc_roc(&scores, &y) {
            prop_assert!((0.0..=1.0).contains(&a));
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            let b = auc_roc(&flipped, &y).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forgetting_and_gap_bounds(f1 in prop::collection::vec(0.01f64..1.0, 3), joint in 0.01f64..1.0, method in 0.0f64..1.0) {
        let mut record = RunRecord::new(StrategyKind::Replay, 0, 2);
        let eval = |after, target, v| EvalResult {
            after_task: after,
            target_task: target,
            classes: vec![0],
            per_class_f1: vec![Some(v)],
            macro_f1: v,
            per_class_auc: vec![None],
            macro_auc: 0.5,
        };
        record.grid = vec![vec![eval(0, 0, f1[0])], vec![eval(1, 0, f1[1]), eval(1, 1, f1[2])]];
        let fg = forgetting_pct(&record).unwrap();
        let first = fg.per_task[0].unwrap();
        prop_assert!(first <= 100.0);
        prop_assert!((first - 100.0 * (f1[0] - f1[1]) / f1[0]).abs() < 1e-9);
        prop_assert_eq!(fg.per_task[1], Some(0.0));
        let gap = relative_gap(method, joint).unwrap();
        prop_assert!((gap - 100.0 * (joint - method) / joint).abs() < 1e-9);
    }
}
