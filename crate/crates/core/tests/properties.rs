mod common;

use std::collections::BTreeSet;

use biocompass::data::{generate_synthetic, split_by_group, CohortTemplate, Normalizer, SyntheticSpec};
use biocompass::diffcore::Tape;
use biocompass::eval::{aggregate_seeds, f1, precision, recall, roc_auc, t_quantile, threshold, Protocol};
use biocompass::model::{BaseTarget, TreatmentTarget};
use biocompass::objective::composite_loss;
use common::{brute_force_auc, confusion, CompositeFixture};
use proptest::prelude::*;

fn scores_and_labels(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            // Coarse grid so ties are common.
            prop::collection::vec((0..12i32).prop_map(|v| v as f64 / 4.0), n),
            prop::collection::vec(0..=1u8, n),
        )
    })
}

fn treatment(i: usize) -> TreatmentTarget {
    match i % 4 {
        0 => TreatmentTarget::single(BaseTarget::Pd1),
        1 => TreatmentTarget::single(BaseTarget::Pdl1),
        2 => TreatmentTarget::single(BaseTarget::Ctla4),
        _ => TreatmentTarget::combination(&[BaseTarget::Ctla4, BaseTarget::Pd1]).unwrap(),
    }
}

/// Random cohort layout: `(cancer index, treatment index, size)` per cohort.
fn layout() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..3usize, 0..4usize, 2..9usize), 2..7).prop_filter("needs two cancers and two treatments", |l| {
        l.iter().map(|c| c.0).collect::<BTreeSet<_>>().len() >= 2 && l.iter().map(|c| c.1).collect::<BTreeSet<_>>().len() >= 2
    })
}

fn dataset_for(layout: &[(usize, usize, usize)], seed: u64) -> biocompass::data::Dataset {
    let spec = SyntheticSpec {
        cohorts: layout
            .iter()
            .enumerate()
            .map(|(i, &(c, t, size))| CohortTemplate {
                cohort_id: format!("c{i}"),
                cancer_type: ["A", "B", "C"][c].to_string(),
                treatment: treatment(t),
                size,
            })
            .collect(),
        gene_count: 8,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_equals_all_pairs((scores, labels) in scores_and_labels(50)) {
        prop_assert_eq!(roc_auc(&scores, &labels), brute_force_auc(&scores, &labels));
    }

    #[test]
    fn auc_flips_under_label_swap((scores, labels) in scores_and_labels(40)) {
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        if let (Some(a), Some(b)) = (roc_auc(&scores, &labels), roc_auc(&scores, &flipped)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_rank_invariant((scores, labels) in scores_and_labels(40)) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels), roc_auc(&warped, &labels));
    }

    #[test]
    fn threshold_metrics_match_counts(
        probs in prop::collection::vec(0.0..1.0f64, 1..60),
        seed in any::<u64>(),
    ) {
        let labels: Vec<u8> = (0..probs.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let preds = threshold(&probs);
        prop_assert!(preds.iter().zip(&probs).all(|(p, q)| (*p == 1) == (*q >= 0.5)));
        let (tp, fp, _tn, fn_) = confusion(&preds, &labels);
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        prop_assert_eq!(precision(&preds, &labels), ratio(tp, tp + fp));
        prop_assert_eq!(recall(&preds, &labels), ratio(tp, tp + fn_));
        prop_assert_eq!(f1(&preds, &labels), ratio(2 * tp, 2 * tp + fp + fn_));
    }

    #[test]
    fn ci_brackets_mean(values in prop::collection::vec(0.0..=1.0f64, 1..10)) {
        let a = aggregate_seeds(&values).unwrap();
        prop_assert!(a.ci_low <= a.mean && a.mean <= a.ci_high);
        prop_assert!(0.0 <= a.ci_low && a.ci_high <= 1.0);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        prop_assert!((a.mean - mean).abs() < 1e-12);
        if values.len() > 1 {
            let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!((a.half_width - t_quantile(values.len() - 1) * s / n.sqrt()).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fold_plans_partition(layout in layout(), seed in 0..1000u64) {
        let ds = dataset_for(&layout, seed);
        for protocol in [Protocol::Loco, Protocol::Locto, Protocol::Loto] {
            let key = protocol.group_key();
            let plan = split_by_group(&ds, key).unwrap();
            prop_assert_eq!(plan.folds.len(), ds.group_values(key).len());
            let mut seen = vec![0usize; ds.len()];
            for fold in &plan.folds {
                let test: BTreeSet<usize> = fold.test.iter().copied().collect();
                let train: BTreeSet<usize> = fold.train.iter().copied().collect();
                prop_assert!(test.is_disjoint(&train));
                prop_assert_eq!(test.len() + train.len(), ds.len());
                prop_assert!(fold.test.iter().all(|&i| ds.records[i].group_value(key) == fold.group_value));
                prop_assert!(fold.train.iter().all(|&i| ds.records[i].group_value(key) != fold.group_value));
                for &i in &fold.test {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn normalization_ignores_test_rows(layout in layout(), seed in 0..1000u64, factor in 0.01..100.0f64) {
        let ds = dataset_for(&layout, seed);
        let plan = split_by_group(&ds, Protocol::Loco.group_key()).unwrap();
        let fold = &plan.folds[0];
        let before = Normalizer::fit(&ds, &fold.train).unwrap();
        let mut altered = ds.clone();
        for &i in &fold.test {
            for v in altered.records[i].expression.iter_mut() {
                *v = *v * factor + 5.0;
            }
        }
        let after = Normalizer::fit(&altered, &fold.train).unwrap();
        prop_assert_eq!(&before, &after);
        prop_assert_eq!(before.transform(&ds, &fold.train), after.transform(&altered, &fold.train));
    }

    #[test]
    fn gates_and_concepts_are_bounded(seed in 0..10_000u64) {
        let fx = CompositeFixture::new(seed);
        let mut tape = Tape::new();
        let out = fx.model.forward(&mut tape, &fx.expression, &fx.treatments).unwrap();
        let concepts = tape.value(out.concepts).data().to_vec();
        prop_assert!(concepts.iter().all(|c| *c > 0.0));
        if let Some(g) = out.gates {
            let gates = tape.value(g).data().to_vec();
            prop_assert!(gates.iter().all(|g| *g > 0.0 && *g < 1.0));
            let gated = tape.value(out.gated).data();
            prop_assert!(gated.iter().zip(&concepts).all(|(g, c)| g <= c));
        }
        let probs = tape.value(out.prob).data();
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn total_is_weighted_sum_of_terms(seed in 0..10_000u64) {
        let fx = CompositeFixture::new(seed);
        let mut tape = Tape::new();
        let out = fx.model.forward(&mut tape, &fx.expression, &fx.treatments).unwrap();
        let (_, b) = composite_loss(&mut tape, &out, &fx.targets, &fx.weights, fx.norm).unwrap();
        prop_assert!((b.total - b.weighted_total(&fx.weights)).abs() <= 1e-12 * (1.0 + b.total.abs()));
        prop_assert!(b.pathway >= 0.0 && b.align >= 0.0 && b.aux() >= 0.0 && b.cls >= 0.0);
    }
}
