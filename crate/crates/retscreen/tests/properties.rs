//! Property-based invariants for the metrics and preprocessing cores.

use ndarray::Array3;
use proptest::prelude::*;

use retscreen::metrics::{
    accuracy, auc, auc_pairwise_oracle, roc_curve, threshold_sweep, weighted_f1, ConfusionMatrix,
    PositiveClass,
};
use retscreen::preprocess::{
    flip_horizontal, flip_vertical, rescale, resize, ImageTensor, PixelScale,
};

/// Labels with at least one member of each class, paired with scores on a
/// coarse grid so ties actually occur.
fn labeled_scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    prop::collection::vec((0u8..=1, 0u32..=12), 2..120).prop_map(|mut rows| {
        rows[0].0 = 0;
        rows[1].0 = 1;
        rows.into_iter()
            .map(|(y, s)| (y, f64::from(s) / 12.0))
            .unzip()
    })
}

fn byte_image() -> impl Strategy<Value = ImageTensor> {
    (2usize..24, 2usize..24, any::<u64>()).prop_map(|(h, w, seed)| {
        // cheap deterministic fill; the pixel pattern itself is irrelevant
        let mut state = seed | 1;
        ImageTensor::new(
            Array3::from_shape_fn((h, w, 3), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 40) as f32 % 256.0
            }),
            PixelScale::Byte,
        )
    })
}

proptest! {
    #[test]
    fn trapezoid_auc_matches_pairwise_oracle((y, s) in labeled_scores()) {
        let curve = roc_curve(&y, &s, PositiveClass::One).unwrap();
        let oracle = auc_pairwise_oracle(&y, &s).unwrap();
        prop_assert!((auc(&curve) - oracle).abs() < 1e-9);
    }

    #[test]
    fn metrics_invariant_under_joint_permutation((y, s) in labeled_scores(), salt in any::<u64>()) {
        let preds: Vec<u8> = s.iter().map(|&v| u8::from(v >= 0.5)).collect();
        let base = ConfusionMatrix::from_predictions(&y, &preds).unwrap();

        // deterministic permutation derived from the salt
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(salt | 1).rotate_left(17));
        let py: Vec<u8> = order.iter().map(|&i| y[i]).collect();
        let pp: Vec<u8> = order.iter().map(|&i| preds[i]).collect();
        let ps: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let permuted = ConfusionMatrix::from_predictions(&py, &pp).unwrap();

        prop_assert_eq!(base.counts, permuted.counts);
        prop_assert_eq!(accuracy(&base), accuracy(&permuted));
        prop_assert_eq!(weighted_f1(&base), weighted_f1(&permuted));
        let auc_base = auc(&roc_curve(&y, &s, PositiveClass::One).unwrap());
        let auc_perm = auc(&roc_curve(&py, &ps, PositiveClass::One).unwrap());
        prop_assert!((auc_base - auc_perm).abs() < 1e-12);
    }

    #[test]
    fn confusion_matrix_total_equals_sample_count((y, s) in labeled_scores()) {
        let preds: Vec<u8> = s.iter().map(|&v| u8::from(v >= 0.5)).collect();
        let cm = ConfusionMatrix::from_predictions(&y, &preds).unwrap();
        prop_assert_eq!(cm.total(), y.len() as u64);
    }

    #[test]
    fn sweep_recall_never_increases_with_threshold((y, s) in labeled_scores()) {
        let sweep = threshold_sweep(&y, &s).unwrap();
        for pair in sweep.windows(2) {
            prop_assert!(pair[0].threshold < pair[1].threshold, "sweep sorted ascending");
            prop_assert!(pair[0].recall1 >= pair[1].recall1, "recall monotone nonincreasing");
        }
        // the sentinels pin both ends of the sweep
        let first = sweep.first().unwrap();
        let last = sweep.last().unwrap();
        prop_assert_eq!(first.recall1, 1.0);
        prop_assert_eq!(last.recall1, 0.0);
    }

    #[test]
    fn flips_are_involutions_and_commute(img in byte_image()) {
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img.clone());
        prop_assert_eq!(flip_vertical(&flip_vertical(&img)), img.clone());
        prop_assert_eq!(
            flip_horizontal(&flip_vertical(&img)),
            flip_vertical(&flip_horizontal(&img))
        );
    }

    #[test]
    fn rescale_lands_in_unit_interval(img in byte_image()) {
        let unit = rescale(&img).unwrap();
        prop_assert_eq!(unit.scale, PixelScale::Unit);
        prop_assert!(unit.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // rescaling twice is rejected rather than silently compounding
        prop_assert!(rescale(&unit).is_err());
    }

    #[test]
    fn resize_preserves_constant_images(
        (h, w) in (2usize..24, 2usize..24),
        value in 0u8..=255,
        target in 1usize..40,
    ) {
        let img = ImageTensor::new(
            Array3::from_elem((h, w, 3), f32::from(value)),
            PixelScale::Byte,
        );
        let out = resize(&img, target).unwrap();
        prop_assert_eq!(out.data.shape(), &[target, target, 3]);
        prop_assert!(out.data.iter().all(|&v| (v - f32::from(value)).abs() < 1e-4));
    }
}
