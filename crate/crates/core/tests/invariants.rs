use grft_core::losses::scl_loss;
use grft_core::masking::{
    brute_force_best_rows, build_mask, col_scores, index_bits, mask_objective, retained_energy, row_scores,
    storage_comparison, topk_indices, GradientMaskSet, LayerMask, MaskVariant, Selection,
};
use grft_core::model::{checkpoint_from_json, checkpoint_to_json, default_roles, init_model};
use grft_core::optim::{cosine_warmup_lr, OptimConfig};
use grft_core::Matrix;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn objective_plus_retained_is_total(h in matrix(8, 8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((h.rows() - 1) as f64 * k_frac) as usize;
        let mask = build_mask(&h, k, MaskVariant::Row).unwrap();
        let total = h.frobenius_sq();
        let sum = mask_objective(&h, &mask).unwrap() + retained_energy(&h, &mask).unwrap();
        prop_assert!((sum - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn greedy_rows_match_enumeration(h in matrix(7, 5), k_frac in 0.0f64..1.0) {
        let k = 1 + ((h.rows() - 1) as f64 * k_frac) as usize;
        let greedy = mask_objective(&h, &build_mask(&h, k, MaskVariant::Row).unwrap()).unwrap();
        let best = LayerMask::new(h.shape(), Selection::Rows(brute_force_best_rows(&h, k).unwrap())).unwrap();
        prop_assert!((greedy - mask_objective(&h, &best).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn scores_sum_to_frobenius(h in matrix(9, 9)) {
        let total = h.frobenius_sq();
        let rows: f64 = row_scores(&h).iter().sum();
        let cols: f64 = col_scores(&h).iter().sum();
        prop_assert!((rows - total).abs() <= 1e-9 * total.max(1.0));
        prop_assert!((cols - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn topk_is_sorted_unique_and_dominant(scores in prop::collection::vec(0.0f64..5.0, 1..20), k_frac in 0.0f64..1.0) {
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let picked = topk_indices(&scores, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let min_in = picked.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for (i, s) in scores.iter().enumerate() {
            if !picked.contains(&i) {
                prop_assert!(*s <= min_in);
            }
        }
    }

    #[test]
    fn row_storage_is_smallest(rows in 1usize..2000, cols in 1usize..2000, k_frac in 0.0f64..1.0) {
        let k = 1 + ((rows.min(cols) - 1) as f64 * k_frac) as usize;
        let (row, sparse, dense) = storage_comparison(rows, cols, k);
        prop_assert_eq!(row, k * index_bits(rows));
        prop_assert!(row <= sparse && row <= dense);
    }

    #[test]
    fn mask_json_round_trips(h in matrix(6, 6), k_frac in 0.0f64..1.0, which in 0usize..3) {
        let variant = [MaskVariant::Row, MaskVariant::Col, MaskVariant::Sparse][which];
        let limit = if variant == MaskVariant::Row { h.rows() } else { h.cols() };
        let k = 1 + ((limit - 1) as f64 * k_frac) as usize;
        let set = GradientMaskSet { layers: vec![build_mask(&h, k, variant).unwrap(), LayerMask::full((2, 2))] };
        let back = GradientMaskSet::from_json(&set.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in any::<u64>(), hidden in 1usize..6) {
        let dims = [3, hidden, hidden + 1, 2];
        let model = init_model::<f64>(&dims, &default_roles(3), seed).unwrap();
        let back = checkpoint_from_json::<f64>(&checkpoint_to_json(&model).unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn contrastive_loss_ignores_feature_scale(
        feats in prop::collection::vec(-3.0f64..3.0, 12),
        scale in 0.1f64..20.0,
        tau in 0.05f64..2.0,
    ) {
        let f = Matrix::new(4, 3, feats).unwrap();
        prop_assume!((0..4).all(|i| f.row(i).iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let y = [0, 1, 0, 1];
        let (a, _) = scl_loss(&f, &y, tau).unwrap();
        let (b, _) = scl_loss(&f.scale(scale), &y, tau).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn schedule_stays_in_range(base in 1e-5f64..1.0, warmup in 0usize..50, extra in 1usize..200) {
        let cfg = OptimConfig::new(base, warmup, warmup + extra);
        for e in 0..=warmup + extra {
            let lr = cosine_warmup_lr(e, &cfg).unwrap();
            prop_assert!((0.0..=base * (1.0 + 1e-12)).contains(&lr));
        }
    }
}
