use proptest::prelude::*;
use sparsedet::detector::{assign_targets, expected_side, GridGeometry};
use sparsedet::geometry::Xyxy;
use sparsedet::loss::dfl_side;
use sparsedet::scene::Annotation;

fn geom() -> GridGeometry {
    GridGeometry {
        grid: 8,
        stride: 8,
        image_size: 64,
        bins: 16,
    }
}

fn arb_annotation() -> impl Strategy<Value = Annotation> {
    (0usize..3, 0.0f64..0.8, 0.0f64..0.8, 0.05f64..0.5, 0.05f64..0.5).prop_map(|(class_id, x1, y1, w, h)| Annotation {
        class_id,
        bbox: Xyxy::new(x1, y1, (x1 + w).min(1.0), (y1 + h).min(1.0)).to_cxcywh(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn two_point_distribution_decodes_to_target(d in 0.0f64..=15.0) {
        let bins = 16;
        let l = d.floor() as usize;
        let wr = d - l as f64;
        let mut logits = vec![-1e4; bins];
        logits[l] = (1.0 - wr).max(1e-300).ln();
        if l + 1 < bins {
            logits[l + 1] = wr.max(1e-300).ln();
        }
        prop_assert!((expected_side(&logits) - d).abs() < 1e-6);
        // those weights are also where the distribution loss bottoms out
        let mut g = vec![0.0; bins];
        dfl_side(&logits, d, &mut g);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn assignment_ignores_gt_order(anns in proptest::collection::vec(arb_annotation(), 0..8), rot in 0usize..8) {
        let a = assign_targets(&anns, geom(), 3);
        let mut shuffled = anns.clone();
        shuffled.reverse();
        let k = if shuffled.is_empty() { 0 } else { rot % shuffled.len() };
        shuffled.rotate_left(k);
        let b = assign_targets(&shuffled, geom(), 3);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gt_area_cells_lie_inside_a_box_of_their_class(anns in proptest::collection::vec(arb_annotation(), 0..8)) {
        let g = geom();
        let a = assign_targets(&anns, g, 3);
        for ((i, j, c), &inside) in a.gt_area_mask.indexed_iter() {
            let (x, y) = g.cell_center(i, j);
            let expected = anns.iter().any(|an| an.class_id == c && an.bbox.to_xyxy().contains_strict(x, y));
            prop_assert_eq!(inside, expected);
            if a.fg_mask[[i, j]] {
                prop_assert!(a.gt_area_mask[[i, j, a.target_class[[i, j]]]]);
            }
        }
    }
}
