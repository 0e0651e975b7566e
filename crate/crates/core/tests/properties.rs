mod common;

use common::{brute_force_min, corner_scan, covers_all_pixels};
use hoi_contact::geometry::{enclosing_rectangle, scale_to_grid, BBox, STRIDE};
use hoi_contact::matching::hungarian;
use hoi_contact::metrics::{hoi_map, seg_metrics, ScoredPair, SegAccumulator};
use hoi_contact::scene::{ContactMap, InteractionPair, PixelBox};
use ndarray::Array2;
use proptest::prelude::*;

fn cost_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..=6)
        .prop_flat_map(|g| (Just(g), g..=7))
        .prop_flat_map(|(g, q)| prop::collection::vec(-5.0f64..5.0, q * g).prop_map(move |v| Array2::from_shape_vec((q, g), v).unwrap()))
}

fn bbox(max: f64) -> impl Strategy<Value = BBox<f64>> {
    (0.0..max, 0.0..max, 0.5..max / 2.0, 0.5..max / 2.0)
        .prop_map(move |(x, y, w, h)| BBox::new(x, y, (x + w).min(max), (y + h).min(max)))
        .prop_filter("non-empty", |b| b.x2 > b.x1 && b.y2 > b.y1)
}

fn label_map() -> impl Strategy<Value = ContactMap> {
    prop::collection::vec(prop_oneof![3 => Just(0u8), 1 => 1u8..=17], 64).prop_map(|v| ContactMap {
        labels: Array2::from_shape_vec((8, 8), v).unwrap(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_is_optimal(c in cost_matrix()) {
        let m = hungarian(&c).unwrap();
        prop_assert!((m.total_cost - brute_force_min(&c)).abs() < 1e-9);
        prop_assert_eq!(m.assignment.len(), c.ncols());
        let mut rows: Vec<usize> = m.assignment.iter().map(|a| a.0).collect();
        rows.sort_unstable();
        rows.dedup();
        prop_assert_eq!(rows.len(), c.ncols());
        let sum: f64 = m.assignment.iter().map(|&(q, g)| c[[q, g]]).sum();
        prop_assert!((sum - m.total_cost).abs() < 1e-9);
        prop_assert_eq!(m.unmatched.len(), c.nrows() - c.ncols());
    }

    #[test]
    fn hungarian_shift_invariant(c in cost_matrix(), shift in -10.0f64..10.0) {
        let a = hungarian(&c).unwrap();
        let b = hungarian(&c.mapv(|v| v + shift)).unwrap();
        prop_assert!((b.total_cost - a.total_cost - shift * c.ncols() as f64).abs() < 1e-8);
    }

    #[test]
    fn hungarian_row_permutation_invariant(c in cost_matrix(), rot in 0usize..7) {
        let n = c.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let p = Array2::from_shape_fn(c.dim(), |(i, j)| c[[perm[i], j]]);
        let a = hungarian(&c).unwrap();
        let b = hungarian(&p).unwrap();
        prop_assert!((a.total_cost - b.total_cost).abs() < 1e-9);
    }

    #[test]
    fn enclosure_matches_corner_scan(
        humans in prop::collection::vec(bbox(256.0), 0..6),
        objects in prop::collection::vec(bbox(256.0), 0..6),
    ) {
        let r = enclosing_rectangle(&humans, &objects);
        let all: Vec<_> = humans.iter().chain(&objects).copied().collect();
        match r {
            None => prop_assert!(all.is_empty()),
            Some(r) => {
                let (x0, y0, x1, y1) = corner_scan(&all);
                prop_assert_eq!((r.x_min, r.y_min, r.x_max, r.y_max), (x0, y0, x1, y1));
                // order and the human/object split do not matter
                let mut rev = all.clone();
                rev.reverse();
                prop_assert_eq!(enclosing_rectangle(&[], &rev), Some(r));
                for b in &all {
                    prop_assert!(r.x_min <= b.x1 && r.y_min <= b.y1 && b.x2 <= r.x_max && b.y2 <= r.y_max);
                }
            }
        }
    }

    #[test]
    fn grid_projection_covers(b in bbox(256.0)) {
        let r = enclosing_rectangle(&[b], &[]).unwrap();
        let g = scale_to_grid(&r, STRIDE, 8, 8);
        prop_assert!(g.cells() >= 1);
        prop_assert!(g.gx_max <= 8 && g.gy_max <= 8);
        prop_assert!(covers_all_pixels(&r, &g, STRIDE));
    }

    #[test]
    fn seg_metrics_in_unit_range(p in label_map(), g in label_map()) {
        let m = seg_metrics(&p, &g).unwrap();
        for v in [m.c_acc, m.miou, m.wiou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(s) = m.sc_acc {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        let same = seg_metrics(&g, &g).unwrap();
        prop_assert_eq!((same.c_acc, same.miou, same.wiou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn seg_accumulation_order_free(maps in prop::collection::vec((label_map(), label_map()), 1..5)) {
        let mut fwd = SegAccumulator::new();
        let mut rev = SegAccumulator::new();
        for (p, g) in &maps {
            fwd.add(p, g).unwrap();
        }
        for (p, g) in maps.iter().rev() {
            rev.add(p, g).unwrap();
        }
        let (a, b) = (fwd.finish(), rev.finish());
        prop_assert!((a.c_acc - b.c_acc).abs() < 1e-12);
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
        prop_assert!((a.wiou - b.wiou).abs() < 1e-12);
        prop_assert!((a.sc_acc.unwrap_or(0.0) - b.sc_acc.unwrap_or(0.0)).abs() < 1e-12);
    }

    #[test]
    fn map_in_unit_range_and_order_free(
        jitter in prop::collection::vec((-6.0f64..6.0, 0.01f64..1.0, 0usize..3, 0usize..3), 1..8),
    ) {
        let gt = vec![
            InteractionPair {
                human_box: PixelBox::new(10, 10, 40, 90),
                object_box: PixelBox::new(35, 30, 60, 50),
                object_class: 1,
                action_class: 0,
                contact_parts: vec![],
            },
            InteractionPair {
                human_box: PixelBox::new(70, 5, 100, 100),
                object_box: PixelBox::new(95, 40, 120, 60),
                object_class: 2,
                action_class: 1,
                contact_parts: vec![],
            },
        ];
        let preds: Vec<ScoredPair> = jitter
            .iter()
            .enumerate()
            .map(|(i, &(d, s, o, a))| {
                let src = &gt[i % 2];
                let sh = |b: &PixelBox| {
                    let b: BBox<f64> = b.to_bbox();
                    BBox::new(b.x1 + d, b.y1 + d, b.x2 + d, b.y2 + d)
                };
                ScoredPair {
                    human_box: sh(&src.human_box),
                    object_box: sh(&src.object_box),
                    object_class: o,
                    action_class: a,
                    score: s,
                }
            })
            .collect();
        let d = hoi_map(std::slice::from_ref(&preds), std::slice::from_ref(&gt), 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.map));
        let mut rev = preds.clone();
        rev.reverse();
        let e = hoi_map(&[rev], &[gt], 0.5).unwrap();
        prop_assert!((d.map - e.map).abs() < 1e-12);
    }

    #[test]
    fn giou_bounds(a in bbox(100.0), b in bbox(100.0)) {
        let g = a.giou(&b);
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!(g <= a.iou(&b) + 1e-12);
        prop_assert!((a.iou(&b) - b.iou(&a)).abs() < 1e-12);
        prop_assert!((a.giou(&a) - 1.0).abs() < 1e-12);
    }
}
