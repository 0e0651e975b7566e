//! Analytic gradients against central differences at 64-bit.

mod common;

use common::grad::{self, small_pgcs, Checks, TOL};
use hoi_contact::nn::Ctx;
use hoi_contact::params::ParamStore;

fn assert_all(checks: Checks) {
    assert!(!checks.is_empty());
    for (name, r) in checks {
        assert!(r.checked > 0, "{name}");
        assert!(r.passes(TOL), "{name}: {r:?}");
    }
}

#[test]
fn backbone_parameters() {
    assert_all(grad::backbone_parameters());
}

#[test]
fn cpam_head_and_blocks() {
    assert_all(grad::cpam_head_and_blocks());
}

#[test]
fn enhancer_delta() {
    assert_all(grad::enhancer_delta());
}

#[test]
fn segmentation_conv_kernel() {
    assert_all(grad::segmentation_conv_kernel());
}

#[test]
fn match_loss_wrt_boxes() {
    assert_all(grad::match_loss_wrt_boxes());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut store = ParamStore::new();
    let pgcs = small_pgcs(&mut store, 4);
    for seed in 0..5 {
        let mut cx = Ctx::inference(&store);
        let x = cx.g.input(grad::random(&[2, 3, 4], 100 + seed, -5.0, 5.0));
        let d = pgcs.decode(&mut cx, x);
        let s = pgcs.segment(&mut cx, d);
        let v = cx.g.value(s);
        assert_eq!(v.shape(), &[64, 96, 18]);
        for lane in v.lanes(ndarray::Axis(2)) {
            assert!((lane.sum() - 1.0).abs() < 1e-6);
        }
    }
}
