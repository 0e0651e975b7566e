//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use hoi_contact::geometry::{BBox, EnclosingRect, GridRect};
use ndarray::Array2;

pub mod grad;

/// Minimum total cost over every injective map from columns (ground truth)
/// to rows (queries), by exhaustive search.
pub fn brute_force_min(cost: &Array2<f64>) -> f64 {
    fn go(cost: &Array2<f64>, col: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if col == cost.ncols() {
            *best = best.min(acc);
            return;
        }
        for r in 0..cost.nrows() {
            if !used[r] {
                used[r] = true;
                go(cost, col + 1, used, acc + cost[[r, col]], best);
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    if cost.ncols() == 0 {
        return 0.0;
    }
    go(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
    best
}

/// Enclosure from every corner of every box.
pub fn corner_scan(boxes: &[BBox<f64>]) -> (f64, f64, f64, f64) {
    let corners: Vec<(f64, f64)> = boxes
        .iter()
        .flat_map(|b| [(b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2)])
        .collect();
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| corners.iter().map(pick).fold(init, f);
    (
        fold(f64::min, f64::INFINITY, |c| c.0),
        fold(f64::min, f64::INFINITY, |c| c.1),
        fold(f64::max, f64::NEG_INFINITY, |c| c.0),
        fold(f64::max, f64::NEG_INFINITY, |c| c.1),
    )
}

/// Every pixel touched by `r` maps into a selected cell.
pub fn covers_all_pixels(r: &EnclosingRect<f64>, g: &GridRect, stride: usize) -> bool {
    let (x0, x1) = (r.x_min.floor() as usize, r.x_max.ceil() as usize);
    let (y0, y1) = (r.y_min.floor() as usize, r.y_max.ceil() as usize);
    (y0..y1.max(y0 + 1)).all(|y| (x0..x1.max(x0 + 1)).all(|x| g.contains_cell(x / stride, y / stride)))
}
