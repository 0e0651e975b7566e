//! Box arithmetic: corner/centre conversions, IoU, generalised IoU, the
//! enclosing rectangle of a box set and its projection onto the stride-32
//! feature grid.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Feature-grid stride of the backbone.
pub const STRIDE: usize = 32;

/// Axis-aligned box in corner form. Pixel boxes use half-open extents:
/// pixel `(x, y)` is inside iff `x1 <= x < x2` and `y1 <= y < y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    /// From normalised `(cx, cy, w, h)` to corners scaled by the image size.
    pub fn from_cxcywh(c: [T; 4], width: T, height: T) -> Self {
        let two = T::one() + T::one();
        BBox {
            x1: (c[0] - c[2] / two) * width,
            y1: (c[1] - c[3] / two) * height,
            x2: (c[0] + c[2] / two) * width,
            y2: (c[1] + c[3] / two) * height,
        }
    }

    /// Normalised `(cx, cy, w, h)` relative to the image size.
    pub fn to_cxcywh(&self, width: T, height: T) -> [T; 4] {
        let two = T::one() + T::one();
        [
            (self.x1 + self.x2) / two / width,
            (self.y1 + self.y2) / two / height,
            (self.x2 - self.x1) / width,
            (self.y2 - self.y1) / height,
        ]
    }

    pub fn intersection(&self, other: &Self) -> T {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(T::zero());
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(T::zero());
        w * h
    }

    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > T::zero() {
            inter / union
        } else {
            T::zero()
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Self) -> Self {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Generalised IoU: `IoU - (|C| - |A ∪ B|) / |C|` with `C` the hull.
    pub fn giou(&self, other: &Self) -> T {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        let hull = self.hull(other).area();
        if hull <= T::zero() || union <= T::zero() {
            return T::zero();
        }
        inter / union - (hull - union) / hull
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x1: U::from_f64_lossy(self.x1.to_f64_lossy()),
            y1: U::from_f64_lossy(self.y1.to_f64_lossy()),
            x2: U::from_f64_lossy(self.x2.to_f64_lossy()),
            y2: U::from_f64_lossy(self.y2.to_f64_lossy()),
        }
    }
}

/// Minimal rectangle covering a set of boxes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclosingRect<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

/// Component-wise min of top-left corners and max of bottom-right corners
/// over every human and object box. `None` when both sets are empty, which
/// callers treat as "no interaction region".
pub fn enclosing_rectangle<T: Scalar>(humans: &[BBox<T>], objects: &[BBox<T>]) -> Option<EnclosingRect<T>> {
    let mut boxes = humans.iter().chain(objects);
    let first = boxes.next()?;
    let init = EnclosingRect {
        x_min: first.x1,
        y_min: first.y1,
        x_max: first.x2,
        y_max: first.y2,
    };
    Some(boxes.fold(init, |r, b| EnclosingRect {
        x_min: r.x_min.min(b.x1),
        y_min: r.y_min.min(b.y1),
        x_max: r.x_max.max(b.x2),
        y_max: r.y_max.max(b.y2),
    }))
}

/// Half-open cell range `[gx_min, gx_max) x [gy_min, gy_max)` on the feature grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridRect {
    pub gx_min: usize,
    pub gy_min: usize,
    pub gx_max: usize,
    pub gy_max: usize,
}

impl GridRect {
    pub fn full(grid_w: usize, grid_h: usize) -> Self {
        GridRect {
            gx_min: 0,
            gy_min: 0,
            gx_max: grid_w,
            gy_max: grid_h,
        }
    }

    pub fn cells(&self) -> usize {
        (self.gx_max - self.gx_min) * (self.gy_max - self.gy_min)
    }

    pub fn contains_cell(&self, gx: usize, gy: usize) -> bool {
        (self.gx_min..self.gx_max).contains(&gx) && (self.gy_min..self.gy_max).contains(&gy)
    }
}

/// Project a pixel rectangle onto a grid of `grid_w x grid_h` cells of size
/// `stride`. Minimums are floored and maximums ceiled so every covered pixel
/// falls in a selected cell; the result always holds at least one cell.
pub fn scale_to_grid<T: Scalar>(r: &EnclosingRect<T>, stride: usize, grid_w: usize, grid_h: usize) -> GridRect {
    assert!(grid_w > 0 && grid_h > 0, "empty feature grid");
    let s = stride as f64;
    let lo = |v: T, n: usize| -> usize {
        let c = (v.to_f64_lossy() / s).floor();
        (c.max(0.0) as usize).min(n - 1)
    };
    let hi = |v: T, n: usize| -> usize {
        let c = (v.to_f64_lossy() / s).ceil();
        (c.max(0.0) as usize).min(n)
    };
    let gx_min = lo(r.x_min, grid_w);
    let gy_min = lo(r.y_min, grid_h);
    let gx_max = hi(r.x_max, grid_w).max(gx_min + 1);
    let gy_max = hi(r.y_max, grid_h).max(gy_min + 1);
    GridRect {
        gx_min,
        gy_min,
        gx_max,
        gy_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn singleton_enclosure_is_the_box() {
        let r = enclosing_rectangle(&[b(10.0, 20.0, 50.0, 60.0)], &[]).unwrap();
        assert_eq!(
            r,
            EnclosingRect {
                x_min: 10.0,
                y_min: 20.0,
                x_max: 50.0,
                y_max: 60.0
            }
        );
    }

    #[test]
    fn two_box_enclosure() {
        let r = enclosing_rectangle(&[b(0.0, 0.0, 10.0, 10.0)], &[b(5.0, 5.0, 30.0, 40.0)]).unwrap();
        assert_eq!((r.x_min, r.y_min, r.x_max, r.y_max), (0.0, 0.0, 30.0, 40.0));
    }

    #[test]
    fn empty_enclosure_is_none() {
        assert!(enclosing_rectangle::<f64>(&[], &[]).is_none());
    }

    #[test]
    fn grid_exact_multiples() {
        let r = EnclosingRect {
            x_min: 64.0,
            y_min: 64.0,
            x_max: 128.0,
            y_max: 128.0,
        };
        assert_eq!(
            scale_to_grid(&r, 32, 4, 4),
            GridRect {
                gx_min: 2,
                gy_min: 2,
                gx_max: 4,
                gy_max: 4
            }
        );
    }

    #[test]
    fn grid_sub_cell_box_covers_one_cell() {
        let r = EnclosingRect {
            x_min: 1.0,
            y_min: 1.0,
            x_max: 2.0,
            y_max: 2.0,
        };
        assert_eq!(
            scale_to_grid(&r, 32, 4, 4),
            GridRect {
                gx_min: 0,
                gy_min: 0,
                gx_max: 1,
                gy_max: 1
            }
        );
    }

    #[test]
    fn grid_degenerate_rect_is_nonempty() {
        let r = EnclosingRect {
            x_min: 32.0,
            y_min: 32.0,
            x_max: 32.0,
            y_max: 32.0,
        };
        assert_eq!(scale_to_grid(&r, 32, 4, 4).cells(), 1);
    }

    #[test]
    fn giou_hand_case() {
        // intersection 1, union 7, hull 9
        let a = b(0.0, 0.0, 2.0, 2.0);
        let c = b(1.0, 1.0, 3.0, 3.0);
        assert!((a.iou(&c) - 1.0 / 7.0).abs() < 1e-12);
        let expected = 1.0 / 7.0 - 2.0 / 9.0;
        assert!((a.giou(&c) - expected).abs() < 1e-12);
        assert!((a.giou(&c) - (-0.0794)).abs() < 1e-4);
    }

    #[test]
    fn disjoint_boxes_have_negative_giou() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        let c = b(10.0, 10.0, 11.0, 11.0);
        assert_eq!(a.iou(&c), 0.0);
        assert!(a.giou(&c) < 0.0);
        assert!(1.0 - a.giou(&c) > 1.0);
    }

    #[test]
    fn full_image_cxcywh() {
        let bx = BBox::from_cxcywh([0.5, 0.5, 1.0, 1.0], 128.0, 96.0);
        assert_eq!(bx, b(0.0, 0.0, 128.0, 96.0));
    }
}
