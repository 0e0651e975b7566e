//! Spatial ops on channel-last `(H, W, C)` tensors.

use ndarray::{s, Array2, Array3, ArrayD, Axis, IxDyn};

use super::graph::{Graph, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Unfold `x` into a `(Ho*Wo, KH*KW*Cin)` patch matrix.
fn im2col<T: Scalar>(x: &[T], geom: &ConvGeom) -> Array2<T> {
    let (ho, wo) = geom.out_hw();
    let patch = geom.patch();
    let mut cols = Array2::<T>::zeros((ho * wo, patch));
    let cols_s = cols.as_slice_mut().unwrap();
    let cin = geom.cin;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = (oy * wo + ox) * patch;
            for ky in 0..geom.kh {
                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                if iy < 0 || iy >= geom.h as isize {
                    continue;
                }
                for kx in 0..geom.kw {
                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                    if ix < 0 || ix >= geom.w as isize {
                        continue;
                    }
                    let src = (iy as usize * geom.w + ix as usize) * cin;
                    let dst = row + (ky * geom.kw + kx) * cin;
                    cols_s[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch-matrix gradient back onto the input grid.
fn col2im<T: Scalar>(dcols: &Array2<T>, geom: &ConvGeom) -> Array3<T> {
    let (ho, wo) = geom.out_hw();
    let patch = geom.patch();
    let cin = geom.cin;
    let mut dx = Array3::<T>::zeros((geom.h, geom.w, cin));
    let dx_s = dx.as_slice_mut().unwrap();
    let dcols = dcols.as_standard_layout();
    let dc = dcols.as_slice().unwrap();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = (oy * wo + ox) * patch;
            for ky in 0..geom.kh {
                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                if iy < 0 || iy >= geom.h as isize {
                    continue;
                }
                for kx in 0..geom.kw {
                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                    if ix < 0 || ix >= geom.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * geom.w + ix as usize) * cin;
                    let src = row + (ky * geom.kw + kx) * cin;
                    for c in 0..cin {
                        dx_s[dst + c] += dc[src + c];
                    }
                }
            }
        }
    }
    dx
}

impl<T: Scalar> Graph<T> {
    /// 2-d convolution. `x: (H, W, Cin)`, `weight: (KH, KW, Cin, Cout)`,
    /// `bias: (Cout)`. Zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        assert_eq!(xs.len(), 3, "conv2d expects (H, W, C) input, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d expects (KH, KW, Cin, Cout) weight");
        assert_eq!(xs[2], ws[2], "conv2d channel mismatch: input {} vs weight {}", xs[2], ws[2]);
        let geom = ConvGeom {
            h: xs[0],
            w: xs[1],
            cin: xs[2],
            kh: ws[0],
            kw: ws[1],
            stride,
            pad,
        };
        let cout = ws[3];
        let (ho, wo) = geom.out_hw();
        let xin = self.value(x).as_standard_layout().into_owned();
        let cols = im2col(xin.as_slice().unwrap(), &geom);
        let wmat = self
            .value(weight)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((geom.patch(), cout))
            .unwrap();
        let mut out = cols.dot(&wmat);
        if let Some(b) = bias {
            let bv = self.value(b).view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
            out += &bv;
        }
        let value = out.into_shape_with_order(IxDyn(&[ho, wo, cout])).unwrap();

        let mut parents = vec![x, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        if !self.wants_grad(&parents) {
            return self.push(value, &parents, |_| unreachable!());
        }
        let has_bias = bias.is_some();
        self.push(value, &parents, move |cx| {
            let dy = cx
                .grad
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((ho * wo, cout))
                .unwrap();
            let wmat = cx.inputs[1]
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((geom.patch(), cout))
                .unwrap();
            let dx = cx.needs(0).then(|| {
                let dcols = dy.dot(&wmat.t());
                col2im(&dcols, &geom).into_dyn()
            });
            let dw = cx.needs(1).then(|| {
                cols.t()
                    .dot(&dy)
                    .into_shape_with_order(IxDyn(&[geom.kh, geom.kw, geom.cin, cout]))
                    .unwrap()
            });
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(cx.needs(2).then(|| dy.sum_axis(Axis(0)).into_dyn()));
            }
            grads
        })
    }

    /// Nearest-neighbour 2x upsampling of `(H, W, C)`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let src = self.value(x).view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut out = Array3::<T>::zeros((2 * h, 2 * w, c));
        for dy in 0..2 {
            for dx in 0..2 {
                out.slice_mut(s![dy..;2, dx..;2, ..]).assign(&src);
            }
        }
        self.push(out.into_dyn(), &[x], move |cx| {
            let g = cx.grad.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            let mut acc = Array3::<T>::zeros((h, w, c));
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += &g.slice(s![dy..;2, dx..;2, ..]);
                }
            }
            vec![Some(acc.into_dyn())]
        })
    }

    /// Crop `(H, W, C)` to rows `[y0, y1)` and columns `[x0, x1)`.
    pub fn crop(&mut self, x: Var, y0: usize, y1: usize, x0: usize, x1: usize) -> Var {
        let rows = self.slice_axis(x, 0, y0, y1);
        self.slice_axis(rows, 1, x0, x1)
    }

    /// Scale the cells of `(H, W, C)` inside rows `[y0, y1)`, columns `[x0, x1)`
    /// by the single-element node `factor`; every other cell passes through.
    pub fn scale_region(
        &mut self,
        x: Var,
        factor: Var,
        (y0, y1): (usize, usize),
        (x0, x1): (usize, usize),
    ) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        assert!(y0 <= y1 && y1 <= xs[0] && x0 <= x1 && x1 <= xs[1], "region outside map");
        let f = self.scalar(factor);
        let mut value = self.value(x).clone();
        value
            .slice_each_axis_mut(|ax| match ax.axis.index() {
                0 => ndarray::Slice::from(y0..y1),
                1 => ndarray::Slice::from(x0..x1),
                _ => ndarray::Slice::from(..),
            })
            .mapv_inplace(|v| v * f);
        self.push(value, &[x, factor], move |cx| {
            let f = *cx.inputs[1].iter().next().unwrap();
            let region = |a: &ArrayD<T>| {
                a.slice_each_axis(|ax| match ax.axis.index() {
                    0 => ndarray::Slice::from(y0..y1),
                    1 => ndarray::Slice::from(x0..x1),
                    _ => ndarray::Slice::from(..),
                })
                .to_owned()
            };
            let dx = cx.needs(0).then(|| {
                let mut g = cx.grad.clone();
                g.slice_each_axis_mut(|ax| match ax.axis.index() {
                    0 => ndarray::Slice::from(y0..y1),
                    1 => ndarray::Slice::from(x0..x1),
                    _ => ndarray::Slice::from(..),
                })
                .mapv_inplace(|v| v * f);
                g
            });
            let df = cx.needs(1).then(|| {
                let total = (&region(cx.grad) * &region(cx.inputs[0])).sum();
                ArrayD::from_elem(cx.inputs[1].raw_dim(), total)
            });
            vec![dx, df]
        })
    }
}

/// Flatten `(H, W, C)` row-major into `(H*W, C)`.
pub fn flatten_hw<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    g.reshape(x, &[s[0] * s[1], s[2]])
}
