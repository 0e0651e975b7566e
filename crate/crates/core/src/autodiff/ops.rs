//! Elementwise, linear-algebra, shape and reduction ops.

use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn, Slice, Zip};

use super::graph::{Graph, Var};
use crate::scalar::Scalar;

pub(crate) fn view2<T: Scalar>(a: &ArrayD<T>) -> ArrayView2<'_, T> {
    a.view()
        .into_dimensionality()
        .expect("expected a 2-d tensor")
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, op: &str) {
    assert_eq!(
        g.shape(a),
        g.shape(b),
        "{op}: operand shapes differ"
    );
}

/// Sum `grad` (shape of the broadcast output) down to a trailing-axis vector.
fn sum_to_last<T: Scalar>(grad: &ArrayD<T>) -> ArrayD<T> {
    let c = *grad.shape().last().unwrap();
    let rows = grad.len() / c;
    let flat = grad
        .view()
        .into_shape_with_order((rows, c))
        .expect("contiguous gradient");
    flat.sum_axis(Axis(0)).into_dyn()
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let value = self.value(a) + self.value(b);
        self.push(value, &[a, b], |cx| {
            vec![
                cx.needs(0).then(|| cx.grad.clone()),
                cx.needs(1).then(|| cx.grad.clone()),
            ]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, &[a, b], |cx| {
            vec![
                cx.needs(0).then(|| cx.grad.clone()),
                cx.needs(1).then(|| cx.grad.mapv(|v| -v)),
            ]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let value = self.value(a) * self.value(b);
        self.push(value, &[a, b], |cx| {
            vec![
                cx.needs(0).then(|| cx.grad * cx.inputs[1]),
                cx.needs(1).then(|| cx.grad * cx.inputs[0]),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "div");
        let value = self.value(a) / self.value(b);
        self.push(value, &[a, b], |cx| {
            vec![
                cx.needs(0).then(|| cx.grad / cx.inputs[1]),
                cx.needs(1).then(|| {
                    let mut g = cx.grad * cx.out / cx.inputs[1];
                    g.mapv_inplace(|v| -v);
                    g
                }),
            ]
        })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "minimum");
        let value = Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| if x <= y { x } else { y });
        self.push(value, &[a, b], |cx| {
            let pick_a = Zip::from(cx.inputs[0])
                .and(cx.inputs[1])
                .map_collect(|&x, &y| x <= y);
            select_grad(cx.grad, &pick_a, cx.needs(0), cx.needs(1))
        })
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "maximum");
        let value = Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| if x >= y { x } else { y });
        self.push(value, &[a, b], |cx| {
            let pick_a = Zip::from(cx.inputs[0])
                .and(cx.inputs[1])
                .map_collect(|&x, &y| x >= y);
            select_grad(cx.grad, &pick_a, cx.needs(0), cx.needs(1))
        })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| -v);
        self.push(value, &[a], |cx| vec![Some(cx.grad.mapv(|v| -v))])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) * c;
        self.push(value, &[a], move |cx| vec![Some(cx.grad * c)])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) + c;
        self.push(value, &[a], |cx| vec![Some(cx.grad.clone())])
    }

    /// Multiply every element of `a` by the single-element node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a) * sv;
        self.push(value, &[a, s], |cx| {
            let s = *cx.inputs[1].iter().next().unwrap();
            vec![
                cx.needs(0).then(|| cx.grad * s),
                cx.needs(1).then(|| {
                    let total = Zip::from(cx.grad)
                        .and(cx.inputs[0])
                        .fold(T::zero(), |acc, &g, &x| acc + g * x);
                    ArrayD::from_elem(cx.inputs[1].raw_dim(), total)
                }),
            ]
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, &[a], |cx| {
            let g = Zip::from(cx.grad)
                .and(cx.inputs[0])
                .map_collect(|&g, &x| if x > T::zero() { g } else { T::zero() });
            vec![Some(g)]
        })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).mapv(|x| if x > T::zero() { x } else { x * slope });
        self.push(value, &[a], move |cx| {
            let g = Zip::from(cx.grad)
                .and(cx.inputs[0])
                .map_collect(|&g, &x| if x > T::zero() { g } else { g * slope });
            vec![Some(g)]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, &[a], |cx| {
            let g = Zip::from(cx.grad)
                .and(cx.out)
                .map_collect(|&g, &y| g * y * (T::one() - y));
            vec![Some(g)]
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.exp());
        self.push(value, &[a], |cx| vec![Some(cx.grad * cx.out)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.ln());
        self.push(value, &[a], |cx| vec![Some(cx.grad / cx.inputs[0])])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.abs());
        self.push(value, &[a], |cx| {
            let g = Zip::from(cx.grad).and(cx.inputs[0]).map_collect(|&g, &x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            });
            vec![Some(g)]
        })
    }

    /// `a` of shape `(..., C)` plus `b` of shape `(C)` broadcast over leading axes.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let c = *self.shape(a).last().expect("add_bias on a 0-d tensor");
        assert_eq!(self.shape(b), &[c], "add_bias: bias length mismatch");
        let bias = self.value(b).clone();
        let mut value = self.value(a).clone();
        let last = Axis(value.ndim() - 1);
        for mut lane in value.lanes_mut(last) {
            lane += &bias;
        }
        self.push(value, &[a, b], |cx| {
            vec![
                cx.needs(0).then(|| cx.grad.clone()),
                cx.needs(1).then(|| sum_to_last(cx.grad)),
            ]
        })
    }

    /// `a` of shape `(..., C)` times `g` of shape `(C)`, channel-wise.
    pub fn mul_channels(&mut self, a: Var, gate: Var) -> Var {
        let c = *self.shape(a).last().expect("mul_channels on a 0-d tensor");
        assert_eq!(self.shape(gate), &[c], "mul_channels: gate length mismatch");
        let gv = self.value(gate).clone();
        let mut value = self.value(a).clone();
        let last = Axis(value.ndim() - 1);
        for mut lane in value.lanes_mut(last) {
            lane *= &gv;
        }
        self.push(value, &[a, gate], |cx| {
            let gate = cx.inputs[1];
            vec![
                cx.needs(0).then(|| {
                    let mut g = cx.grad.clone();
                    let last = Axis(g.ndim() - 1);
                    for mut lane in g.lanes_mut(last) {
                        lane *= gate;
                    }
                    g
                }),
                cx.needs(1).then(|| {
                    let prod = cx.grad * cx.inputs[0];
                    sum_to_last(&prod)
                }),
            ]
        })
    }

    /// Repeat a `(C)` vector into `n` rows: `(n, C)`.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Var {
        let c = self.shape(v)[0];
        assert_eq!(self.shape(v).len(), 1);
        let row = self.value(v).clone();
        let value = row
            .broadcast(IxDyn(&[n, c]))
            .expect("broadcast")
            .to_owned();
        self.push(value, &[v], |cx| vec![Some(view2(cx.grad).sum_axis(Axis(0)).into_dyn())])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = view2(self.value(a)).dot(&view2(self.value(b))).into_dyn();
        self.push(value, &[a, b], |cx| {
            let g = view2(cx.grad);
            vec![
                cx.needs(0).then(|| g.dot(&view2(cx.inputs[1]).t()).into_dyn()),
                cx.needs(1).then(|| view2(cx.inputs[0]).t().dot(&g).into_dyn()),
            ]
        })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = view2(self.value(a)).t().to_owned().into_dyn();
        self.push(value, &[a], |cx| vec![Some(view2(cx.grad).t().to_owned().into_dyn())])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let from: Vec<usize> = self.shape(a).to_vec();
        let value = self
            .value(a)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {from:?} -> {shape:?}: {e}"));
        self.push(value, &[a], move |cx| {
            let g = cx
                .grad
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&from))
                .expect("reshape back");
            vec![Some(g)]
        })
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Var {
        assert!(start <= end && end <= self.shape(a)[axis], "slice out of range");
        let value = self
            .value(a)
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        let full = self.value(a).raw_dim();
        self.push(value, &[a], move |cx| {
            let mut g = ArrayD::zeros(full.clone());
            g.slice_axis_mut(Axis(axis), Slice::from(start..end))
                .assign(cx.grad);
            vec![Some(g)]
        })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        self.push(value, parts, move |cx| {
            let mut offset = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let piece = cx.needs(i).then(|| {
                        cx.grad
                            .slice_axis(Axis(axis), Slice::from(offset..offset + n))
                            .to_owned()
                    });
                    offset += n;
                    piece
                })
                .collect()
        })
    }

    /// Gather rows of a 2-d tensor. Repeated indices accumulate on backward.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = view2(self.value(a));
        let (n, c) = src.dim();
        let mut value = Array2::zeros((rows.len(), c));
        for (dst, &r) in rows.iter().enumerate() {
            assert!(r < n, "select_rows: row {r} out of {n}");
            value.row_mut(dst).assign(&src.row(r));
        }
        let rows = rows.to_vec();
        self.push(value.into_dyn(), &[a], move |cx| {
            let g = view2(cx.grad);
            let mut out = Array2::zeros((n, c));
            for (src_row, &r) in rows.iter().enumerate() {
                let mut dst = out.row_mut(r);
                dst += &g.row(src_row);
            }
            vec![Some(out.into_dyn())]
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.push(value, &[a], |cx| {
            let g = *cx.grad.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(cx.inputs[0].raw_dim(), g))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Mean over every axis except the last: `(..., C) -> (C)`.
    pub fn mean_keep_last(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let c = *shape.last().unwrap();
        let rows = self.value(a).len() / c;
        let inv = T::one() / T::from_usize(rows).unwrap();
        let value = self
            .value(a)
            .as_standard_layout()
            .into_shape_with_order((rows, c))
            .expect("contiguous")
            .sum_axis(Axis(0))
            .mapv(|v| v * inv)
            .into_dyn();
        self.push(value, &[a], move |cx| {
            let g = cx.grad.mapv(|v| v * inv);
            let full = g
                .broadcast(IxDyn(&[rows, c]))
                .unwrap()
                .to_owned()
                .into_shape_with_order(IxDyn(&shape))
                .unwrap();
            vec![Some(full)]
        })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_last(self.value(a));
        self.push(value, &[a], |cx| {
            let mut g = cx.grad * cx.out;
            let last = Axis(g.ndim() - 1);
            for (mut lane, y) in g.lanes_mut(last).into_iter().zip(cx.out.lanes(last)) {
                let s = lane.sum();
                Zip::from(&mut lane).and(&y).for_each(|gl, &yl| *gl = *gl - yl * s);
            }
            vec![Some(g)]
        })
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_last(self.value(a));
        self.push(value, &[a], |cx| {
            let mut g = cx.grad.clone();
            let last = Axis(g.ndim() - 1);
            for (mut lane, ly) in g.lanes_mut(last).into_iter().zip(cx.out.lanes(last)) {
                let s = lane.sum();
                Zip::from(&mut lane)
                    .and(&ly)
                    .for_each(|gl, &l| *gl = *gl - l.exp() * s);
            }
            vec![Some(g)]
        })
    }
}

fn select_grad<T: Scalar>(
    grad: &ArrayD<T>,
    pick_a: &ArrayD<bool>,
    need_a: bool,
    need_b: bool,
) -> Vec<Option<ArrayD<T>>> {
    let ga = need_a.then(|| {
        Zip::from(grad)
            .and(pick_a)
            .map_collect(|&g, &p| if p { g } else { T::zero() })
    });
    let gb = need_b.then(|| {
        Zip::from(grad)
            .and(pick_a)
            .map_collect(|&g, &p| if p { T::zero() } else { g })
    });
    vec![ga, gb]
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_last<T: Scalar>(x: &ArrayD<T>) -> ArrayD<T> {
    let mut out = x.clone();
    let last = Axis(out.ndim() - 1);
    for mut lane in out.lanes_mut(last) {
        let m = lane.fold(T::neg_infinity(), |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - m).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
    out
}

pub fn log_softmax_last<T: Scalar>(x: &ArrayD<T>) -> ArrayD<T> {
    let mut out = x.clone();
    let last = Axis(out.ndim() - 1);
    for mut lane in out.lanes_mut(last) {
        let m = lane.fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = m + lane.fold(T::zero(), |acc, &v| acc + (v - m).exp()).ln();
        lane.mapv_inplace(|v| v - lse);
    }
    out
}
