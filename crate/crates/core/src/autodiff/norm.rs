//! Parameter-free normalisation ops. Affine scale/shift are applied by the
//! layers with `mul_channels` and `add_bias`.

use ndarray::{Array2, ArrayD, IxDyn};

use super::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Statistics of one normalisation group, kept for backward.
#[derive(Clone, Copy)]
struct GroupStats<T> {
    mean: T,
    inv_std: T,
}

/// Normalise a `(P, C)` matrix. Each group is a contiguous channel block of
/// width `c / groups`, with statistics over all `P` rows of that block.
fn normalize_channel_groups<T: Scalar>(
    x: &Array2<T>,
    groups: usize,
    eps: T,
) -> (Array2<T>, Vec<GroupStats<T>>) {
    let (p, c) = x.dim();
    assert!(c % groups == 0, "channels {c} not divisible by {groups} groups");
    let cg = c / groups;
    let n = T::from_usize(p * cg).unwrap();
    let mut out = x.clone();
    let mut stats = Vec::with_capacity(groups);
    for g in 0..groups {
        let block = x.slice(ndarray::s![.., g * cg..(g + 1) * cg]);
        let mean = block.sum() / n;
        let var = block.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
        let inv_std = T::one() / (var + eps).sqrt();
        out.slice_mut(ndarray::s![.., g * cg..(g + 1) * cg])
            .mapv_inplace(|v| (v - mean) * inv_std);
        stats.push(GroupStats { mean, inv_std });
    }
    (out, stats)
}

fn normalize_channel_groups_backward<T: Scalar>(
    grad: &Array2<T>,
    xhat: &Array2<T>,
    stats: &[GroupStats<T>],
) -> Array2<T> {
    let (p, c) = grad.dim();
    let groups = stats.len();
    let cg = c / groups;
    let n = T::from_usize(p * cg).unwrap();
    let mut dx = Array2::zeros((p, c));
    for (g, st) in stats.iter().enumerate() {
        let cols = ndarray::s![.., g * cg..(g + 1) * cg];
        let gb = grad.slice(cols);
        let xb = xhat.slice(cols);
        let sum_g = gb.sum();
        let sum_gx = (&gb * &xb).sum();
        let scale = st.inv_std / n;
        ndarray::Zip::from(dx.slice_mut(cols))
            .and(&gb)
            .and(&xb)
            .for_each(|d, &gv, &xv| *d = scale * (n * gv - sum_g - xv * sum_gx));
    }
    dx
}

impl<T: Scalar> Graph<T> {
    /// Group normalisation of a channel-last tensor `(..., C)`: statistics per
    /// channel group over every leading position.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: T) -> Var {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let p = self.value(x).len() / c;
        let x2 = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((p, c))
            .unwrap();
        let (xhat, stats) = normalize_channel_groups(&x2, groups, eps);
        let value = xhat.clone().into_shape_with_order(IxDyn(&shape)).unwrap();
        self.push(value, &[x], move |cx| {
            let g2 = cx
                .grad
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((p, c))
                .unwrap();
            let dx = normalize_channel_groups_backward(&g2, &xhat, &stats);
            vec![Some(dx.into_shape_with_order(IxDyn(&shape)).unwrap())]
        })
    }

    /// Per-column normalisation of a `(B, C)` batch using batch statistics.
    /// Returns the normalised node plus the batch mean and biased variance.
    pub fn batch_norm_train(&mut self, x: Var, eps: T) -> (Var, Vec<T>, Vec<T>) {
        let x2 = super::ops::view2(self.value(x)).to_owned();
        let c = x2.ncols();
        let (xhat, stats) = normalize_channel_groups(&x2, c, eps);
        let means: Vec<T> = stats.iter().map(|s| s.mean).collect();
        let vars: Vec<T> = stats
            .iter()
            .map(|s| T::one() / (s.inv_std * s.inv_std) - eps)
            .collect();
        let out = xhat.clone().into_dyn();
        let v = self.push(out, &[x], move |cx| {
            let g2 = super::ops::view2(cx.grad).to_owned();
            vec![Some(normalize_channel_groups_backward(&g2, &xhat, &stats).into_dyn())]
        });
        (v, means, vars)
    }

    /// Normalise each row of a `(N, C)` matrix over its `C` entries.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let x2 = super::ops::view2(self.value(x)).to_owned();
        let (n, c) = x2.dim();
        let ct = T::from_usize(c).unwrap();
        let mut xhat = x2.clone();
        let mut inv_stds = Vec::with_capacity(n);
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / ct;
            let var = row.fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / ct;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_stds.push(inv);
        }
        let value: ArrayD<T> = xhat.clone().into_dyn();
        self.push(value, &[x], move |cx| {
            let g = super::ops::view2(cx.grad);
            let mut dx = Array2::zeros((n, c));
            for i in 0..n {
                let gr = g.row(i);
                let xr = xhat.row(i);
                let sum_g = gr.sum();
                let sum_gx = (&gr * &xr).sum();
                let scale = inv_stds[i] / ct;
                ndarray::Zip::from(dx.row_mut(i))
                    .and(&gr)
                    .and(&xr)
                    .for_each(|d, &gv, &xv| *d = scale * (ct * gv - sum_g - xv * sum_gx));
            }
            vec![Some(dx.into_dyn())]
        })
    }
}
