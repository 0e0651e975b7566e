//! Fused loss ops and dropout.

use ndarray::{ArrayD, IxDyn, Zip};
use rand::Rng;

use super::graph::{Graph, Var};
use super::ops::{log_softmax_last, sigmoid, softmax_last, view2};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Weighted cross-entropy of `logits: (N, K)` against class indices.
    ///
    /// Returns `sum_i w_i * -log softmax(logits_i)[t_i] / denom` where
    /// `denom` is `sum_i w_i` when `normalize` is set and 1 otherwise.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
        normalize: bool,
    ) -> Var {
        let lv = view2(self.value(logits)).to_owned();
        let (n, k) = lv.dim();
        assert_eq!(targets.len(), n, "cross_entropy: {} targets for {n} rows", targets.len());
        assert_eq!(weights.len(), n);
        let logp = log_softmax_last(&lv.into_dyn());
        let logp2 = view2(&logp);
        let wsum: T = weights.iter().copied().fold(T::zero(), |a, b| a + b);
        let denom = if normalize && wsum > T::zero() { wsum } else { T::one() };
        let mut total = T::zero();
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            assert!(t < k, "cross_entropy: target {t} out of {k} classes");
            total -= w * logp2[[i, t]];
        }
        let value = ArrayD::from_elem(IxDyn(&[]), total / denom);
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        self.push(value, &[logits], move |cx| {
            let g = *cx.grad.iter().next().unwrap() / denom;
            let mut d = logp.mapv(|l| l.exp());
            {
                let mut d2 = d
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    let mut row = d2.row_mut(i);
                    row[t] -= T::one();
                    row.mapv_inplace(|v| v * w * g);
                }
            }
            vec![Some(d)]
        })
    }

    /// Mean binary cross-entropy of `logits` (any shape) against 0/1 targets
    /// of the same length, computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let lv = self.value(logits).clone();
        assert_eq!(lv.len(), targets.len(), "bce_with_logits: length mismatch");
        let n = T::from_usize(targets.len()).unwrap();
        let tgt = ArrayD::from_shape_vec(lv.raw_dim(), targets.to_vec()).unwrap();
        let total = Zip::from(&lv).and(&tgt).fold(T::zero(), |acc, &x, &y| {
            // max(x,0) - x*y + log(1 + exp(-|x|))
            acc + x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln()
        });
        let value = ArrayD::from_elem(IxDyn(&[]), total / n);
        self.push(value, &[logits], move |cx| {
            let g = *cx.grad.iter().next().unwrap() / n;
            let d = Zip::from(cx.inputs[0])
                .and(&tgt)
                .map_collect(|&x, &y| (sigmoid(x) - y) * g);
            vec![Some(d)]
        })
    }

    /// Inverted dropout. A no-op when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::from_f64(1.0 / (1.0 - p)).unwrap();
        let mask = self
            .value(x)
            .mapv(|_| if rng.random::<f64>() < p { T::zero() } else { keep });
        let m = self.constant(mask);
        self.mul(x, m)
    }
}

/// Softmax probabilities of a logit tensor along its last axis, outside any graph.
pub fn softmax<T: Scalar>(logits: &ArrayD<T>) -> ArrayD<T> {
    softmax_last(logits)
}
