//! Bipartite matching between query slots and ground-truth pairs, the
//! matched set-prediction loss and the combined training objective.

use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::iim::PairPredictions;
use crate::nn::Ctx;
use crate::scalar::{lit, Scalar};
use crate::scene::InteractionPair;

/// Relative weights of the classification, L1 box and gIoU terms. The same
/// weights drive the matching cost and the matched loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchWeights {
    pub cls: f64,
    pub box_l1: f64,
    pub giou: f64,
    /// Weight of the no-interaction cross-entropy on unmatched queries.
    pub no_interaction: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            cls: 1.0,
            box_l1: 2.5,
            giou: 1.0,
            no_interaction: 1.0,
        }
    }
}

impl MatchWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cls", self.cls),
            ("box_l1", self.box_l1),
            ("giou", self.giou),
            ("no_interaction", self.no_interaction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("match weight {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Ground-truth pair with boxes normalised to `(cx, cy, w, h)` in image units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtTarget<T> {
    pub human: [T; 4],
    pub object: [T; 4],
    pub object_class: usize,
    pub action_class: usize,
}

impl<T: Scalar> GtTarget<T> {
    pub fn from_pair(p: &InteractionPair, width: usize, height: usize) -> Result<Self> {
        let (w, h) = (T::from_usize(width).unwrap(), T::from_usize(height).unwrap());
        let norm = |b: &crate::scene::PixelBox| -> Result<[T; 4]> {
            if b.x1 >= b.x2 || b.y1 >= b.y2 {
                return Err(Error::Validation(format!(
                    "degenerate ground-truth box [{}, {}, {}, {}]",
                    b.x1, b.y1, b.x2, b.y2
                )));
            }
            Ok(b.to_bbox::<T>().to_cxcywh(w, h))
        };
        Ok(GtTarget {
            human: norm(&p.human_box)?,
            object: norm(&p.object_box)?,
            object_class: p.object_class,
            action_class: p.action_class,
        })
    }
}

/// Cost of assigning one query to one ground-truth pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub cls_cost: f64,
    pub box_cost: f64,
    pub iou_cost: f64,
    pub total: f64,
}

/// One query's predictions.
#[derive(Clone, Copy, Debug)]
pub struct QueryPrediction<'a, T> {
    pub human_box: [T; 4],
    pub object_box: [T; 4],
    /// Softmax probabilities.
    pub object_probs: &'a [T],
    pub action_probs: &'a [T],
}

fn unit_box<T: Scalar>(c: &[T; 4]) -> BBox<T> {
    BBox::from_cxcywh(*c, T::one(), T::one())
}

/// `cls = -p_obj[gt] - p_act[gt]`, `box` = mean absolute difference over
/// the 8 normalised coordinates, `iou = (1 - gIoU_h) + (1 - gIoU_o)`.
pub fn pair_cost<T: Scalar>(pred: &QueryPrediction<'_, T>, gt: &GtTarget<T>, w: &MatchWeights) -> Result<CostBreakdown> {
    for b in [&gt.human, &gt.object] {
        if !(b[2] > T::zero() && b[3] > T::zero()) {
            return Err(Error::Validation("degenerate ground-truth box".into()));
        }
    }
    let (Some(&po), Some(&pa)) = (
        pred.object_probs.get(gt.object_class),
        pred.action_probs.get(gt.action_class),
    ) else {
        return Err(Error::Validation("ground-truth class outside the prediction width".into()));
    };
    let cls = -(po.to_f64_lossy()) - pa.to_f64_lossy();
    let l1: f64 = pred
        .human_box
        .iter()
        .zip(&gt.human)
        .chain(pred.object_box.iter().zip(&gt.object))
        .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
        .sum::<f64>()
        / 8.0;
    let giou_h = unit_box(&pred.human_box).giou(&unit_box(&gt.human)).to_f64_lossy();
    let giou_o = unit_box(&pred.object_box).giou(&unit_box(&gt.object)).to_f64_lossy();
    let iou = (1.0 - giou_h) + (1.0 - giou_o);
    Ok(CostBreakdown {
        cls_cost: cls,
        box_cost: l1,
        iou_cost: iou,
        total: w.cls * cls + w.box_l1 * l1 + w.giou * iou,
    })
}

/// Cost matrix `(N_q, N_gt)`.
pub fn cost_matrix<T: Scalar>(preds: &PairPredictions<T>, gts: &[GtTarget<T>], w: &MatchWeights) -> Result<Array2<f64>> {
    let po = preds.object_probs();
    let pa = preds.action_probs();
    let nq = preds.num_queries();
    let mut cost = Array2::zeros((nq, gts.len()));
    for q in 0..nq {
        let row = |a: &Array2<T>| [a[[q, 0]], a[[q, 1]], a[[q, 2]], a[[q, 3]]];
        let obj = po.row(q).to_vec();
        let act = pa.row(q).to_vec();
        let pred = QueryPrediction {
            human_box: row(&preds.human_boxes),
            object_box: row(&preds.object_boxes),
            object_probs: &obj,
            action_probs: &act,
        };
        for (j, gt) in gts.iter().enumerate() {
            cost[[q, j]] = pair_cost(&pred, gt, w)?.total;
        }
    }
    Ok(cost)
}

/// Query-to-ground-truth assignment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(query, gt)` pairs sorted by ground-truth index.
    pub assignment: Vec<(usize, usize)>,
    /// Queries with no ground-truth partner, ascending.
    pub unmatched: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Ground-truth index assigned to each query.
    pub fn gt_of_query(&self, num_queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_queries];
        for &(q, g) in &self.assignment {
            out[q] = Some(g);
        }
        out
    }
}

/// Minimum-cost assignment of every column (ground-truth pair) to a
/// distinct row (query) of `cost: (N_q, N_gt)`.
///
/// Shortest augmenting paths with dual potentials, `O(N_gt^2 N_q)`.
pub fn hungarian(cost: &Array2<f64>) -> Result<MatchResult> {
    let (nq, ngt) = cost.dim();
    if ngt > nq {
        return Err(Error::Capacity { gt: ngt, queries: nq });
    }
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite matching cost {v}")));
    }
    // Rows of the working problem are ground-truth pairs (n <= m), 1-based
    // with index 0 as the virtual source.
    let (n, m) = (ngt, nq);
    let a = |i: usize, j: usize| cost[[j - 1, i - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (j - 1, p[j] - 1)).collect();
    assignment.sort_by_key(|&(_, g)| g);
    let matched: std::collections::BTreeSet<usize> = assignment.iter().map(|&(q, _)| q).collect();
    let unmatched = (0..nq).filter(|q| !matched.contains(q)).collect();
    let total_cost = assignment.iter().map(|&(q, g)| cost[[q, g]]).sum();
    Ok(MatchResult {
        assignment,
        unmatched,
        total_cost,
    })
}

/// Prediction nodes consumed by [`match_loss`].
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub human_boxes: Var,
    pub object_boxes: Var,
    pub object_logits: Var,
    pub action_logits: Var,
}

/// Values of the individual matched-loss terms, already weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchLossParts {
    pub object_ce: f64,
    pub action_ce: f64,
    pub box_l1: f64,
    pub giou: f64,
}

/// Column `i` of an `(N, 4)` node as `(N, 1)`.
fn col<T: Scalar>(cx: &mut Ctx<'_, T>, b: Var, i: usize) -> Var {
    cx.g.slice_axis(b, 1, i, i + 1)
}

/// Differentiable sum over rows of `1 - gIoU` between `(k, 4)` cxcywh boxes.
fn giou_loss_sum<T: Scalar>(cx: &mut Ctx<'_, T>, pred: Var, target: Var) -> Var {
    let half: T = lit(0.5);
    let mut corners = |b: Var| {
        let (cxv, cyv, w, h) = (col(cx, b, 0), col(cx, b, 1), col(cx, b, 2), col(cx, b, 3));
        let hw = cx.g.scale(w, half);
        let hh = cx.g.scale(h, half);
        let x1 = cx.g.sub(cxv, hw);
        let x2 = cx.g.add(cxv, hw);
        let y1 = cx.g.sub(cyv, hh);
        let y2 = cx.g.add(cyv, hh);
        let area = cx.g.mul(w, h);
        (x1, y1, x2, y2, area)
    };
    let (ax1, ay1, ax2, ay2, aa) = corners(pred);
    let (bx1, by1, bx2, by2, ba) = corners(target);
    let ix1 = cx.g.maximum(ax1, bx1);
    let ix2 = cx.g.minimum(ax2, bx2);
    let iy1 = cx.g.maximum(ay1, by1);
    let iy2 = cx.g.minimum(ay2, by2);
    let iw = cx.g.sub(ix2, ix1);
    let iw = cx.g.relu(iw);
    let ih = cx.g.sub(iy2, iy1);
    let ih = cx.g.relu(ih);
    let inter = cx.g.mul(iw, ih);
    let sum_areas = cx.g.add(aa, ba);
    let union = cx.g.sub(sum_areas, inter);
    let hx1 = cx.g.minimum(ax1, bx1);
    let hx2 = cx.g.maximum(ax2, bx2);
    let hy1 = cx.g.minimum(ay1, by1);
    let hy2 = cx.g.maximum(ay2, by2);
    let hw = cx.g.sub(hx2, hx1);
    let hh = cx.g.sub(hy2, hy1);
    let hull = cx.g.mul(hw, hh);
    let iou = cx.g.div(inter, union);
    let gap = cx.g.sub(hull, union);
    let penalty = cx.g.div(gap, hull);
    let giou = cx.g.sub(iou, penalty);
    let k = cx.g.shape(giou)[0];
    let s = cx.g.sum(giou);
    let neg = cx.g.neg(s);
    cx.g.add_scalar(neg, T::from_usize(k).unwrap())
}

/// Matched set-prediction loss for one image:
///
/// `sum_matched [w_cls (CE_obj + CE_act) + w_box L1/8 + w_giou ((1 - gIoU_h) + (1 - gIoU_o))]
///  + w_none * sum_unmatched CE_act(no_interaction)`.
///
/// The assignment is treated as a constant.
pub fn match_loss<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    preds: PredictionVars,
    gts: &[GtTarget<T>],
    m: &MatchResult,
    w: &MatchWeights,
    no_interaction: usize,
) -> Result<(Var, MatchLossParts)> {
    let nq = cx.g.shape(preds.action_logits)[0];
    let gt_of = m.gt_of_query(nq);
    for &(q, g) in &m.assignment {
        if q >= nq || g >= gts.len() {
            return Err(Error::Validation(format!("assignment ({q}, {g}) out of range")));
        }
    }
    let mut parts = MatchLossParts::default();

    // actions: matched queries toward their pair, the rest toward no-interaction
    let (targets, weights): (Vec<usize>, Vec<T>) = gt_of
        .iter()
        .map(|g| match g {
            Some(g) => (gts[*g].action_class, lit::<T>(w.cls)),
            None => (no_interaction, lit(w.no_interaction)),
        })
        .unzip();
    let mut total = cx.g.cross_entropy(preds.action_logits, &targets, &weights, false);
    parts.action_ce = cx.g.scalar(total).to_f64_lossy();

    if !m.assignment.is_empty() {
        let q_idx: Vec<usize> = m.assignment.iter().map(|&(q, _)| q).collect();
        let k = q_idx.len();
        let obj_logits = cx.g.select_rows(preds.object_logits, &q_idx);
        let obj_targets: Vec<usize> = m.assignment.iter().map(|&(_, g)| gts[g].object_class).collect();
        let obj_ce = cx.g.cross_entropy(obj_logits, &obj_targets, &vec![lit(w.cls); k], false);
        parts.object_ce = cx.g.scalar(obj_ce).to_f64_lossy();
        total = cx.g.add(total, obj_ce);

        for (boxes, pick) in [
            (preds.human_boxes, (|t: &GtTarget<T>| t.human) as fn(&GtTarget<T>) -> [T; 4]),
            (preds.object_boxes, |t: &GtTarget<T>| t.object),
        ] {
            let sel = cx.g.select_rows(boxes, &q_idx);
            let tv: Vec<T> = m.assignment.iter().flat_map(|&(_, g)| pick(&gts[g])).collect();
            let target = cx.g.constant(ArrayD::from_shape_vec(vec![k, 4], tv).unwrap());
            let d = cx.g.sub(sel, target);
            let d = cx.g.abs(d);
            let l1 = cx.g.sum(d);
            let l1 = cx.g.scale(l1, lit(w.box_l1 / 8.0));
            parts.box_l1 += cx.g.scalar(l1).to_f64_lossy();
            total = cx.g.add(total, l1);
            let gl = giou_loss_sum(cx, sel, target);
            let gl = cx.g.scale(gl, lit(w.giou));
            parts.giou += cx.g.scalar(gl).to_f64_lossy();
            total = cx.g.add(total, gl);
        }
    }
    Ok((total, parts))
}

/// Loss components of one step and their weighted combination
/// `total = alpha * match_loss + beta * (bce_loss + ce_loss)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub match_loss: f64,
    pub bce_loss: f64,
    pub ce_loss: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.5;

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::Config(format!(
            "loss weights must be finite and non-negative, got alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok(())
}

pub fn total_loss(match_loss: f64, bce: f64, ce: f64, alpha: f64, beta: f64) -> Result<LossReport> {
    check_weights(alpha, beta)?;
    Ok(LossReport {
        match_loss,
        bce_loss: bce,
        ce_loss: ce,
        total: alpha * match_loss + beta * (bce + ce),
        alpha,
        beta,
    })
}

/// Graph form of [`total_loss`]; `bce` is `None` when the contact prior is
/// disabled.
pub fn total_loss_graph<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    match_loss: Var,
    bce: Option<Var>,
    ce: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    check_weights(alpha, beta)?;
    let seg = match bce {
        Some(b) => cx.g.add(b, ce),
        None => ce,
    };
    let a = cx.g.scale(match_loss, lit(alpha));
    let b = cx.g.scale(seg, lit(beta));
    Ok(cx.g.add(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use ndarray::array;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if g == cost.ncols() {
                *best = best.min(acc);
                return;
            }
            for q in 0..cost.nrows() {
                if !used[q] {
                    used[q] = true;
                    rec(cost, g + 1, used, acc + cost[[q, g]], best);
                    used[q] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_favouring_matrix() {
        let c = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let m = hungarian(&c).unwrap();
        assert_eq!(m.assignment, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(m.total_cost, 0.0);
        assert!(m.unmatched.is_empty());
    }

    #[test]
    fn two_by_two_case() {
        let c = array![[1.0, 2.0], [2.0, 1.0]];
        let m = hungarian(&c).unwrap();
        // oracle: the two permutations cost 2 and 4
        assert_eq!(brute_force(&c), 2.0);
        assert_eq!(m.assignment, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total_cost, 2.0);
    }

    #[test]
    fn rectangular_and_empty() {
        let c = array![[5.0], [1.0], [3.0]];
        let m = hungarian(&c).unwrap();
        assert_eq!(m.assignment, vec![(1, 0)]);
        assert_eq!(m.unmatched, vec![0, 2]);
        let e = Array2::<f64>::zeros((4, 0));
        let m = hungarian(&e).unwrap();
        assert!(m.assignment.is_empty());
        assert_eq!(m.unmatched, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_ground_truths() {
        let c = Array2::<f64>::zeros((2, 3));
        match hungarian(&c) {
            Err(Error::Capacity { gt, queries }) => assert_eq!((gt, queries), (3, 2)),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn perfect_boxes_have_zero_box_terms() {
        let gt = GtTarget {
            human: [0.3, 0.4, 0.2, 0.5],
            object: [0.6, 0.5, 0.1, 0.1],
            object_class: 1,
            action_class: 0,
        };
        let pred = QueryPrediction {
            human_box: gt.human,
            object_box: gt.object,
            object_probs: &[0.2, 0.8],
            action_probs: &[0.7, 0.3],
        };
        let c = pair_cost(&pred, &gt, &MatchWeights::default()).unwrap();
        assert_eq!(c.box_cost, 0.0);
        assert!(c.iou_cost.abs() < 1e-15);
        assert!((c.cls_cost + 1.5).abs() < 1e-15);
        assert!((c.total - c.cls_cost).abs() < 1e-15);
    }

    #[test]
    fn far_apart_boxes_cost_more_than_one_each() {
        let gt = GtTarget {
            human: [0.05, 0.05, 0.01, 0.01],
            object: [0.05, 0.05, 0.01, 0.01],
            object_class: 0,
            action_class: 0,
        };
        let pred = QueryPrediction {
            human_box: [0.9, 0.9, 0.01, 0.01],
            object_box: [0.9, 0.9, 0.01, 0.01],
            object_probs: &[1.0],
            action_probs: &[1.0],
        };
        let c = pair_cost(&pred, &gt, &MatchWeights::default()).unwrap();
        assert!(c.iou_cost > 2.0);
    }

    #[test]
    fn degenerate_gt_rejected() {
        let p = InteractionPair {
            human_box: [4, 4, 4, 10].into(),
            object_box: [0, 0, 5, 5].into(),
            object_class: 0,
            action_class: 0,
            contact_parts: vec![],
        };
        assert!(matches!(GtTarget::<f64>::from_pair(&p, 32, 32), Err(Error::Validation(_))));
    }

    #[test]
    fn total_loss_cases() {
        let r = total_loss(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(r.total, 3.0);
        let r = total_loss(2.0, 0.4, 0.6, DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        assert!((r.total - 0.7).abs() < 1e-9);
        assert_eq!((DEFAULT_ALPHA, DEFAULT_BETA), (0.1, 0.5));
        let r = total_loss(5.0, 0.4, 0.6, 0.0, 1.0).unwrap();
        assert_eq!(r.total, 1.0);
        assert!(matches!(total_loss(1.0, 1.0, 1.0, -0.1, 0.5), Err(Error::Config(_))));
    }

    fn logits(rows: &[&[f64]]) -> ArrayD<f64> {
        let n = rows.len();
        let k = rows[0].len();
        ArrayD::from_shape_vec(vec![n, k], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn ln_softmax(row: &[f64], i: usize) -> f64 {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row[i] - m - z.ln()
    }

    #[test]
    fn empty_scene_is_no_interaction_ce() {
        let store = ParamStore::<f64>::new();
        let mut cx = Ctx::inference(&store);
        let act: &[&[f64]] = &[&[0.1, 0.2, -0.3], &[1.0, 0.0, 0.5]];
        let preds = PredictionVars {
            human_boxes: cx.g.input(ArrayD::from_elem(vec![2, 4], 0.5)),
            object_boxes: cx.g.input(ArrayD::from_elem(vec![2, 4], 0.5)),
            object_logits: cx.g.input(ArrayD::zeros(vec![2, 2])),
            action_logits: cx.g.input(logits(act)),
        };
        let m = hungarian(&Array2::zeros((2, 0))).unwrap();
        let (l, parts) = match_loss(&mut cx, preds, &[], &m, &MatchWeights::default(), 2).unwrap();
        let expected = -(ln_softmax(act[0], 2) + ln_softmax(act[1], 2));
        assert!((cx.g.scalar(l) - expected).abs() < 1e-12);
        assert_eq!(parts.box_l1, 0.0);
    }

    #[test]
    fn one_gt_two_queries_hand_sum() {
        let store = ParamStore::<f64>::new();
        let mut cx = Ctx::inference(&store);
        let gt = GtTarget {
            human: [0.5, 0.5, 0.4, 0.4],
            object: [0.25, 0.25, 0.2, 0.2],
            object_class: 1,
            action_class: 0,
        };
        let hb = [0.5, 0.5, 0.2, 0.4];
        let ob = [0.25, 0.25, 0.2, 0.2];
        let obj: &[&[f64]] = &[&[0.0, 1.0], &[2.0, 0.0]];
        let act: &[&[f64]] = &[&[1.0, 0.0, 0.0], &[0.0, 0.0, 2.0]];
        let preds = PredictionVars {
            human_boxes: cx.g.input(logits(&[&hb, &[0.1, 0.1, 0.1, 0.1]])),
            object_boxes: cx.g.input(logits(&[&ob, &[0.9, 0.9, 0.1, 0.1]])),
            object_logits: cx.g.input(logits(obj)),
            action_logits: cx.g.input(logits(act)),
        };
        let m = MatchResult {
            assignment: vec![(0, 0)],
            unmatched: vec![1],
            total_cost: 0.0,
        };
        let w = MatchWeights::default();
        let (l, _) = match_loss(&mut cx, preds, &[gt], &m, &w, 2).unwrap();
        // oracle: human box width 0.2 vs 0.4 inside the same centre:
        // L1 = 0.2 over 8 coords; IoU = 0.08/0.16 = 0.5, hull = union, gIoU = 0.5
        let ce_obj = -ln_softmax(obj[0], 1);
        let ce_act = -ln_softmax(act[0], 0);
        let ce_none = -ln_softmax(act[1], 2);
        let expected = ce_obj + ce_act + 2.5 * 0.2 / 8.0 + (1.0 - 0.5) + 0.0 + ce_none;
        assert!((cx.g.scalar(l) - expected).abs() < 1e-12, "{} vs {expected}", cx.g.scalar(l));
    }
}
