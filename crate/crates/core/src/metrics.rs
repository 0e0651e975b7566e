//! Contact segmentation metrics (SC-Acc, C-Acc, mIoU, wIoU) and pair
//! detection mAP.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::{ContactMap, InteractionPair, NUM_PARTS};

/// Segmentation scores. `sc_acc` is `None` when no ground-truth contact
/// pixel exists; per-class IoU is `None` for classes absent from both maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub sc_acc: Option<f64>,
    pub c_acc: f64,
    pub miou: f64,
    pub wiou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_pixel_weight: Vec<f64>,
}

/// Running counts over a set of images.
#[derive(Clone, Debug, Default)]
pub struct SegAccumulator {
    inter: [u64; NUM_PARTS],
    union: [u64; NUM_PARTS],
    gt_pixels: [u64; NUM_PARTS],
    sc_sum: f64,
    sc_images: usize,
    c_correct: u64,
    c_total: u64,
}

impl SegAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &ContactMap, gt: &ContactMap) -> Result<()> {
        if pred.labels.dim() != gt.labels.dim() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.labels.dim(),
                gt.labels.dim()
            )));
        }
        for m in [pred, gt] {
            m.validate()?;
        }
        let (mut sc_hit, mut sc_all) = (0u64, 0u64);
        for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
            if g != 0 {
                sc_all += 1;
                sc_hit += (p == g) as u64;
                self.gt_pixels[g as usize - 1] += 1;
            }
            self.c_correct += ((p != 0) == (g != 0)) as u64;
            self.c_total += 1;
            for k in 1..=NUM_PARTS as u8 {
                let (ip, ig) = (p == k, g == k);
                if ip || ig {
                    self.union[k as usize - 1] += 1;
                    self.inter[k as usize - 1] += (ip && ig) as u64;
                }
            }
        }
        if sc_all > 0 {
            self.sc_sum += sc_hit as f64 / sc_all as f64;
            self.sc_images += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> SegMetrics {
        let per_class_iou: Vec<Option<f64>> = (0..NUM_PARTS)
            .map(|k| (self.union[k] > 0).then(|| self.inter[k] as f64 / self.union[k] as f64))
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let gt_total: u64 = self.gt_pixels.iter().sum();
        let per_class_pixel_weight: Vec<f64> = self
            .gt_pixels
            .iter()
            .map(|&n| if gt_total > 0 { n as f64 / gt_total as f64 } else { 0.0 })
            .collect();
        let wiou = if gt_total > 0 {
            // weight by raw counts and divide once so a perfect map gives exactly 1
            self.gt_pixels
                .iter()
                .zip(&per_class_iou)
                .map(|(&n, iou)| n as f64 * iou.unwrap_or(0.0))
                .sum::<f64>()
                / gt_total as f64
        } else if present.is_empty() {
            1.0
        } else {
            0.0
        };
        SegMetrics {
            sc_acc: (self.sc_images > 0).then(|| self.sc_sum / self.sc_images as f64),
            c_acc: if self.c_total > 0 {
                self.c_correct as f64 / self.c_total as f64
            } else {
                1.0
            },
            miou,
            wiou,
            per_class_iou,
            per_class_pixel_weight,
        }
    }
}

/// Metrics of a single predicted map (argmax of the segmentation) against
/// the ground truth.
///
/// * SC-Acc: fraction of ground-truth contact pixels predicted with the right part.
/// * C-Acc: pixel accuracy of the contact/background binarisation.
/// * mIoU: mean IoU over the part classes present in either map (1 when none is).
/// * wIoU: IoU weighted by each class's share of the ground-truth contact pixels.
pub fn seg_metrics(pred: &ContactMap, gt: &ContactMap) -> Result<SegMetrics> {
    let mut acc = SegAccumulator::new();
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

/// A detected pair with its confidence `p(object) * p(action)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub human_box: BBox<f64>,
    pub object_box: BBox<f64>,
    pub object_class: usize,
    pub action_class: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub map: f64,
    /// AP per action index, only for actions present in the ground truth.
    pub per_action_ap: BTreeMap<usize, f64>,
}

fn bbox_key(b: &BBox<f64>) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

/// Content-only ordering: score descending, then a fixed tiebreak so the
/// result does not depend on input order.
fn rank(a: &(usize, &ScoredPair), b: &(usize, &ScoredPair)) -> Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then(a.0.cmp(&b.0))
        .then(a.1.object_class.cmp(&b.1.object_class))
        .then_with(|| {
            bbox_key(&a.1.human_box)
                .iter()
                .chain(&bbox_key(&a.1.object_box))
                .zip(bbox_key(&b.1.human_box).iter().chain(&bbox_key(&b.1.object_box)))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Area under the precision-recall curve with all-point interpolation.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

/// Pair-detection mAP. A prediction is a true positive when its action and
/// object class match an unclaimed ground-truth pair of the same image and
/// both the human and the object box reach `iou_thresh` IoU. Predictions
/// are claimed greedily by descending confidence; the mean runs over actions
/// that occur in the ground truth.
pub fn hoi_map(preds: &[Vec<ScoredPair>], gts: &[Vec<InteractionPair>], iou_thresh: f64) -> Result<DetectionMetrics> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} prediction lists for {} images",
            preds.len(),
            gts.len()
        )));
    }
    let gt_boxes: Vec<Vec<(BBox<f64>, BBox<f64>)>> = gts
        .iter()
        .map(|img| {
            img.iter()
                .map(|p| (p.human_box.to_bbox::<f64>(), p.object_box.to_bbox::<f64>()))
                .collect()
        })
        .collect();
    let mut num_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for p in gts.iter().flatten() {
        *num_gt.entry(p.action_class).or_default() += 1;
    }
    let mut per_action_ap = BTreeMap::new();
    for (&action, &n) in &num_gt {
        let mut cands: Vec<(usize, &ScoredPair)> = preds
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| ps.iter().filter(|p| p.action_class == action).map(move |p| (i, p)))
            .collect();
        cands.sort_by(rank);
        let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let tp: Vec<bool> = cands
            .iter()
            .map(|&(img, p)| {
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in gts[img].iter().enumerate() {
                    if claimed[img][j] || g.action_class != action || g.object_class != p.object_class {
                        continue;
                    }
                    let (gh, go) = &gt_boxes[img][j];
                    let (ih, io) = (p.human_box.iou(gh), p.object_box.iou(go));
                    if ih >= iou_thresh && io >= iou_thresh {
                        let q = ih.min(io);
                        if best.is_none_or(|(_, b)| q > b) {
                            best = Some((j, q));
                        }
                    }
                }
                match best {
                    Some((j, _)) => {
                        claimed[img][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_action_ap.insert(action, average_precision(&tp, n));
    }
    let map = if per_action_ap.is_empty() {
        0.0
    } else {
        per_action_ap.values().sum::<f64>() / per_action_ap.len() as f64
    };
    Ok(DetectionMetrics { map, per_action_ap })
}

/// Every evaluation number for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "SC-Acc")]
    pub sc_acc: Option<f64>,
    #[serde(rename = "C-Acc")]
    pub c_acc: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "wIoU")]
    pub wiou: f64,
    pub per_action_ap: BTreeMap<usize, f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_pixel_weight: Vec<f64>,
}

impl MetricsReport {
    pub fn new(images: usize, seg: SegMetrics, det: DetectionMetrics) -> Self {
        MetricsReport {
            images,
            map: det.map,
            sc_acc: seg.sc_acc,
            c_acc: seg.c_acc,
            miou: seg.miou,
            wiou: seg.wiou,
            per_action_ap: det.per_action_ap,
            per_class_iou: seg.per_class_iou,
            per_class_pixel_weight: seg.per_class_pixel_weight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::PixelBox;

    fn map_from(rows: &[&[u8]]) -> ContactMap {
        let h = rows.len();
        let w = rows[0].len();
        ContactMap {
            labels: ndarray::Array2::from_shape_fn((h, w), |(y, x)| rows[y][x]),
        }
    }

    #[test]
    fn perfect_prediction_is_one() {
        let gt = map_from(&[&[0, 1, 1, 0], &[0, 2, 2, 0], &[5, 0, 0, 0], &[5, 0, 0, 17]]);
        let m = seg_metrics(&gt, &gt).unwrap();
        assert_eq!(m.sc_acc, Some(1.0));
        assert_eq!((m.c_acc, m.miou, m.wiou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_background_prediction() {
        // gt: 4 of 16 pixels in contact
        let gt = map_from(&[&[3, 3, 0, 0], &[3, 3, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        let pred = ContactMap::zeros(4, 4);
        let m = seg_metrics(&pred, &gt).unwrap();
        assert!((m.c_acc - 0.75).abs() < 1e-12);
        assert_eq!(m.sc_acc, Some(0.0));
    }

    #[test]
    fn columns_versus_rows_iou() {
        let gt = map_from(&[&[1u8, 1, 0, 0][..]; 4]);
        let pred = map_from(&[&[1, 1, 1, 1], &[1, 1, 1, 1], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        let m = seg_metrics(&pred, &gt).unwrap();
        // oracle: intersection 4, union 8 + 8 - 4 = 12
        assert!((m.per_class_iou[0].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.miou - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.wiou - m.miou).abs() < 1e-12);
    }

    #[test]
    fn no_contact_skips_sc_acc() {
        let m = seg_metrics(&ContactMap::zeros(3, 3), &ContactMap::zeros(3, 3)).unwrap();
        assert_eq!(m.sc_acc, None);
        assert_eq!((m.c_acc, m.miou, m.wiou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn swap_preserves_binary_accuracy_only() {
        let a = map_from(&[&[1, 1, 0], &[2, 0, 0], &[0, 0, 0]]);
        let b = map_from(&[&[1, 2, 2], &[2, 0, 0], &[0, 0, 0]]);
        let ab = seg_metrics(&a, &b).unwrap();
        let ba = seg_metrics(&b, &a).unwrap();
        assert_eq!(ab.c_acc, ba.c_acc);
        assert_ne!(ab.sc_acc, ba.sc_acc);
    }

    fn pair(h: [u32; 4], o: [u32; 4], obj: usize, act: usize) -> InteractionPair {
        InteractionPair {
            human_box: PixelBox::from(h),
            object_box: PixelBox::from(o),
            object_class: obj,
            action_class: act,
            contact_parts: vec![],
        }
    }

    fn scored(p: &InteractionPair, act: usize, score: f64) -> ScoredPair {
        ScoredPair {
            human_box: p.human_box.to_bbox(),
            object_box: p.object_box.to_bbox(),
            object_class: p.object_class,
            action_class: act,
            score,
        }
    }

    #[test]
    fn identical_predictions_give_map_one() {
        let gts = vec![
            vec![pair([0, 0, 10, 20], [5, 5, 15, 15], 1, 0)],
            vec![pair([20, 0, 40, 30], [30, 10, 50, 20], 2, 3), pair([0, 0, 8, 8], [2, 2, 6, 6], 0, 0)],
        ];
        let preds: Vec<Vec<ScoredPair>> = gts
            .iter()
            .map(|img| img.iter().map(|p| scored(p, p.action_class, 1.0)).collect())
            .collect();
        let d = hoi_map(&preds, &gts, 0.5).unwrap();
        assert_eq!(d.map, 1.0);
        assert_eq!(d.per_action_ap.len(), 2);
    }

    #[test]
    fn wrong_action_scores_zero() {
        let g = pair([0, 0, 10, 20], [5, 5, 15, 15], 1, 0);
        let d = hoi_map(&[vec![scored(&g, 1, 0.9)]], &[vec![g]], 0.5).unwrap();
        assert_eq!(d.per_action_ap[&0], 0.0);
    }

    #[test]
    fn hand_walked_pr_curve() {
        let g1 = pair([0, 0, 10, 10], [10, 10, 20, 20], 0, 2);
        let g2 = pair([40, 40, 50, 50], [50, 50, 60, 60], 0, 2);
        let far = pair([80, 80, 90, 90], [90, 90, 100, 100], 0, 2);
        let preds = vec![vec![scored(&g1, 2, 0.9), scored(&far, 2, 0.8), scored(&g2, 2, 0.7)]];
        let d = hoi_map(&preds, &[vec![g1, g2]], 0.5).unwrap();
        // oracle: PR points (1, 0.5), (0.5, 0.5), (2/3, 1); the interpolated
        // precision at recall 0.5 is 1, so AP = 0.5 * 1 + 0.5 * 2/3
        let expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
        assert!((d.per_action_ap[&2] - expected).abs() < 1e-12);
        assert!((d.map - 0.8333333333).abs() < 1e-6);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = pair([0, 0, 10, 10], [10, 10, 20, 20], 0, 1);
        let preds = vec![vec![scored(&g, 1, 0.9), scored(&g, 1, 0.8)]];
        let d = hoi_map(&preds, &[vec![g.clone()]], 0.5).unwrap();
        assert_eq!(d.per_action_ap[&1], 1.0);
        let preds = vec![vec![scored(&g, 1, 0.8), ScoredPair { score: 0.9, object_class: 3, ..scored(&g, 1, 0.0) }]];
        let d = hoi_map(&preds, &[vec![g.clone()]], 0.5).unwrap();
        assert_eq!(d.per_action_ap[&1], 0.5);
    }
}
