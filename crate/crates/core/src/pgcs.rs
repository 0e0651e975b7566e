//! Contact segmentation branch: interaction-region enhancement of the
//! backbone map, a four-stage upsampling decoder, a channel gate driven by
//! the contact prior, and the per-pixel part classifier.

use ndarray::{Array2, Array3, ArrayD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{flatten_hw, Var};
use crate::error::{Error, Result};
use crate::geometry::{enclosing_rectangle, scale_to_grid, BBox, GridRect, STRIDE};
use crate::nn::{Conv2d, Ctx, GroupNorm, Init, Linear};
use crate::params::{filled, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::scene::{ContactMap, NUM_PARTS};

/// Channels of the segmentation output: background plus 17 parts.
pub const SEG_CHANNELS: usize = NUM_PARTS + 1;

/// Decoder stages; each doubles the resolution, taking stride 32 to stride 2.
pub const DECODER_STAGES: usize = 4;

/// How the enhanced region is formed from the interaction boxes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// One rectangle enclosing every human and object box in the image.
    #[default]
    Global,
    /// One rectangle per pair. Reserved; rejected at validation.
    PerPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgcsConfig {
    pub decoder_width: usize,
    pub groups: usize,
    pub attention_hidden: usize,
    /// Cross-entropy weight of background pixels; part pixels weigh 1.
    pub background_weight: f64,
    pub region: RegionMode,
    /// Queries whose no-interaction probability is below this feed the
    /// enclosing rectangle at inference.
    pub interaction_threshold: f64,
}

impl Default for PgcsConfig {
    fn default() -> Self {
        PgcsConfig {
            decoder_width: 64,
            groups: 8,
            attention_hidden: 32,
            background_weight: 0.25,
            region: RegionMode::Global,
            interaction_threshold: 0.5,
        }
    }
}

impl PgcsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decoder_width == 0 || self.decoder_width % self.groups != 0 {
            return Err(Error::Config(format!(
                "decoder width {} is not a positive multiple of {} groups",
                self.decoder_width, self.groups
            )));
        }
        if self.attention_hidden == 0 {
            return Err(Error::Config("attention_hidden must be positive".into()));
        }
        if !(self.background_weight > 0.0) {
            return Err(Error::Config(format!(
                "background_weight must be positive, got {}",
                self.background_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.interaction_threshold) {
            return Err(Error::Config("interaction_threshold outside [0, 1]".into()));
        }
        if self.region == RegionMode::PerPair {
            return Err(Error::Config(
                "region = \"per_pair\" is not supported; use \"global\"".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Clone, Debug)]
pub struct Pgcs {
    /// Enhancement factor, shape `(1)`, initialised to 1.
    pub delta: ParamId,
    decoder: Vec<DecoderStage>,
    pub gate_fc1: Linear,
    pub gate_fc2: Linear,
    pub head: Conv2d,
    width: usize,
}

impl Pgcs {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        cfg: &PgcsConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.decoder_width;
        let decoder = (0..DECODER_STAGES)
            .map(|i| {
                let cin = if i == 0 { channels } else { w };
                let name = format!("pgcs.decoder{i}");
                DecoderStage {
                    conv: Conv2d::new(store, &format!("{name}.conv"), cin, w, 3, 1, 1, rng),
                    norm: GroupNorm::new(store, &format!("{name}.norm"), w, cfg.groups),
                }
            })
            .collect();
        Ok(Pgcs {
            delta: store.add("pgcs.delta", filled(&[1], 1.0)),
            decoder,
            gate_fc1: Linear::new(store, "pgcs.gate.fc1", NUM_PARTS, cfg.attention_hidden, Init::Kaiming, rng),
            gate_fc2: Linear::new(store, "pgcs.gate.fc2", cfg.attention_hidden, w, Init::Xavier, rng),
            head: Conv2d::new(store, "pgcs.head", w, SEG_CHANNELS, 1, 1, 0, rng),
            width: w,
        })
    }

    pub fn decoder_width(&self) -> usize {
        self.width
    }

    /// Multiply the cells of `features` inside `region` by the learnable
    /// factor. `None` leaves the map untouched.
    pub fn enhance_roi<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var, region: Option<GridRect>) -> Var {
        match region {
            None => features,
            Some(r) => {
                let delta = cx.p(self.delta);
                cx.g
                    .scale_region(features, delta, (r.gy_min, r.gy_max), (r.gx_min, r.gx_max))
            }
        }
    }

    /// Stride-32 map to `(H/2, W/2, width)`.
    pub fn decode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var) -> Var {
        let mut x = features;
        for s in &self.decoder {
            x = s.conv.forward(cx, x);
            x = s.norm.forward(cx, x);
            x = cx.g.relu(x);
            x = cx.g.upsample2x(x);
        }
        x
    }

    /// Contact prior `(17)` to the channel gate `(width)` in `(0, 1)`.
    pub fn attention_gate<T: Scalar>(&self, cx: &mut Ctx<'_, T>, prior: Var) -> Var {
        let x = cx.g.reshape(prior, &[1, NUM_PARTS]);
        let x = self.gate_fc1.forward(cx, x);
        let x = cx.g.relu(x);
        let x = self.gate_fc2.forward(cx, x);
        let x = cx.g.sigmoid(x);
        cx.g.reshape(x, &[self.width])
    }

    /// Channel-wise product of the decoder map with the gate.
    pub fn body_attention<T: Scalar>(&self, cx: &mut Ctx<'_, T>, decoded: Var, gate: Var) -> Var {
        cx.g.mul_channels(decoded, gate)
    }

    /// Segmentation logits `(H, W, 18)` from the attended decoder map.
    pub fn seg_logits<T: Scalar>(&self, cx: &mut Ctx<'_, T>, attended: Var) -> Var {
        let x = self.head.forward(cx, attended);
        cx.g.upsample2x(x)
    }

    /// Per-pixel probabilities `(H, W, 18)`; channel 0 is background.
    pub fn segment<T: Scalar>(&self, cx: &mut Ctx<'_, T>, attended: Var) -> Var {
        let logits = self.seg_logits(cx, attended);
        cx.g.softmax(logits)
    }
}

/// Grid cells covered by the rectangle enclosing all given boxes, or `None`
/// when there are no boxes.
pub fn interaction_region<T: Scalar>(
    humans: &[BBox<T>],
    objects: &[BBox<T>],
    grid_w: usize,
    grid_h: usize,
) -> Option<GridRect> {
    enclosing_rectangle(humans, objects).map(|r| scale_to_grid(&r, STRIDE, grid_w, grid_h))
}

fn pixel_weights<T: Scalar>(gt: &ContactMap, background_weight: f64) -> Result<(Vec<usize>, Vec<T>)> {
    let bad = gt.out_of_range_pixels();
    if bad > 0 {
        return Err(Error::Validation(format!(
            "contact map has {bad} pixels with a label above {NUM_PARTS}"
        )));
    }
    let bg: T = lit(background_weight);
    let targets: Vec<usize> = gt.labels.iter().map(|&v| v as usize).collect();
    let weights = targets.iter().map(|&t| if t == 0 { bg } else { T::one() }).collect();
    Ok((targets, weights))
}

/// Weighted mean per-pixel cross-entropy of probabilities `(H, W, 18)`
/// against hard labels: `sum_p w_p * -ln s_p[gt_p] / sum_p w_p`.
pub fn seg_loss<T: Scalar>(probs: &Array3<T>, gt: &ContactMap, background_weight: f64) -> Result<T> {
    let (h, w, c) = probs.dim();
    if (h, w) != (gt.height(), gt.width()) || c != SEG_CHANNELS {
        return Err(Error::Shape(format!(
            "segmentation {h}x{w}x{c} vs labels {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let (targets, weights) = pixel_weights::<T>(gt, background_weight)?;
    let tiny: T = lit(1e-30);
    let flat = probs.view().into_shape_with_order((h * w, c)).unwrap();
    let mut num = T::zero();
    let mut den = T::zero();
    for ((row, &t), &wt) in flat.axis_iter(Axis(0)).zip(&targets).zip(&weights) {
        num -= wt * row[t].max(tiny).ln();
        den += wt;
    }
    Ok(num / den)
}

/// Differentiable [`seg_loss`] on logits `(H, W, 18)`.
pub fn seg_loss_graph<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    logits: Var,
    gt: &ContactMap,
    background_weight: f64,
) -> Result<Var> {
    let shape = cx.g.shape(logits).to_vec();
    if shape[..2] != [gt.height(), gt.width()] {
        return Err(Error::Shape(format!(
            "segmentation logits {shape:?} vs labels {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let (targets, weights) = pixel_weights::<T>(gt, background_weight)?;
    let flat = flatten_hw(&mut cx.g, logits);
    Ok(cx.g.cross_entropy(flat, &targets, &weights, true))
}

/// Per-pixel argmax of `(H, W, 18)` as a part-index map.
pub fn argmax_map<T: Scalar>(probs: &ArrayD<T>) -> ContactMap {
    let s = probs.shape();
    let (h, w) = (s[0], s[1]);
    let mut labels = Array2::<u8>::zeros((h, w));
    let v = probs.view().into_dimensionality::<ndarray::Ix3>().expect("(H, W, C) map");
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            for k in 1..s[2] {
                if v[[y, x, k]] > v[[y, x, best]] {
                    best = k;
                }
            }
            labels[[y, x]] = best as u8;
        }
    }
    ContactMap { labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build() -> (ParamStore<f64>, Pgcs) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Pgcs::new(&mut store, 16, &PgcsConfig::default(), &mut rng).unwrap();
        (store, p)
    }

    fn random(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(shape.to_vec(), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn delta_one_is_identity() {
        let (store, p) = build();
        let mut cx = Ctx::inference(&store);
        let f = random(&[4, 4, 16], 1);
        let x = cx.g.input(f.clone());
        let r = GridRect { gx_min: 1, gy_min: 0, gx_max: 3, gy_max: 2 };
        let y = p.enhance_roi(&mut cx, x, Some(r));
        assert_eq!(cx.g.value(y), &f);
    }

    #[test]
    fn delta_two_doubles_one_cell() {
        let (mut store, p) = build();
        store.set(p.delta, filled(&[1], 2.0));
        let mut cx = Ctx::inference(&store);
        let f = random(&[4, 4, 16], 2);
        let x = cx.g.input(f.clone());
        let r = GridRect { gx_min: 2, gy_min: 1, gx_max: 3, gy_max: 2 };
        let y = p.enhance_roi(&mut cx, x, Some(r));
        let out = cx.g.value(y);
        for ((i, j, c), &v) in out.view().into_dimensionality::<ndarray::Ix3>().unwrap().indexed_iter() {
            let expected = if (i, j) == (1, 2) { 2.0 * f[[i, j, c]] } else { f[[i, j, c]] };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn delta_gradient_is_region_sum() {
        let (store, p) = build();
        let mut cx = Ctx::new(&store, true, ChaCha8Rng::seed_from_u64(0));
        let f = random(&[4, 4, 16], 3);
        let x = cx.g.input(f.clone());
        let r = GridRect { gx_min: 0, gy_min: 1, gx_max: 2, gy_max: 4 };
        let y = p.enhance_roi(&mut cx, x, Some(r));
        let loss = cx.g.sum(y);
        let grads = cx.g.backward(loss);
        let d = cx.g.param_grads(&grads).get(p.delta).unwrap()[[0]];
        // oracle: sum of inputs inside the region
        let mut expected = 0.0;
        for i in 1..4 {
            for j in 0..2 {
                for c in 0..16 {
                    expected += f[[i, j, c]];
                }
            }
        }
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn decode_shape_and_zero_map() {
        let (mut store, p) = build();
        let mut cx = Ctx::inference(&store);
        let x = cx.g.input(random(&[4, 4, 16], 4));
        let y = p.decode(&mut cx, x);
        assert_eq!(cx.g.shape(y), &[64, 64, 64]);

        // biases start at zero; force them anyway
        let biases: Vec<ParamId> = store.iter().filter(|(_, e)| e.name.ends_with(".bias")).map(|(id, _)| id).collect();
        for id in biases {
            let z = ArrayD::zeros(store.get(id).raw_dim());
            store.set(id, z);
        }
        let mut cx = Ctx::inference(&store);
        let x = cx.g.input(ArrayD::zeros(vec![4, 4, 16]));
        let y = p.decode(&mut cx, x);
        assert!(cx.g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_matches_broadcast_oracle() {
        let (store, p) = build();
        let mut cx = Ctx::inference(&store);
        let xv = random(&[6, 5, 64], 5);
        let gv = random(&[64], 6);
        let x = cx.g.input(xv.clone());
        let g = cx.g.input(gv.clone());
        let y = p.body_attention(&mut cx, x, g);
        for ((i, j, c), &v) in cx.g.value(y).view().into_dimensionality::<ndarray::Ix3>().unwrap().indexed_iter() {
            assert_eq!(v, xv[[i, j, c]] * gv[[c]]);
        }
    }

    #[test]
    fn all_ones_gate_is_identity() {
        let (store, p) = build();
        let mut cx = Ctx::inference(&store);
        let xv = random(&[8, 8, 64], 7);
        let x = cx.g.input(xv.clone());
        let g = cx.g.input(ArrayD::from_elem(vec![64], 1.0));
        let y = p.body_attention(&mut cx, x, g);
        assert_eq!(cx.g.value(y), &xv);
    }

    #[test]
    fn gate_in_unit_interval() {
        let (store, p) = build();
        let mut cx = Ctx::inference(&store);
        let l = cx.g.input(random(&[NUM_PARTS], 8).mapv(|v| (v + 1.0) / 2.0));
        let g = p.attention_gate(&mut cx, l);
        assert_eq!(cx.g.shape(g), &[64]);
        assert!(cx.g.value(g).iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn segment_shape_and_normalisation() {
        let (store, p) = build();
        let mut cx = Ctx::inference(&store);
        let x = cx.g.input(random(&[64, 64, 64], 9));
        let s = p.segment(&mut cx, x);
        assert_eq!(cx.g.shape(s), &[128, 128, SEG_CHANNELS]);
        for lane in cx.g.value(s).lanes(Axis(2)) {
            assert!((lane.sum() - 1.0).abs() < 1e-6);
            assert!(lane.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn strong_background_logit_gives_background_argmax() {
        let mut logits = random(&[8, 8, SEG_CHANNELS], 10);
        for mut lane in logits.lanes_mut(Axis(2)) {
            lane[0] += 20.0;
        }
        let probs = crate::autodiff::softmax_last(&logits);
        assert_eq!(argmax_map(&probs).contact_pixels(), 0);
    }

    #[test]
    fn uniform_probs_give_ln18() {
        let probs = Array3::from_elem((4, 4, SEG_CHANNELS), 1.0 / 18.0);
        let mut gt = ContactMap::zeros(4, 4);
        gt.labels[[1, 2]] = 5;
        gt.labels[[3, 3]] = 17;
        let l = seg_loss(&probs, &gt, 0.25).unwrap();
        assert!((l - 18f64.ln()).abs() < 1e-12);
        assert!((l - 2.890372).abs() < 1e-6);
    }

    #[test]
    fn one_hot_probs_give_zero_loss() {
        let mut gt = ContactMap::zeros(3, 3);
        gt.labels[[0, 0]] = 2;
        let mut probs = Array3::<f64>::zeros((3, 3, SEG_CHANNELS));
        for ((y, x), &t) in gt.labels.indexed_iter() {
            probs[[y, x, t as usize]] = 1.0;
        }
        assert!(seg_loss(&probs, &gt, 0.25).unwrap() < 1e-6);
    }

    #[test]
    fn two_by_two_hand_sum() {
        let mut gt = ContactMap::zeros(2, 2);
        gt.labels[[0, 1]] = 3;
        gt.labels[[1, 0]] = 17;
        let mut probs = Array3::<f64>::from_elem((2, 2, SEG_CHANNELS), 0.01);
        probs[[0, 0, 0]] = 0.6;
        probs[[0, 1, 3]] = 0.3;
        probs[[1, 0, 17]] = 0.8;
        probs[[1, 1, 0]] = 0.1;
        // oracle: weighted four-term sum, background weight 0.25
        let expected = -(0.25 * 0.6f64.ln() + 0.3f64.ln() + 0.8f64.ln() + 0.25 * 0.1f64.ln()) / 2.5;
        assert!((seg_loss(&probs, &gt, 0.25).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn graph_loss_matches_plain() {
        let logits = random(&[4, 4, SEG_CHANNELS], 11).mapv(|v| 3.0 * v);
        let mut gt = ContactMap::zeros(4, 4);
        gt.labels[[0, 0]] = 1;
        gt.labels[[2, 3]] = 9;
        let store = ParamStore::<f64>::new();
        let mut cx = Ctx::inference(&store);
        let l = cx.g.input(logits.clone());
        let v = seg_loss_graph(&mut cx, l, &gt, 0.25).unwrap();
        let probs = crate::autodiff::softmax_last(&logits)
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        assert!((cx.g.scalar(v) - seg_loss(&probs, &gt, 0.25).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn label_above_17_rejected() {
        let mut gt = ContactMap::zeros(2, 2);
        gt.labels[[1, 1]] = 18;
        let probs = Array3::from_elem((2, 2, SEG_CHANNELS), 1.0 / 18.0);
        assert!(matches!(seg_loss(&probs, &gt, 0.25), Err(Error::Validation(_))));
    }

    #[test]
    fn per_pair_region_mode_rejected() {
        let cfg = PgcsConfig {
            region: RegionMode::PerPair,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
