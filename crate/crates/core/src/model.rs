//! The full network: backbone, contact prior, segmentation branch and
//! interaction branch, plus the training objective over a batch.

use ndarray::{Array1, Array2, Array3, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_last, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::cpam::{cpam_loss_graph, Cpam, CpamConfig};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GridRect};
use crate::iim::{mask_region, Iim, IimConfig, PairPredictions};
use crate::matching::{
    cost_matrix, hungarian, match_loss, total_loss, total_loss_graph, GtTarget, LossReport, MatchWeights,
    PredictionVars, DEFAULT_ALPHA, DEFAULT_BETA,
};
use crate::metrics::ScoredPair;
use crate::nn::Ctx;
use crate::params::ParamStore;
use crate::pgcs::{argmax_map, interaction_region, seg_loss_graph, Pgcs, PgcsConfig};
use crate::scalar::Scalar;
use crate::scene::{ContactMap, InteractionPair, SceneSample, Vocab, NUM_PARTS};

/// Module switches. Turning one off never changes parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Contact prior and its BCE term; when off the body-attention gate is
    /// all ones.
    pub cpam_enabled: bool,
    /// Interaction-region enhancement of the backbone map.
    pub ho_enhancer_enabled: bool,
    /// Mask-guided region feature; when off it is a zero vector.
    pub mask_guided_enabled: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            cpam_enabled: true,
            ho_enhancer_enabled: true,
            mask_guided_enabled: true,
        }
    }
}

impl AblationFlags {
    pub fn baseline() -> Self {
        AblationFlags {
            cpam_enabled: false,
            ho_enhancer_enabled: false,
            mask_guided_enabled: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub cpam: CpamConfig,
    pub pgcs: PgcsConfig,
    pub iim: IimConfig,
    pub ablation: AblationFlags,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.cpam.validate()?;
        self.pgcs.validate()?;
        self.iim.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub matching: MatchWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            matching: MatchWeights::default(),
        }
    }
}

/// Where the enhancer takes its boxes from.
#[derive(Clone, Copy, Debug)]
pub enum BoxSource<'a> {
    /// Queries whose preliminary no-interaction probability is below the
    /// configured threshold.
    Predicted,
    /// Ground-truth boxes.
    GroundTruth(&'a [InteractionPair]),
    /// Predicted boxes of the queries matched to these ground-truth pairs
    /// under the preliminary predictions.
    Matched(&'a [InteractionPair]),
}

/// Nodes produced for one image.
#[derive(Clone, Debug)]
pub struct SampleVars {
    pub features: Var,
    /// `(1, 17)` contact logits.
    pub prior_logits: Var,
    pub preds: PredictionVars,
    /// Action logits computed with the whole-map region feature, used to
    /// choose the enhancer boxes.
    pub prelim_action_logits: Var,
    /// `(H, W, 18)`.
    pub seg_logits: Var,
    pub mask_feature: Var,
    pub region: Option<GridRect>,
    pub mask_region: Option<GridRect>,
}

/// Inference results for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs<T> {
    pub predictions: PairPredictions<T>,
    /// Contact probabilities, length 17.
    pub contact_prior: Array1<T>,
    /// `(H, W, 18)` probabilities; channel 0 is background.
    pub seg: Array3<T>,
    pub region: Option<GridRect>,
    pub mask_region: Option<GridRect>,
}

impl<T: Scalar> ModelOutputs<T> {
    pub fn contact_map(&self) -> ContactMap {
        argmax_map(&self.seg.clone().into_dyn())
    }
}

/// Losses of one batch: the differentiable total plus reports.
pub struct BatchLoss {
    pub loss: Var,
    pub mean: LossReport,
    pub per_sample: Vec<LossReport>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
    pub backbone: Backbone,
    pub cpam: Cpam,
    pub pgcs: Pgcs,
    pub iim: Iim,
}

fn values2<T: Scalar>(cx: &Ctx<'_, T>, v: Var) -> Array2<T> {
    cx.g.value(v).clone().into_dimensionality::<Ix2>().expect("2-d node")
}

impl<T: Scalar> Model<T> {
    pub fn new(config: &ModelConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        vocab.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, &config.backbone, &mut rng)?;
        let c = backbone.channels();
        let cpam = Cpam::new(&mut params, c, &config.cpam, &mut rng)?;
        let pgcs = Pgcs::new(&mut params, c, &config.pgcs, &mut rng)?;
        let iim = Iim::new(
            &mut params,
            c,
            vocab.num_objects(),
            vocab.num_action_logits(),
            &config.iim,
            &mut rng,
        )?;
        Ok(Model {
            config: config.clone(),
            vocab: vocab.clone(),
            params,
            backbone,
            cpam,
            pgcs,
            iim,
        })
    }

    /// Rebuild the architecture and take every parameter value from
    /// `store`, matched by name and shape.
    pub fn with_params(config: &ModelConfig, vocab: &Vocab, store: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, vocab, 0)?;
        if store.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                m.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = m.params.iter().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let src = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let value = store.get(src);
            if value.shape() != m.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    m.params.get(id).shape()
                )));
            }
            m.params.set(id, value.clone());
        }
        Ok(m)
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            cpam: self.cpam.clone(),
            pgcs: self.pgcs.clone(),
            iim: self.iim.clone(),
        }
    }

    pub fn image_input(cx: &mut Ctx<'_, T>, image: &Array3<f32>) -> Var {
        cx.g.input(image.mapv(|v| T::from_f32(v).unwrap()).into_dyn())
    }

    /// Forward a batch. The contact-prior normalisation sees the whole batch.
    pub fn forward_batch(
        &self,
        cx: &mut Ctx<'_, T>,
        images: &[Var],
        sources: &[BoxSource<'_>],
    ) -> Result<Vec<SampleVars>> {
        assert_eq!(images.len(), sources.len());
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let feats = images
            .iter()
            .map(|&img| self.backbone.forward(cx, img))
            .collect::<Result<Vec<_>>>()?;
        let pooled: Vec<Var> = feats.iter().map(|&f| Cpam::pool(cx, f)).collect();
        let stacked = if pooled.len() == 1 {
            pooled[0]
        } else {
            cx.g.concat(&pooled, 0)
        };
        let prior_logits = self.cpam.logits(cx, stacked);
        let mut out = Vec::with_capacity(images.len());
        for (i, (&f, src)) in feats.iter().zip(sources).enumerate() {
            let row = cx.g.slice_axis(prior_logits, 0, i, i + 1);
            let img_shape = cx.g.shape(images[i]).to_vec();
            out.push(self.forward_sample(cx, f, row, (img_shape[0], img_shape[1]), *src)?);
        }
        Ok(out)
    }

    fn forward_sample(
        &self,
        cx: &mut Ctx<'_, T>,
        features: Var,
        prior_logits: Var,
        (height, width): (usize, usize),
        source: BoxSource<'_>,
    ) -> Result<SampleVars> {
        let flags = self.config.ablation;
        let fshape = cx.g.shape(features).to_vec();
        let (grid_h, grid_w) = (fshape[0], fshape[1]);

        let memory = self.iim.encode(cx, features);
        let state = self.iim.run_stacked_decoders(cx, memory, self.config.iim.stages)?;
        let (human_boxes, object_boxes) = self.iim.predict_boxes(cx, state.d_h, state.d_o);
        let object_logits = self.iim.predict_object_class(cx, state.d_o);

        let full_feature = if flags.mask_guided_enabled {
            self.iim.mask_feature(cx, features, &ContactMap::zeros(0, 0))
        } else {
            Iim::zero_mask_feature(cx)
        };
        let prelim_action_logits = self.iim.predict_actions(cx, state.d_a, full_feature);

        let region = if flags.ho_enhancer_enabled {
            let (w, h) = (T::from_usize(width).unwrap(), T::from_usize(height).unwrap());
            let to_px = |b: &Array2<T>, q: usize| BBox::from_cxcywh([b[[q, 0]], b[[q, 1]], b[[q, 2]], b[[q, 3]]], w, h);
            let hb = values2(cx, human_boxes);
            let ob = values2(cx, object_boxes);
            let (humans, objects): (Vec<BBox<T>>, Vec<BBox<T>>) = match source {
                BoxSource::GroundTruth(pairs) => pairs
                    .iter()
                    .map(|p| (p.human_box.to_bbox(), p.object_box.to_bbox()))
                    .unzip(),
                BoxSource::Predicted => {
                    let probs = softmax_last(cx.g.value(prelim_action_logits));
                    let none = self.vocab.no_interaction_index();
                    let thr = T::from_f64(self.config.pgcs.interaction_threshold).unwrap();
                    (0..hb.nrows())
                        .filter(|&q| probs[[q, none]] < thr)
                        .map(|q| (to_px(&hb, q), to_px(&ob, q)))
                        .unzip()
                }
                BoxSource::Matched(pairs) => {
                    let gts = pairs
                        .iter()
                        .map(|p| GtTarget::from_pair(p, width, height))
                        .collect::<Result<Vec<_>>>()?;
                    let prelim = PairPredictions {
                        human_boxes: hb.clone(),
                        object_boxes: ob.clone(),
                        object_logits: values2(cx, object_logits),
                        action_logits: values2(cx, prelim_action_logits),
                    };
                    let m = hungarian(&cost_matrix(&prelim, &gts, &MatchWeights::default())?)?;
                    m.assignment.iter().map(|&(q, _)| (to_px(&hb, q), to_px(&ob, q))).unzip()
                }
            };
            interaction_region(&humans, &objects, grid_w, grid_h)
        } else {
            None
        };

        let enhanced = self.pgcs.enhance_roi(cx, features, region);
        let decoded = self.pgcs.decode(cx, enhanced);
        let attended = if flags.cpam_enabled {
            let prior = cx.g.sigmoid(prior_logits);
            let prior = cx.g.reshape(prior, &[NUM_PARTS]);
            let gate = self.pgcs.attention_gate(cx, prior);
            self.pgcs.body_attention(cx, decoded, gate)
        } else {
            decoded
        };
        let seg_logits = self.pgcs.seg_logits(cx, attended);

        let seg = argmax_map(cx.g.value(seg_logits));
        let (mask_feature, mask_reg) = self.region_feature(cx, features, &seg);
        let action_logits = self.iim.predict_actions(cx, state.d_a, mask_feature);

        Ok(SampleVars {
            features,
            prior_logits,
            preds: PredictionVars {
                human_boxes,
                object_boxes,
                object_logits,
                action_logits,
            },
            prelim_action_logits,
            seg_logits,
            mask_feature,
            region,
            mask_region: mask_reg,
        })
    }

    /// Mask-guided feature of `seg` over `features`, or zeros (and no
    /// region) when mask guidance is disabled.
    pub fn region_feature(
        &self,
        cx: &mut Ctx<'_, T>,
        features: Var,
        seg: &ContactMap,
    ) -> (Var, Option<GridRect>) {
        if !self.config.ablation.mask_guided_enabled {
            return (Iim::zero_mask_feature(cx), None);
        }
        let shape = cx.g.shape(features).to_vec();
        let r = mask_region(seg, shape[1], shape[0]);
        (self.iim.mask_feature(cx, features, seg), Some(r))
    }

    pub fn predictions(cx: &Ctx<'_, T>, v: &SampleVars) -> PairPredictions<T> {
        PairPredictions {
            human_boxes: values2(cx, v.preds.human_boxes),
            object_boxes: values2(cx, v.preds.object_boxes),
            object_logits: values2(cx, v.preds.object_logits),
            action_logits: values2(cx, v.preds.action_logits),
        }
    }

    /// Inference on a batch of images.
    pub fn predict_batch(&self, images: &[&Array3<f32>]) -> Result<Vec<ModelOutputs<T>>> {
        let mut cx = Ctx::inference(&self.params);
        let vars: Vec<Var> = images.iter().map(|im| Self::image_input(&mut cx, im)).collect();
        let sources = vec![BoxSource::Predicted; images.len()];
        let out = self.forward_batch(&mut cx, &vars, &sources)?;
        Ok(out
            .iter()
            .map(|v| {
                let prior = cx.g.value(v.prior_logits).mapv(crate::autodiff::sigmoid);
                ModelOutputs {
                    predictions: Self::predictions(&cx, v),
                    contact_prior: Array1::from_iter(prior.iter().copied()),
                    seg: softmax_last(cx.g.value(v.seg_logits))
                        .into_dimensionality()
                        .expect("(H, W, 18) map"),
                    region: v.region,
                    mask_region: v.mask_region,
                }
            })
            .collect())
    }

    pub fn predict(&self, image: &Array3<f32>) -> Result<ModelOutputs<T>> {
        Ok(self.predict_batch(&[image])?.remove(0))
    }

    /// Objective of a batch: mean over samples of
    /// `alpha * match + beta * (bce + ce)`.
    pub fn batch_loss(
        &self,
        cx: &mut Ctx<'_, T>,
        samples: &[&SceneSample],
        teacher_force: bool,
        loss: &LossConfig,
    ) -> Result<BatchLoss> {
        if samples.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let images: Vec<Var> = samples.iter().map(|s| Self::image_input(cx, &s.image)).collect();
        let sources: Vec<BoxSource<'_>> = samples
            .iter()
            .map(|s| {
                if teacher_force {
                    BoxSource::GroundTruth(&s.pairs)
                } else {
                    BoxSource::Matched(&s.pairs)
                }
            })
            .collect();
        let outs = self.forward_batch(cx, &images, &sources)?;
        let mut per_sample = Vec::with_capacity(samples.len());
        let mut totals = Vec::with_capacity(samples.len());
        for (s, v) in samples.iter().zip(&outs) {
            let (h, w) = (s.height(), s.width());
            let gts = s
                .pairs
                .iter()
                .map(|p| GtTarget::from_pair(p, w, h))
                .collect::<Result<Vec<_>>>()?;
            let preds = Self::predictions(cx, v);
            let m = hungarian(&cost_matrix(&preds, &gts, &loss.matching)?)?;
            let (ml, _) = match_loss(
                cx,
                v.preds,
                &gts,
                &m,
                &loss.matching,
                self.vocab.no_interaction_index(),
            )?;
            let bce = if self.config.ablation.cpam_enabled {
                Some(cpam_loss_graph(cx, v.prior_logits, &s.contact_labels)?)
            } else {
                None
            };
            let ce = seg_loss_graph(cx, v.seg_logits, &s.contact_map, self.config.pgcs.background_weight)?;
            let total = total_loss_graph(cx, ml, bce, ce, loss.alpha, loss.beta)?;
            let val = |v: Var| cx.g.scalar(v).to_f64_lossy();
            let report = total_loss(
                val(ml),
                bce.map(val).unwrap_or(0.0),
                val(ce),
                loss.alpha,
                loss.beta,
            )?;
            per_sample.push(report);
            totals.push(total);
        }
        let n = samples.len() as f64;
        let sum = if totals.len() == 1 {
            totals[0]
        } else {
            let stacked: Vec<Var> = totals.iter().map(|&t| cx.g.reshape(t, &[1])).collect();
            let c = cx.g.concat(&stacked, 0);
            cx.g.sum(c)
        };
        let loss_var = cx.g.scale(sum, T::from_f64(1.0 / n).unwrap());
        let mean = |f: fn(&LossReport) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        let mean_report = LossReport {
            match_loss: mean(|r| r.match_loss),
            bce_loss: mean(|r| r.bce_loss),
            ce_loss: mean(|r| r.ce_loss),
            total: cx.g.scalar(loss_var).to_f64_lossy(),
            alpha: loss.alpha,
            beta: loss.beta,
        };
        Ok(BatchLoss {
            loss: loss_var,
            mean: mean_report,
            per_sample,
        })
    }
}

/// One scored pair per query: the best real action and the best object,
/// with confidence `p(object) * p(action)`, boxes in pixels.
pub fn scored_pairs<T: Scalar>(preds: &PairPredictions<T>, width: usize, height: usize) -> Vec<ScoredPair> {
    let po = preds.object_probs();
    let pa = preds.action_probs();
    let real = pa.ncols() - 1;
    let (w, h) = (width as f64, height as f64);
    let argmax = |row: ndarray::ArrayView1<'_, T>, n: usize| {
        (0..n).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    };
    (0..preds.num_queries())
        .map(|q| {
            let a = argmax(pa.row(q), real);
            let o = argmax(po.row(q), po.ncols());
            let bx = |b: &Array2<T>| {
                BBox::from_cxcywh(
                    [b[[q, 0]], b[[q, 1]], b[[q, 2]], b[[q, 3]]].map(|v| v.to_f64_lossy()),
                    w,
                    h,
                )
            };
            ScoredPair {
                human_box: bx(&preds.human_boxes),
                object_box: bx(&preds.object_boxes),
                object_class: o,
                action_class: a,
                score: po[[q, o]].to_f64_lossy() * pa[[q, a]].to_f64_lossy(),
            }
        })
        .collect()
}

