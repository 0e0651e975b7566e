//! Interaction inference: a transformer encoder over the flattened feature
//! grid, stacked instance/action decoders over human and object queries,
//! box/object/action heads and the mask-guided region feature.

use ndarray::{Array2, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{flatten_hw, Var};
use crate::error::{Error, Result};
use crate::geometry::{scale_to_grid, EnclosingRect, GridRect, STRIDE};
use crate::nn::{Ctx, Init, LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::params::{kaiming_normal, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::scene::ContactMap;

/// Length of the mask-guided region feature.
pub const MASK_FEATURE_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IimConfig {
    /// Query slots per stream.
    pub queries: usize,
    /// Query and memory width.
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ffn_dim: usize,
    /// Instance/action decoder stages, each with its own weights.
    pub stages: usize,
    /// One box head for both human and object streams.
    pub shared_box_head: bool,
    pub action_hidden: usize,
}

impl Default for IimConfig {
    fn default() -> Self {
        IimConfig {
            queries: 16,
            dim: 64,
            heads: 4,
            encoder_layers: 2,
            ffn_dim: 128,
            stages: 3,
            shared_box_head: true,
            action_hidden: 64,
        }
    }
}

impl IimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.stages == 0 || self.heads == 0 {
            return Err(Error::Config("iim queries, stages and heads must be positive".into()));
        }
        if self.dim == 0 || self.dim % 4 != 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "iim dim {} must be a positive multiple of 4 and of {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Fixed 2-D sinusoidal position code for an `h x w` grid, `(h*w, dim)`,
/// row-major. The first half of the channels encodes the row, the second
/// half the column; each half interleaves sine and cosine.
pub fn sinusoidal_2d<T: Scalar>(h: usize, w: usize, dim: usize) -> Array2<T> {
    assert!(dim % 4 == 0, "position code width must be a multiple of 4");
    let half = dim / 2;
    let two_pi = std::f64::consts::TAU;
    let mut pe = Array2::<T>::zeros((h * w, dim));
    for y in 0..h {
        for x in 0..w {
            let row = y * w + x;
            let py = (y as f64 + 1.0) / h as f64 * two_pi;
            let px = (x as f64 + 1.0) / w as f64 * two_pi;
            for i in 0..half / 2 {
                let freq = 10000f64.powf(-((2 * i) as f64) / half as f64);
                pe[[row, 2 * i]] = lit((py * freq).sin());
                pe[[row, 2 * i + 1]] = lit((py * freq).cos());
                pe[[row, half + 2 * i]] = lit((px * freq).sin());
                pe[[row, half + 2 * i + 1]] = lit((px * freq).cos());
            }
        }
    }
    pe
}

/// Post-norm self-attention encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: Mlp,
    norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &IimConfig,
        rng: &mut R,
    ) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.dim, cfg.heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[cfg.dim, cfg.ffn_dim, cfg.dim], rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.dim),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let a = self.attn.forward(cx, x, x, x);
        let x = cx.g.add(x, a);
        let x = self.norm1.forward(cx, x);
        let f = self.ffn.forward(cx, x);
        let x = cx.g.add(x, f);
        self.norm2.forward(cx, x)
    }
}

/// Post-norm decoder layer: self-attention over the queries,
/// cross-attention into the memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim], rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, queries: Var, memory: Var) -> Var {
        let a = self.self_attn.forward(cx, queries, queries, queries);
        let x = cx.g.add(queries, a);
        let x = self.norm1.forward(cx, x);
        let c = self.cross_attn.forward(cx, x, memory, memory);
        let x = cx.g.add(x, c);
        let x = self.norm2.forward(cx, x);
        let f = self.ffn.forward(cx, x);
        let x = cx.g.add(x, f);
        self.norm3.forward(cx, x)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    instance: DecoderLayer,
    action: DecoderLayer,
}

/// Human, object and action decoder outputs, each `(N_q, dim)`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub d_h: Var,
    pub d_o: Var,
    pub d_a: Var,
}

/// Per-query predictions as plain arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPredictions<T> {
    /// `(N_q, 4)` normalised `(cx, cy, w, h)`.
    pub human_boxes: Array2<T>,
    pub object_boxes: Array2<T>,
    /// `(N_q, |objects|)`.
    pub object_logits: Array2<T>,
    /// `(N_q, |actions|)`; the last column is no-interaction.
    pub action_logits: Array2<T>,
}

impl<T: Scalar> PairPredictions<T> {
    pub fn num_queries(&self) -> usize {
        self.human_boxes.nrows()
    }

    pub fn object_probs(&self) -> Array2<T> {
        crate::autodiff::softmax_last(&self.object_logits.clone().into_dyn())
            .into_dimensionality()
            .unwrap()
    }

    pub fn action_probs(&self) -> Array2<T> {
        crate::autodiff::softmax_last(&self.action_logits.clone().into_dyn())
            .into_dimensionality()
            .unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct Iim {
    cfg: IimConfig,
    input_proj: Linear,
    encoder: Vec<EncoderLayer>,
    pub query_h: ParamId,
    pub query_o: ParamId,
    stages: Vec<Stage>,
    box_head_h: Mlp,
    box_head_o: Option<Mlp>,
    pub object_head: Linear,
    pub mask_fc: Linear,
    pub action_head: Mlp,
}

impl Iim {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        num_objects: usize,
        num_action_logits: usize,
        cfg: &IimConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let input_proj = Linear::new(store, "iim.input_proj", channels, d, Init::Xavier, rng);
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("iim.encoder{i}"), cfg, rng))
            .collect();
        let query_h = store.add("iim.query_h", kaiming_normal(&[cfg.queries, d], d, rng));
        let query_o = store.add("iim.query_o", kaiming_normal(&[cfg.queries, d], d, rng));
        let stages = (0..cfg.stages)
            .map(|i| Stage {
                instance: DecoderLayer::new(store, &format!("iim.stage{i}.instance"), d, cfg.heads, cfg.ffn_dim, rng),
                action: DecoderLayer::new(store, &format!("iim.stage{i}.action"), d, cfg.heads, cfg.ffn_dim, rng),
            })
            .collect();
        let (box_head_h, box_head_o) = if cfg.shared_box_head {
            (Mlp::new(store, "iim.box_head", &[d, d, d, 4], rng), None)
        } else {
            (
                Mlp::new(store, "iim.box_head_h", &[d, d, d, 4], rng),
                Some(Mlp::new(store, "iim.box_head_o", &[d, d, d, 4], rng)),
            )
        };
        Ok(Iim {
            cfg: cfg.clone(),
            input_proj,
            encoder,
            query_h,
            query_o,
            stages,
            box_head_h,
            box_head_o,
            object_head: Linear::new(store, "iim.object_head", d, num_objects, Init::Xavier, rng),
            mask_fc: Linear::new(store, "iim.mask_fc", channels, MASK_FEATURE_DIM, Init::Xavier, rng),
            action_head: Mlp::new(
                store,
                "iim.action_head",
                &[d + MASK_FEATURE_DIM, cfg.action_hidden, num_action_logits],
                rng,
            ),
        })
    }

    pub fn config(&self) -> &IimConfig {
        &self.cfg
    }

    /// Feature map `(h, w, C)` to memory `(h*w, dim)`.
    pub fn encode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var) -> Var {
        let s = cx.g.shape(features).to_vec();
        let flat = flatten_hw(&mut cx.g, features);
        let x = self.input_proj.forward(cx, flat);
        let pe = cx.g.constant(sinusoidal_2d::<T>(s[0], s[1], self.cfg.dim).into_dyn());
        let mut x = cx.g.add(x, pe);
        for layer in &self.encoder {
            x = layer.forward(cx, x);
        }
        x
    }

    /// One instance decoder over the stacked `2 N_q` queries, split back
    /// into human and object rows.
    pub fn decode_instances<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        stage: usize,
        q_h: Var,
        q_o: Var,
        memory: Var,
    ) -> (Var, Var) {
        let n = self.cfg.queries;
        let q = cx.g.concat(&[q_h, q_o], 0);
        let out = self.stages[stage].instance.forward(cx, q, memory);
        let d_h = cx.g.slice_axis(out, 0, 0, n);
        let d_o = cx.g.slice_axis(out, 0, n, 2 * n);
        (d_h, d_o)
    }

    /// `(d_h + d_o) / 2`.
    pub fn action_queries<T: Scalar>(cx: &mut Ctx<'_, T>, d_h: Var, d_o: Var) -> Var {
        let s = cx.g.add(d_h, d_o);
        cx.g.scale(s, lit(0.5))
    }

    pub fn decode_actions<T: Scalar>(&self, cx: &mut Ctx<'_, T>, stage: usize, d_h: Var, d_o: Var, memory: Var) -> Var {
        let q = Self::action_queries(cx, d_h, d_o);
        self.stages[stage].action.forward(cx, q, memory)
    }

    /// Run the first `stages` decoder stages; each stage's instance outputs
    /// become the next stage's queries.
    pub fn run_stacked_decoders<T: Scalar>(&self, cx: &mut Ctx<'_, T>, memory: Var, stages: usize) -> Result<DecoderState> {
        if stages == 0 || stages > self.stages.len() {
            return Err(Error::Config(format!(
                "requested {stages} decoder stages, model has {}",
                self.stages.len()
            )));
        }
        let mut q_h = cx.p(self.query_h);
        let mut q_o = cx.p(self.query_o);
        let mut d_a = None;
        for s in 0..stages {
            let (d_h, d_o) = self.decode_instances(cx, s, q_h, q_o, memory);
            d_a = Some(self.decode_actions(cx, s, d_h, d_o, memory));
            q_h = d_h;
            q_o = d_o;
        }
        Ok(DecoderState {
            d_h: q_h,
            d_o: q_o,
            d_a: d_a.expect("at least one stage"),
        })
    }

    /// Normalised `(cx, cy, w, h)` boxes `(N_q, 4)` for both streams.
    pub fn predict_boxes<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d_h: Var, d_o: Var) -> (Var, Var) {
        let h = self.box_head_h.forward(cx, d_h);
        let o = self.box_head_o.as_ref().unwrap_or(&self.box_head_h).forward(cx, d_o);
        (cx.g.sigmoid(h), cx.g.sigmoid(o))
    }

    pub fn predict_object_class<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d_o: Var) -> Var {
        self.object_head.forward(cx, d_o)
    }

    /// Pool `features` over the grid cells covering every contact pixel of
    /// `seg` (the whole map when there are none) and project to
    /// [`MASK_FEATURE_DIM`] values.
    pub fn mask_feature<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var, seg: &ContactMap) -> Var {
        let s = cx.g.shape(features).to_vec();
        let r = mask_region(seg, s[1], s[0]);
        let crop = cx.g.crop(features, r.gy_min, r.gy_max, r.gx_min, r.gx_max);
        let pooled = cx.g.mean_keep_last(crop);
        let pooled = cx.g.reshape(pooled, &[1, s[2]]);
        let m = self.mask_fc.forward(cx, pooled);
        cx.g.reshape(m, &[MASK_FEATURE_DIM])
    }

    /// Zero vector standing in for the mask feature when it is disabled.
    pub fn zero_mask_feature<T: Scalar>(cx: &mut Ctx<'_, T>) -> Var {
        cx.g.constant(ArrayD::zeros(vec![MASK_FEATURE_DIM]))
    }

    /// Action logits `(N_q, |actions|)` from `[d_a, m]` per query.
    pub fn predict_actions<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d_a: Var, mask_feature: Var) -> Var {
        let n = cx.g.shape(d_a)[0];
        let m = cx.g.broadcast_rows(mask_feature, n);
        let x = cx.g.concat(&[d_a, m], 1);
        self.action_head.forward(cx, x)
    }
}

/// Grid cells covering the minimal rectangle around every non-background
/// pixel of `seg`; the full grid when there is none.
pub fn mask_region(seg: &ContactMap, grid_w: usize, grid_h: usize) -> GridRect {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((y, x), &v) in seg.labels.indexed_iter() {
        if v == 0 {
            continue;
        }
        bounds = Some(match bounds {
            None => (x, y, x + 1, y + 1),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
        });
    }
    match bounds {
        None => GridRect::full(grid_w, grid_h),
        Some((x0, y0, x1, y1)) => scale_to_grid(
            &EnclosingRect {
                x_min: x0 as f64,
                y_min: y0 as f64,
                x_max: x1 as f64,
                y_max: y1 as f64,
            },
            STRIDE,
            grid_w,
            grid_h,
        ),
    }
}
