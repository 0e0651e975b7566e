//! Layer building blocks. Layers only hold [`ParamId`]s; values live in the
//! [`ParamStore`] so one model description serves both `f32` and `f64`.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{filled, kaiming_normal, xavier_uniform, zeros, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};

/// Forward-pass context: the tape, the parameters it reads, and the mode.
pub struct Ctx<'a, T: Scalar> {
    pub g: Graph<T>,
    pub params: &'a ParamStore<T>,
    pub train: bool,
    pub rng: ChaCha8Rng,
    /// Running-statistic updates produced in training mode; applied by the
    /// caller after the step.
    pub buffer_updates: Vec<(ParamId, ArrayD<T>)>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(params: &'a ParamStore<T>, train: bool, rng: ChaCha8Rng) -> Self {
        Ctx {
            g: Graph::new(),
            params,
            train,
            rng,
            buffer_updates: Vec::new(),
        }
    }

    /// Value-only context for inference.
    pub fn inference(params: &'a ParamStore<T>) -> Self {
        use rand::SeedableRng;
        Ctx {
            g: Graph::inference(),
            params,
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            buffer_updates: Vec::new(),
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.g.param(self.params, id)
    }
}

pub enum Init {
    Kaiming,
    Xavier,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [in_dim, out_dim];
        let w = match init {
            Init::Kaiming => kaiming_normal(&shape, in_dim, rng),
            Init::Xavier => xavier_uniform(&shape, in_dim, out_dim, rng),
            Init::Zero => zeros(&shape),
        };
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: Some(store.add(format!("{name}.bias"), zeros(&[out_dim]))),
            in_dim,
            out_dim,
        }
    }

    /// `x: (N, in) -> (N, out)`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w = cx.p(self.weight);
        let y = cx.g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = cx.p(b);
                cx.g.add_bias(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * cin;
        Conv2d {
            weight: store.add(
                format!("{name}.weight"),
                kaiming_normal(&[kernel, kernel, cin, cout], fan_in, rng),
            ),
            bias: store.add(format!("{name}.bias"), zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w = cx.p(self.weight);
        let b = cx.p(self.bias);
        cx.g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Affine scale and shift over the trailing channel axis.
#[derive(Clone, Debug)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Affine {
            gamma: store.add(format!("{name}.gamma"), filled(&[c], 1.0)),
            beta: store.add(format!("{name}.beta"), zeros(&[c])),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let g = cx.p(self.gamma);
        let b = cx.p(self.beta);
        let y = cx.g.mul_channels(x, g);
        cx.g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub affine: Affine,
}

impl GroupNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, groups: usize) -> Self {
        assert!(c % groups == 0, "{name}: {c} channels, {groups} groups");
        GroupNorm {
            groups,
            affine: Affine::new(store, name, c),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let n = cx.g.group_norm(x, self.groups, lit(1e-5));
        self.affine.forward(cx, n)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub affine: Affine,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        LayerNorm {
            affine: Affine::new(store, name, c),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let n = cx.g.layer_norm(x, lit(1e-5));
        self.affine.forward(cx, n)
    }
}

/// Normalisation used inside the contact-prior FC blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Batch statistics in training, running statistics in evaluation.
    #[default]
    Batch,
    /// Per-sample statistics; independent of batch size.
    Layer,
}

#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub affine: Affine,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm1d {
            affine: Affine::new(store, name, c),
            running_mean: store.add_buffer(format!("{name}.running_mean"), zeros(&[c])),
            running_var: store.add_buffer(format!("{name}.running_var"), filled(&[c], 1.0)),
            momentum: 0.1,
        }
    }

    /// `x: (B, C)`. Batch statistics need at least two rows; a single-row
    /// training batch falls back to the running statistics.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let eps: T = lit(1e-5);
        let rows = cx.g.shape(x)[0];
        let normed = if cx.train && rows > 1 {
            let (n, mean, var) = cx.g.batch_norm_train(x, eps);
            let m: T = lit(self.momentum);
            let unbias = T::from_usize(rows).unwrap() / T::from_usize(rows - 1).unwrap();
            let old_mean = cx.params.get(self.running_mean);
            let old_var = cx.params.get(self.running_var);
            let new_mean = ndarray::Zip::from(old_mean)
                .and(&ndarray::ArrayD::from_shape_vec(old_mean.raw_dim(), mean).unwrap())
                .map_collect(|&o, &b| (T::one() - m) * o + m * b);
            let new_var = ndarray::Zip::from(old_var)
                .and(&ndarray::ArrayD::from_shape_vec(old_var.raw_dim(), var).unwrap())
                .map_collect(|&o, &b| (T::one() - m) * o + m * b * unbias);
            cx.buffer_updates.push((self.running_mean, new_mean));
            cx.buffer_updates.push((self.running_var, new_var));
            n
        } else {
            let mean = cx.params.get(self.running_mean).clone();
            let inv = cx.params.get(self.running_var).mapv(|v| T::one() / (v + eps).sqrt());
            let neg_mean = cx.g.constant(mean.mapv(|v| -v));
            let inv = cx.g.constant(inv);
            let centered = cx.g.add_bias(x, neg_mean);
            cx.g.mul_channels(centered, inv)
        };
        self.affine.forward(cx, normed)
    }
}

/// Either normalisation, selected by [`NormKind`].
#[derive(Clone, Debug)]
pub enum FeatureNorm {
    Batch(BatchNorm1d),
    Layer(LayerNorm),
}

impl FeatureNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, kind: NormKind) -> Self {
        match kind {
            NormKind::Batch => FeatureNorm::Batch(BatchNorm1d::new(store, name, c)),
            NormKind::Layer => FeatureNorm::Layer(LayerNorm::new(store, name, c)),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        match self {
            FeatureNorm::Batch(bn) => bn.forward(cx, x),
            FeatureNorm::Layer(ln) => ln.forward(cx, x),
        }
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let init = if i + 1 < n { Init::Kaiming } else { Init::Xavier };
                Linear::new(store, &format!("{name}.{i}"), d[0], d[1], init, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(cx, x);
            if i + 1 < n {
                x = cx.g.relu(x);
            }
        }
        x
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(dim % heads == 0, "{name}: dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            heads,
            dim,
            q: Linear::new(store, &format!("{name}.q"), dim, dim, Init::Xavier, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, Init::Xavier, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, Init::Xavier, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, Init::Xavier, rng),
        }
    }

    /// `query: (N, D)`, `key`/`value: (M, D)` -> `(N, D)`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, query: Var, key: Var, value: Var) -> Var {
        let q = self.q.forward(cx, query);
        let k = self.k.forward(cx, key);
        let v = self.v.forward(cx, value);
        let dh = self.dim / self.heads;
        let scale: T = lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = cx.g.slice_axis(q, 1, h * dh, (h + 1) * dh);
            let kh = cx.g.slice_axis(k, 1, h * dh, (h + 1) * dh);
            let vh = cx.g.slice_axis(v, 1, h * dh, (h + 1) * dh);
            let kt = cx.g.transpose(kh);
            let scores = cx.g.matmul(qh, kt);
            let scores = cx.g.scale(scores, scale);
            let attn = cx.g.softmax(scores);
            heads.push(cx.g.matmul(attn, vh));
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            cx.g.concat(&heads, 1)
        };
        self.out.forward(cx, merged)
    }
}
