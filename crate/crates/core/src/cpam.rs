//! Contact prior: global pooling, two FC blocks and a final linear layer
//! giving one contact probability per body part, supervised with BCE.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, FeatureNorm, Init, Linear, NormKind};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::scene::NUM_PARTS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpamConfig {
    pub dropout: f64,
    /// Normalisation inside the FC blocks. `layer` removes the dependence on
    /// batch size.
    pub norm: NormKind,
}

impl Default for CpamConfig {
    fn default() -> Self {
        CpamConfig {
            dropout: 0.1,
            norm: NormKind::Batch,
        }
    }
}

impl CpamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("cpam dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// FC, normalisation, ReLU, dropout.
#[derive(Clone, Debug)]
struct FcBlock {
    fc: Linear,
    norm: FeatureNorm,
    dropout: f64,
}

impl FcBlock {
    fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        let x = self.fc.forward(cx, x);
        let x = self.norm.forward(cx, x);
        let x = cx.g.relu(x);
        if cx.train && self.dropout > 0.0 {
            cx.g.dropout(x, self.dropout, &mut cx.rng)
        } else {
            x
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cpam {
    blocks: [FcBlock; 2],
    pub head: Linear,
}

impl Cpam {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        cfg: &CpamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (h1, h2) = (channels / 2, channels / 4);
        if h2 == 0 {
            return Err(Error::Config(format!("cpam needs at least 4 input channels, got {channels}")));
        }
        let block = |store: &mut ParamStore<T>, rng: &mut R, i: usize, din: usize, dout: usize| FcBlock {
            fc: Linear::new(store, &format!("cpam.fcb{i}.fc"), din, dout, Init::Kaiming, rng),
            norm: FeatureNorm::new(store, &format!("cpam.fcb{i}.norm"), dout, cfg.norm),
            dropout: cfg.dropout,
        };
        let b1 = block(store, rng, 1, channels, h1);
        let b2 = block(store, rng, 2, h1, h2);
        Ok(Cpam {
            blocks: [b1, b2],
            head: Linear::new(store, "cpam.head", h2, NUM_PARTS, Init::Xavier, rng),
        })
    }

    /// Global average pool of `(h, w, C)` to a `(1, C)` row.
    pub fn pool<T: Scalar>(cx: &mut Ctx<'_, T>, features: Var) -> Var {
        let pooled = cx.g.mean_keep_last(features);
        let c = cx.g.shape(pooled)[0];
        cx.g.reshape(pooled, &[1, c])
    }

    /// Pooled rows `(B, C)` to contact logits `(B, 17)`. Batch statistics
    /// of the FC-block normalisation are taken across the `B` rows.
    pub fn logits<T: Scalar>(&self, cx: &mut Ctx<'_, T>, pooled: Var) -> Var {
        let mut x = pooled;
        for b in &self.blocks {
            x = b.forward(cx, x);
        }
        self.head.forward(cx, x)
    }

    /// Contact probabilities `(17)` for a single feature map.
    pub fn contact_prior<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var) -> Var {
        let pooled = Self::pool(cx, features);
        let logits = self.logits(cx, pooled);
        let probs = cx.g.sigmoid(logits);
        cx.g.reshape(probs, &[NUM_PARTS])
    }
}

fn check_targets(gt: &[u8], n: usize) -> Result<()> {
    if gt.len() != n {
        return Err(Error::Validation(format!(
            "contact labels have length {}, expected {n}",
            gt.len()
        )));
    }
    if let Some(v) = gt.iter().find(|&&v| v > 1) {
        return Err(Error::Validation(format!("contact label {v} is not 0 or 1")));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
/// Probabilities are clamped to `[1e-12, 1 - 1e-12]` before the logarithm.
pub fn cpam_loss<T: Scalar>(probs: &[T], gt: &[u8]) -> Result<T> {
    check_targets(gt, probs.len())?;
    let lo: T = lit(1e-12);
    let hi = T::one() - lo;
    let total = probs.iter().zip(gt).fold(T::zero(), |acc, (&p, &y)| {
        let p = p.max(lo).min(hi);
        acc - if y == 1 { p.ln() } else { (T::one() - p).ln() }
    });
    Ok(total / T::from_usize(probs.len()).unwrap())
}

/// Differentiable BCE on logits `(1, 17)` or `(17)`.
pub fn cpam_loss_graph<T: Scalar>(cx: &mut Ctx<'_, T>, logits: Var, gt: &[u8]) -> Result<Var> {
    check_targets(gt, cx.g.value(logits).len())?;
    let targets: Vec<T> = gt.iter().map(|&v| T::from_u8(v).unwrap()).collect();
    Ok(cx.g.bce_with_logits(logits, &targets))
}
