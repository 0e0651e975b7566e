//! Strided convolutional feature extractor producing the stride-32 map
//! shared by every branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::STRIDE;
use crate::nn::{Conv2d, Ctx, GroupNorm};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};

/// Number of stride-2 stages; `2^5 = 32`.
pub const STAGES: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// Slope 0.01 on the negative side.
    LeakyRelu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, cx: &mut Ctx<'_, T>, x: Var) -> Var {
        match self {
            Activation::Relu => cx.g.relu(x),
            Activation::LeakyRelu => cx.g.leaky_relu(x, lit(0.01)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output width of each stage; the last entry is the feature channel count `C`.
    pub widths: Vec<usize>,
    /// Group count of the per-stage group normalisation.
    pub groups: usize,
    pub activation: Activation,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            widths: vec![16, 32, 48, 64, 64],
            groups: 8,
            activation: Activation::Relu,
        }
    }
}

impl BackboneConfig {
    pub fn channels(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != STAGES {
            return Err(Error::Config(format!(
                "backbone needs exactly {STAGES} stage widths, got {}",
                self.widths.len()
            )));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w % self.groups != 0) {
            return Err(Error::Config(format!(
                "backbone width {w} is not a positive multiple of {} groups",
                self.groups
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<Stage>,
    activation: Activation,
    channels: usize,
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &BackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut cin = 3;
        let stages = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let name = format!("backbone.stage{i}");
                let s = Stage {
                    conv: Conv2d::new(store, &format!("{name}.conv"), cin, w, 3, 2, 1, rng),
                    norm: GroupNorm::new(store, &format!("{name}.norm"), w, cfg.groups),
                };
                cin = w;
                s
            })
            .collect();
        Ok(Backbone {
            stages,
            activation: cfg.activation,
            channels: cfg.channels(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(H, W, 3) -> (H/32, W/32, C)`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let shape = cx.g.shape(image).to_vec();
        if shape.len() != 3 || shape[2] != 3 || shape[0] % STRIDE != 0 || shape[1] % STRIDE != 0 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::Shape(format!(
                "backbone input must be (H, W, 3) with H and W positive multiples of {STRIDE}, got {shape:?}"
            )));
        }
        let mut x = image;
        for s in &self.stages {
            x = s.conv.forward(cx, x);
            x = s.norm.forward(cx, x);
            x = self.activation.apply(cx, x);
        }
        Ok(x)
    }
}
