pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod cpam;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod iim;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pgcs;
pub mod scalar;
pub mod scene;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use config::RunConfig;
pub use metrics::MetricsReport;
pub use model::{AblationFlags, Model, ModelConfig};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
