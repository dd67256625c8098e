pub mod backbone;
pub mod checkpoint;
pub mod checks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use backbone::{Backbone, BackboneKind, BackboneSpec, Stage};
pub use model::{FusionModel, ModelConfig, Prediction};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use data::{Dataset, Sample, SplitPlan};
pub use error::{Error, ErrorCategory, Result};
pub use params::{ParamStore, Parameter};
pub use rng::Rng;
pub use tensor::{Conv2dOptions, Element, Graph, PoolKind, Precision, Tensor, Var};
