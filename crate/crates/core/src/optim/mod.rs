//! Per-scene fitting of plane values to posed training images.

pub mod adam;
pub mod loss;
pub mod params;
pub mod render;
pub mod trainer;

pub use adam::{Adam, AdamConfig, DEFAULT_LR};
pub use loss::{LossValue, LossWeights, Pyramid};
pub use params::{DirectPlanes, ImplicitGenerator, Parameterization, PlaneShape};
pub use trainer::{optimize_scene, view_objective, ViewObjective, Init, IterationLog, Mode, OptimizeConfig, OptimizeResult};
