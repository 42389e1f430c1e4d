//! Optical intelligent reflecting surface (OIRS) assisted MIMO visible light
//! links: geometry, channel synthesis, capacity bounds, element alignment and
//! emission power allocation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align_opt;
pub mod capacity;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod power_opt;

pub use capacity::{CapacityCase, CapacityResult, NoiseModel, PowerConstraintSet};
pub use channel::{Alignment, Cascade, ChannelSet, LambertianParams};
pub use error::{Error, Result};
pub use geometry::{build_scene, Scene, SceneConfig, Vec3};
pub use power_opt::{optimize_power, uniform_power, PowerBudget};
