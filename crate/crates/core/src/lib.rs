//! Observation-based control barrier function refinement for decentralized
//! multi-robot navigation, with a deterministic 2D simulator, world models,
//! a policy trainer and an evaluation harness.
//!
//! The geometry, simulator, costmap, barrier, world-model and refiner code
//! is generic over [`Scalar`] (`f32` or `f64`); training and evaluation run
//! in `f64`. The aliases below name the `f64` instantiations.

pub mod cbf;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod observation;
pub mod policy;
pub mod refiner;
pub mod scalar;
pub mod sim;
pub mod training;
pub mod world_model;

pub use cbf::CbfParams;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vec2 = geometry::Vec2<f64>;
pub type Action = sim::Action<f64>;
pub type Pose = sim::Pose<f64>;
pub type WorldState = sim::WorldState<f64>;
pub type WorldParams = sim::WorldParams<f64>;
pub type Costmap = observation::Costmap<f64>;
pub type Observation = observation::Observation<f64>;
pub type CbfField = cbf::CbfField<f64>;
pub type AlmParams = refiner::AlmParams<f64>;
pub type RefineResult = refiner::RefineResult<f64>;
pub type Predictor = world_model::Predictor<f64>;
pub type FlowPredictor = world_model::FlowPredictor<f64>;
pub type StaticModel = world_model::StaticModel<f64>;
