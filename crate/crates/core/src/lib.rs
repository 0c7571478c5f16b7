//! Safe reactive whole-body control for mobile manipulators.
//!
//! The controller treats one control step as a trajectory optimization problem
//! whose stages run *along the kinematic chain* instead of along time: three
//! virtual stages decompose the omnidirectional base motion (x translation,
//! y translation, yaw) and every arm joint adds one revolute stage. Each
//! physical link must stay inside a convex free region carved out of the
//! local obstacle point cloud, which turns collision avoidance into smooth
//! polytope-containment constraints handled by an augmented-Lagrangian DDP
//! solver.
//!
//! Crate layout:
//!
//! - [`geometry`]: poses, quaternions, rigid transforms, tangent math
//! - [`chain`]: stage kinds, chain observation, kinematic propagation
//! - [`polytope`]: small halfspace-polytope utilities (Chebyshev center,
//!   vertex and face enumeration)
//! - [`free_region`]: seeded convex free-region extraction from point clouds
//! - [`containment`]: minimal region scaling that contains a link hull
//! - [`costs_constraints`]: tracking costs, box and containment constraints
//! - [`al_ddp`]: the augmented-Lagrangian DDP solver over chain stages
//! - [`controller`]: one-step reactive controller (f64)
//! - [`sim_world`]: obstacle worlds, perception, ground-truth collision,
//!   episode harness (f64)
//!
//! The math modules are generic over the scalar type through [`Real`];
//! concrete `f64` aliases live at the crate root.

pub mod al_ddp;
pub mod chain;
pub mod containment;
pub mod controller;
pub mod costs_constraints;
mod error;
pub mod free_region;
pub mod geometry;
pub mod polytope;
pub mod sim_world;

pub use error::{Error, Result};

/// Scalar type bound for the generic math modules.
///
/// `nalgebra::RealField` supplies the transcendental and ordering operations;
/// `num_traits::FromPrimitive` supplies lossless-enough conversion from the
/// `f64` literals that tolerances and defaults are written in, and
/// `ToPrimitive` the reverse direction for reporting and export.
pub trait Real:
    nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant to the working scalar type.
pub(crate) fn cast<S: Real>(v: f64) -> S {
    S::from_f64(v).expect("finite f64 constant must convert")
}

pub type Quat64 = geometry::Quat<f64>;
pub type LinkPose64 = geometry::LinkPose<f64>;
pub type Transform64 = geometry::Transform<f64>;
pub type PoseTangent64 = geometry::PoseTangent<f64>;
pub type ChainSpec64 = chain::ChainSpec<f64>;
pub type ChainObservation64 = chain::ChainObservation<f64>;
pub type ChainTrajectory64 = chain::ChainTrajectory<f64>;
pub type FreeRegion64 = free_region::FreeRegion<f64>;
pub type ObstacleCloud64 = free_region::ObstacleCloud<f64>;
pub type LinkGeometry64 = containment::LinkGeometry<f64>;
pub type CostWeights64 = costs_constraints::CostWeights<f64>;
pub type ReferenceSet64 = costs_constraints::ReferenceSet<f64>;
pub type Limits64 = costs_constraints::Limits<f64>;
pub type ConstraintSet64 = costs_constraints::ConstraintSet<f64>;
pub type SpatialProblem64 = al_ddp::SpatialProblem<f64>;
pub type SolverConfig64 = al_ddp::SolverConfig<f64>;
pub type SolveReport64 = al_ddp::SolveReport<f64>;
