//! UAV swarm anti-jamming toolkit.
//!
//! A swarm flying through an exponential jamming field (`P = k A^r`) encodes
//! each instant as a communication graph, a small graph convolutional network
//! regresses the jammer position and decay constant from it, and flocking
//! control with potential-field avoidance steers around the estimated
//! disruption disk.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the dataset, episode and file formats use.

// Index loops mirror the matrix formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod config;
pub mod datagen;
pub mod episode;
pub mod error;
pub mod gcn;
pub mod geom;
pub mod graph;
pub mod jamfield;
pub mod linalg;
pub mod num;
pub mod optim;
pub mod plot;
pub mod swarm;

pub use error::{Error, Result};
pub use num::Scalar;

pub type Point = geom::Vec2<f64>;
pub type Field = jamfield::JammerField<f64>;
pub type Policy = jamfield::DisruptionPolicy<f64>;
pub type Uav = swarm::UavState<f64>;
pub type Swarm = swarm::SwarmConfig<f64>;
pub type Disk = swarm::DangerDisk<f64>;
pub type Snapshot = graph::GraphSnapshot<f64>;
pub type JammerLabel = graph::Label<f64>;
pub type Model = gcn::GcnModel<f64>;
pub type ModelF32 = gcn::GcnModel<f32>;
pub type Dataset = Vec<datagen::Sample<f64>>;
