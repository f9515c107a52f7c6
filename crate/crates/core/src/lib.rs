//! Multi-layer shallow water solver with high-order well-balanced,
//! energy-stable finite difference schemes on fixed and adaptive moving meshes.
//!
//! Node states are stored layer by layer as `[h1, h1 u1, h1 v1, h2, ...]`,
//! with the bathymetry `b` carried alongside.

pub mod cases;
pub mod dissipation;
pub mod ecflux;
pub mod energy;
pub mod error;
pub mod model;
pub mod movingmesh;
pub mod solver_fixed;
pub mod wavespeed;

pub use error::{Error, Result};
pub use model::{Boundary, ConservedField, LayerSystem, StructuredGrid};
