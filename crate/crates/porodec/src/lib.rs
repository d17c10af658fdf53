//! Discretization toolkit for weakly-coupled elliptic-parabolic systems:
//! sparse linear algebra, triangular meshes, finite element assembly,
//! time-stepping schemes, a delay-equation lab, and numerical studies.

pub mod config;
pub mod delaylab;
pub mod femkit;
pub mod models;
pub mod meshkit;
pub mod sparsekit;
pub mod steppers;
pub mod studies;
