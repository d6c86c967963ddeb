//! Null controllability of coupled parabolic systems with star and tree
//! couplings driven by one scalar control.

pub mod carleman;
pub mod cli;
pub mod coupling;
pub mod geometry;
pub mod hum;
pub mod nonlinear;
pub mod pde;
pub mod scenario;
pub mod validation;
pub mod weights;
