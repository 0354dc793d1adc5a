//! Emission engine and photon-statistics toolkit for plasmon-launcher
//! single-photon sources.
//!
//! The electromagnetic half computes how a dipole embedded in a planar
//! metal/dielectric stack distributes its power between free-space photons,
//! bound surface plasmons and absorption in the metal. The statistical half
//! analyses time-tagged photon streams (antibunching, lifetimes, saturation,
//! propagation length, branching ratios) and ships a Monte Carlo generator
//! that produces such streams from known ground truth.

pub mod materials;
pub mod quadrature;
pub mod stratified;
pub mod dipole;
pub mod design;
pub mod photophysics;
pub mod sim;

mod lm;
