//! Convergence certificates for delayed inhibitory feedback cascades.
//!
//! The crate computes asymptotic Cauchy gains of cascade stages (delays,
//! memoryless maps, scalar monotone ODEs), composes them, checks the
//! small-gain contraction condition for the feedback loop, and validates the
//! resulting certificate by integrating the closed-loop delay-differential
//! system.

pub mod behaviors;
pub mod gains;
pub mod signals;
pub mod decrease;
pub mod simulate;
pub mod certify;
