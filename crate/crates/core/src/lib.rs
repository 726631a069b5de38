//! Two-scale thermo-hydro-mechanical simulation of hydraulic fracture through
//! an idealised 2D glacier resting on bedrock.
//!
//! A water-filled vertical crevasse propagates from the surface to the bed,
//! then drives horizontal cracking along the ice-rock interface and uplift of
//! the ice sheet. The bulk is a plane-strain viscoelastic solid (Glen's law
//! creep in the ice), fracture is handled with extrinsically inserted cohesive
//! interface elements, and turbulent channel flow with wall melting/refreezing
//! is resolved per interface integration point.

pub mod channel;
pub mod cohesive;
pub mod constitutive;
pub mod error;
pub mod mesh;
pub mod scenario;
pub mod solver;

pub use error::SimError;
