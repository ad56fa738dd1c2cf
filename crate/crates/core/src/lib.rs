//! Differentiable rigid-contact simulation toolkit: convex collision detection
//! with surrogate nearest-point gradients, an analytic compliant-contact
//! simulator, contact-parameter identification, synthetic data scaling, and a
//! mesh graph-network dynamics model with reverse-mode rollout gradients.

pub mod error;
pub mod collide;
pub mod datagen;
pub mod geom;
pub mod gnn;
pub mod optimctl;
pub mod sysid;
pub mod teacher;
pub mod trajectory;

pub use error::{Error, Result};
