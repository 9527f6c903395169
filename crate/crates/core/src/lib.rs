//! Muscle-driven planar motion imitation toolkit.
//!
//! Layers, bottom-up: [`model`] (musculoskeletal geometry and Hill-type
//! muscles), [`sim`] (forward dynamics with ground contact), [`motion`]
//! (reference clips), [`audit`] (retargeting quality metrics), [`env`]
//! (imitation observations, rewards and termination), [`policy`]
//! (gated-residual Gaussian actor-critic), [`ppo`] (on-policy trainer) and
//! [`analysis`] (validation metrics, gait cycles, EMG processing).

pub mod analysis;
pub mod audit;
pub mod env;
pub mod error;
pub mod model;
pub mod motion;
pub mod policy;
pub mod ppo;
pub mod sim;

pub use error::{Error, Result};
