//! Rectified flow over the latent space of a sequence VAE.
//!
//! Sentences are encoded into a continuous latent space, a velocity field is
//! trained to carry a source distribution of latents onto a target one along
//! straight lines, and a handful of Euler steps transport new latents that
//! are then decoded back to tokens. The VAE and flow objectives are trained
//! jointly with a lexicographic update that keeps the flow loss under a
//! constraint while descending on the VAE loss.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod flow;
pub mod lexico;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod vae;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use flow::{Direction, FlowModel, Trajectory};
pub use lexico::{ConstraintFloor, JointLosses, LexicoState, Mode};
pub use nets::{Parameterized, VelocityField, VelocityModel};
pub use rng::SeededRng;
pub use vae::SeqVae;
