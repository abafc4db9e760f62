//! Simulation and analysis of gradient training dynamics for a single
//! associative-memory module under cross-entropy loss.
//!
//! The crate is organized around six subsystems:
//!
//! - [`model`]: the memory model, loss, exact gradient/Hessian and margins.
//! - [`particles`]: the reduction of matrix-space dynamics to a system of
//!   interacting particles (score projections).
//! - [`dynamics`]: the four gradient dynamics (GF, GD, SGF, SGD) with
//!   schedules, seeding and trajectory recording.
//! - [`closed_form`]: theoretical oracles (Lambert-W margin solution,
//!   multi-class invariants, two-token gamma theory, loss-spike bound).
//! - [`analysis`]: derived diagnostics (gamma coordinates, landscape
//!   rasterization, sharpness, phase diagrams, excess risk).
//! - [`verify`]: a self-contained property suite used by the CLI release gate.

pub mod analysis;
pub mod closed_form;
pub mod dynamics;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod ode;
pub mod particles;
pub mod rng;
pub mod task;
pub mod verify;

pub use embeddings::{EmbeddingGenerator, EmbeddingSet};
pub use error::CoreError;
pub use model::{MarginVector, Weights};
pub use task::TaskSpec;
