//! Constraint-driven, energy-aware, resilient multi-robot control.
//!
//! Robot inputs are synthesized point-wise in time by a strictly convex QP
//! whose constraints encode coordinated tasks (control barrier functions),
//! battery sufficiency, and a frame-potential-based resilience measure. A
//! discrete-time simulation engine runs seeded failure-injection experiments
//! on top of the controller.
//!
//! Module map:
//! - [`frames`]: frame operators, tightness, frame potentials and gradients
//! - [`qp`]: dense strictly convex QP solver (dual active set)
//! - [`control`]: control-affine models, Lie derivatives, QP assembly
//! - [`tasks`]: coverage / formation / consensus CBFs and planar geometry
//! - [`energy`]: battery model, charging stations, energy CBF rows
//! - [`resilience`]: the task-sensitivity frame and the resilience constraint
//! - [`sim`]: discrete-time engine, failure schedules, batch averaging
//! - [`config`]: scenario description shared by the library and the CLI

pub mod config;
pub mod control;
pub mod energy;
pub mod frames;
pub mod qp;
pub mod resilience;
pub mod sim;
pub mod tasks;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty frame")]
    EmptyFrame,
    #[error("degenerate frame vector (owner {owner}, column {column})")]
    DegenerateFrameVector { owner: usize, column: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coincident positions: robots {0} and {1}")]
    CoincidentPositions(usize, usize),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("robot {robot} / task {task}: {message}")]
    Evaluation {
        robot: usize,
        task: usize,
        message: String,
    },
    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
