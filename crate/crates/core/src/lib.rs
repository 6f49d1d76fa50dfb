//! Weighted `L²` solutions of `∂̄u = ω` on truncated grids over `C^n`.
//!
//! * [`weights`]: plurisubharmonic weights, `c_φ`, the ball defining function,
//!   the hinge cubic and the bumped family `ψ_k = φ + kχ(ρ)`.
//! * [`grid`]: grids, form fields, the discrete `∂̄`, weighted norms and diagnostics.
//! * [`solver`]: minimal weighted-norm solutions through the dual system.
//! * [`oracle`]: independent references (Cauchy transform, dense solve, finite differences).
//! * [`procedures`]: compact support by weight bumping, support avoidance and
//!   the approximation procedure, each producing a report.
//! * [`experiment`]: config files, presets and report output for the CLI.

pub mod error;
pub mod experiment;
pub mod grid;
pub mod oracle;
pub mod procedures;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
