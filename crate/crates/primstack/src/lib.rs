//! Prioritized operational-space control learned from motor-primitive
//! demonstrations.
//!
//! The library fuses a set of dynamical-systems motor primitives, each living
//! in its own task space, into a single joint-space control law. Primitives
//! are assigned priorities; the control of the lowest-priority primitive is
//! learned first and every higher-priority primitive learns only the offset
//! it needs on top of the lower ones and the null-space posture control.
//! Because the number of priority orderings grows factorially, small stacks
//! are evaluated exhaustively on a task and the best ordering is kept.
//!
//! Modules:
//! - [`primitives`] — canonical phase system, normalized Gaussian bases,
//!   discrete motor primitives (standard and velocity-goal forms), imitation
//!   learning.
//! - [`policy`] — single-primitive linear control laws via ridge regression,
//!   cost-weighted regression, and the kernelized (Woodbury) form.
//! - [`prioritized`] — priority-ordered offset training and the combined
//!   control law `u = u0 + sum(du_n)`.
//! - [`robot`] — a redundant kinematic arm with forward kinematics,
//!   Jacobians, an analytic successive-projection control oracle, and
//!   acceleration-level simulation.
//! - [`bounce`] — a deterministic ball-bouncing world: ballistic flight,
//!   racket reflection with restitution, the hitting-plane strategy, and
//!   trial execution.
//! - [`harness`] — per-primitive data collection, exhaustive dominance
//!   studies, statistics, and reports.
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, and the `primstack` binary for the command-line surface.

pub mod bounce;
pub mod error;
pub mod harness;
pub mod policy;
pub mod primitives;
pub mod prioritized;
pub mod robot;

pub use error::{Error, Result};
