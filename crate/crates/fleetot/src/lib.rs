//! Finite-horizon optimal control in probability spaces.
//!
//! The state of the controlled system is a probability measure over a ground
//! space. The library solves such problems by a separation principle: dynamic
//! programming in the ground space produces a cost-to-go table, and a single
//! (possibly multi-marginal) optimal transport problem with that table as
//! transportation cost yields the fleet-level value and the state-input
//! distribution. A brute-force probability-space solver over empirical fleet
//! configurations certifies the equivalence on desk-scale instances.
//!
//! Module map:
//! * [`measures`] — discrete probability measures, pushforward, marginals.
//! * [`linprog`] — dense simplex (Bland's rule) and square assignment.
//! * [`transport`] — two- and multi-marginal optimal transport, plan/map
//!   extraction, Gaussian closed form.
//! * [`ground`] — finite ground systems and the backward recursions.
//! * [`lqr`] — closed-form linear-quadratic ground solvers.
//! * [`lifting`] — cost-to-go lifting, state-input distributions, fleet
//!   rollouts, and the noisy-lifting comparison.
//! * [`oracle`] — brute-force fleet dynamic programming and configuration
//!   counting.
//! * [`suite`] — seeded random instance generators and the verification
//!   suites built on them.

pub mod cost;
pub mod ground;
pub mod lifting;
pub mod linprog;
pub mod lqr;
pub mod measures;
pub mod oracle;
pub mod suite;
pub mod transport;

pub use cost::Cost;
pub use measures::{Atom, DiscreteMeasure, Point, StateInputDistribution};
