//! Theta-expansions of real numbers and their ergodic statistics.
//!
//! Fix a non-square integer `m >= 2` and let theta = 1/sqrt(m). Every x in
//! (0, theta] has an expansion
//!
//! ```text
//! x = 1 / (theta*l1 + 1 / (theta*l2 + 1 / (theta*l3 + ...)))
//! ```
//!
//! with integer digits `l_k >= m`, produced by iterating the Gauss-type map
//! `T(x) = 1/x - theta * floor(1/(theta*x))`. Because theta^2 = 1/m, the map
//! has an explicit invariant density `h(x) = C * theta / (1 + theta*x)` with
//! `C = 1/log(1 + 1/m)`, and the whole measure calculus is available in
//! closed form.
//!
//! The crate is organized around that structure:
//!
//! * [`qfield`]: exact arithmetic in Q(sqrt(m)) with certified sign and floor,
//!   the backbone of exact orbit computation.
//! * [`dyadic`]: adaptive-precision dyadic interval arithmetic for certified
//!   digits from inexact starting points.
//! * [`expansion`]: the map itself, digit sequences, cylinders, convergents,
//!   orbit derivatives, and period detection, in three numeric modes.
//! * [`measure`]: the invariant measure, digit and tail masses, truncated
//!   moments, and quantiles.
//! * [`transfer`]: the transfer operator, Ulam discretization, spectral gap,
//!   joint digit masses, and psi-mixing estimates.
//! * [`montecarlo`]: reproducible trajectory ensembles and the weak-law,
//!   trimmed-sum, max-digit, and norming-dichotomy experiments.

pub mod dyadic;
pub mod expansion;
pub mod measure;
pub mod montecarlo;
pub mod qfield;
pub mod transfer;

pub use expansion::{Expansion, Mode, ThetaParams};
pub use measure::MeasureContext;
pub use qfield::QuadNumber;
