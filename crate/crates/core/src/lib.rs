//! Discrete-time solver for decoupled forward-backward SDEs driven by a
//! Brownian motion and a single jump time, with a generator of quadratic
//! growth in `z`.
//!
//! The equation is split into a post-jump family of Brownian FBSDEs indexed
//! by the jump date and a pre-jump Brownian FBSDE whose generator consumes
//! the post-jump diagonal. Both are discretized with an Euler scheme forward
//! and an implicit backward Euler scheme backward, after the generator has
//! been made Lipschitz in `z` by clipping at an explicit radius.
//!
//! Module map:
//!
//! - [`model`]: coefficient presets, assumption constants, jump laws and the
//!   sampling-based assumption validator.
//! - [`truncation`]: closed-form gradient and `Z` bounds, truncation radius,
//!   the clipped generator.
//! - [`forward`]: time grids, seeded increments, Euler schemes for the
//!   pre-jump state and the post-jump family, jump-time sampling.
//! - [`condexp`]: Gauss-Hermite and least-squares Monte Carlo conditional
//!   expectation estimators.
//! - [`backward`]: the implicit backward schemes and path recombination.
//! - [`oracles`]: exhaustive tree, Cole-Hopf and linear closed-form references.
//! - [`harness`]: convergence experiments, rate fits and report files.

pub mod backward;
pub mod condexp;
pub mod error;
pub mod forward;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod truncation;

pub use error::{Error, Result};
