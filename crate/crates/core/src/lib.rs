//! Stochastic replicator dynamics in two-player zero-sum games.
//!
//! * [`game`]: games, simplex points, Nash / anti-equilibrium checks
//! * [`equilibrium`]: value, maximal-support equilibrium and anti-equilibrium
//! * [`ode`]: deterministic replicator flow and cross-entropy Lyapunov functions
//! * [`sde`]: Itô replicator SDEs integrated by Euler–Maruyama on the simplex
//! * [`generator`]: the backward Kolmogorov operator on log-type Lyapunov
//!   functions, H-exponents of corner measures, noise conditions
//! * [`measures`]: occupation histograms, corner mass, time averages, regret
//! * [`io`], [`recipes`]: file formats, bundled games and figure recipes

pub mod equilibrium;
pub mod error;
pub mod game;
pub mod generator;
pub mod io;
pub mod measures;
pub mod ode;
pub mod recipes;
pub mod sde;

pub use error::{Error, Result};
