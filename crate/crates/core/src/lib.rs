//! Exact simulation and recurrence verification for a repairable
//! two-element reliability process.
//!
//! The process `Z_t = (i, x; j, y)` tracks the regime of each element
//! (working or under repair) and the time since its last change. Between
//! jumps both clocks advance at unit rate; element 1 switches at rate
//! `λ(Z)` and element 2 at rate `μ(Z)`.
//!
//! Modules:
//! - [`state`]: state space, flow, jump maps
//! - [`intensity`]: certified intensity families
//! - [`sampler`]: exact event sampling and path simulation
//! - [`transition`]: quadrature of exact transition probabilities
//! - [`lyapunov`]: Lyapunov functions, generator, drift checks, constants
//! - [`recurrence`]: Monte-Carlo hitting times, Dynkin residuals,
//!   occupation statistics and regeneration cycles
//! - [`experiment`]: configuration files, dispatch and report files

pub mod error;
pub mod estimate;
pub mod experiment;
pub mod intensity;
pub mod lyapunov;
pub mod numerics;
pub mod recurrence;
pub mod rng;
pub mod sampler;
pub mod state;
pub mod transition;

pub use error::{Error, Result};
pub use intensity::{Family, IntensityModel};
pub use rng::RngStream;
pub use sampler::{Method, Path};
pub use state::{Component, State};
