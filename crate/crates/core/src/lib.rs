//! Capsize risk for stochastic roll models.
//!
//! - [`model`]: system abstraction, toy roll model, noise filters
//! - [`integrate`]: RK4 / Euler–Maruyama and first-crossing detection
//! - [`saddle`]: saddles, stable manifolds, dividing surfaces, capsize-time ensembles
//! - [`tpt`]: stationary density, committors, reactive density and rates on a grid
//! - [`mc`]: direct Monte Carlo transition statistics
//! - [`ldt`]: minimum-action paths

pub mod error;
pub mod grid;
pub mod integrate;
pub mod ldt;
pub mod mc;
pub mod model;
pub mod rng;
pub mod saddle;
pub mod sparse;
pub mod stats;
pub mod tpt;

pub use error::{Error, Result};
pub use integrate::{first_crossing, integrate_ode, integrate_sde, CrossingResult, Path};
pub use ldt::{minimize_action, rate_asymptotic, ActionResult, DiscretePath, MinimizeOptions};
pub use mc::{reactive_histogram, sample_transitions, survivability_mc, TransitionRecord};
pub use model::{couple_filter, ou_stationary_covariance, toy_roll_system, FilterSpec, RollModelParams, SystemSpec};
pub use saddle::{
    capsize_time_ensemble, default_dividing_surface, find_saddle, stable_manifold_2d, DividingSurface, InitialSampler, SaddleInfo,
};
pub use stats::CapsizeStats;
pub use tpt::{
    reactive_density, solve_committor_backward, solve_committor_forward, solve_stationary_density, transition_rate_tpt,
};
