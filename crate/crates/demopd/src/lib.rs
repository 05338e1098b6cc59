//! Demographic prisoner's dilemma simulator.
//!
//! Agents live on a discrete torus, carry integer wealth, and play a fixed
//! strategy (cooperate or defect). Pairwise games transfer wealth, agents
//! whose wealth is driven to zero or below die in place, and agents whose
//! wealth exceeds a birth threshold may place a child into an unoccupied
//! population slot. All dynamics are driven by a single Poisson event clock
//! whose rate never changes, so every run is a deterministic function of its
//! seed.
//!
//! The crate has three tiers:
//!
//! * [`model`] + [`engine`]: the exact agent-based chain (moves, games,
//!   births) with a lazily materialized population, usable up to populations
//!   of 10^7 slots.
//! * [`meanfield`]: well-mixed companions to the spatial chain: an
//!   event-driven sample ensemble, a master-equation integrator on the
//!   integer wealth lattice, and a linearized compound-Poisson wealth walk
//!   with closed-form drift/variance and survival bounds.
//! * [`sweep`] + [`observables`]: payoff-grid phase diagrams and the
//!   measurement kit (site photographs, survival counts, wealth stopping
//!   times) shared by the other tiers.

pub mod engine;
pub mod meanfield;
pub mod model;
pub mod observables;
pub mod rng;
pub mod sweep;

pub use engine::{apply_birth, apply_game, apply_move, EngineError, EngineState, Event, EventKind, StopRule};
pub use meanfield::{
    integrate_master, MFEnsemble, MFError, MFParams, MasterState, SurvivalEstimate,
};
pub use model::{
    resolve_game, validate, Configuration, Coin, Flavor, GameOutcome, ModelError, PayoffMatrix,
    Particle, SimParams, Strategy, Wealth,
};
pub use rng::Rng;
pub use sweep::{figure2_preset, run_grid, CellResult, SweepError, SweepSpec};
