//! Well-mixed companions to the spatial chain.
//!
//! When space is ignored, each wealth trajectory becomes a jump process
//! whose opponent is drawn from the population at large. This module
//! implements that limit three ways, from most to least faithful:
//!
//! * [`MFEnsemble`]: `N` cooperator and `N` defector wealth samples, each
//!   carrying a Poisson game clock of rate `v` (dead samples keep ticking as
//!   no-ops, so the total event rate is constant, mirroring the engine). A
//!   live cooperator meets a live defector with probability `rho0 * rho_t`
//!   (losing `S`) and a live cooperator with probability `beta0 * beta_t`
//!   (gaining `R`), where `beta_t`, `rho_t` are the current positive-wealth
//!   fractions of the two sample populations: the mean-field closure is
//!   plugged into the simulation itself. A live defector gains `T` with
//!   probability `beta0 * beta_t`, and with probability `rho0 * rho_t` it
//!   plays another defector, losing `2P` in half of those events.
//! * [`integrate_master`]: the same dynamics as coupled measure-valued
//!   equations on the integer wealth lattice. The wealth law of each
//!   population evolves by gain/loss flows in which every term, gain and
//!   loss alike, is gated on the *source* holding strictly positive wealth:
//!   dead mass is frozen in place. Written as flows this is exactly
//!   conservative: the right-hand side sums to zero by construction, not
//!   approximately.
//! * [`linearized_*`]: freeze the environment at its initial fractions
//!   (`beta_t = rho_t = 1`) and drop the death gate. Each trajectory is then
//!   a compound Poisson walk with closed-form drift and variance,
//!   Chebyshev-style confidence bands, and an initial-wealth threshold
//!   above which survival has a guaranteed probability floor.
//!
//! # Conventions
//!
//! * `beta0 + rho0 = 1`: the composition of the ambient population.
//! * `half_rate`: some derivations count each pairwise game once per pair
//!   rather than once per participant, which halves the per-individual
//!   event rate. Setting this flag replaces `v` with `v/2` everywhere.
//! * Ensemble draw order per event: holding time, sample index, then (only
//!   for a live sample) one jump uniform, compared against the loss
//!   probability first, then the gain probability.
//! * The master window `[w_min, w_max]` must satisfy `w_min <= 0 < w_max`.
//!   Mass that falls below the window is dead and exactly frozen; mass that
//!   escapes above is alive and *should* keep jumping, so the integrator
//!   fails with [`MFError::WindowOverflow`] if it ever exceeds
//!   [`OVERFLOW_TOLERANCE`]. [`default_windows`] sizes windows from a
//!   Poisson tail bound so that escape mass stays below 1e-10.

use crate::model::{PayoffMatrix, Wealth};
use crate::rng::{mix, Rng};
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

/// Negative lattice mass beyond this magnitude is an integration failure.
pub const NEGATIVE_MASS_TOLERANCE: f64 = 1e-9;
/// Above-window escape mass beyond this is a window-sizing failure.
pub const OVERFLOW_TOLERANCE: f64 = 1e-10;

/// Errors from the mean-field layer.
#[derive(Debug, Error, PartialEq)]
pub enum MFError {
    /// A parameter constraint was violated; the payload names it.
    #[error("mean-field parameter constraint violated: {0}")]
    InvalidParams(&'static str),
    /// Positive-wealth mass escaped above the lattice window.
    #[error("wealth mass escaped the lattice window")]
    WindowOverflow,
    /// Integration produced mass below -{NEGATIVE_MASS_TOLERANCE}.
    #[error("negative probability mass")]
    NegativeMass,
    /// A survival threshold was requested for a walk with nonpositive
    /// drift, where no finite initial wealth guarantees survival.
    #[error("drift is not positive")]
    NonpositiveDrift,
}

/// Parameters of the well-mixed limit.
#[derive(Debug, Clone, PartialEq)]
pub struct MFParams {
    /// Fraction of cooperators in the ambient population.
    pub beta0: f64,
    /// Fraction of defectors; `beta0 + rho0 = 1`.
    pub rho0: f64,
    /// Per-individual game rate.
    pub v: f64,
    pub payoffs: PayoffMatrix,
    /// Initial wealth law: `(wealth, probability)` atoms.
    pub m0: Vec<(Wealth, f64)>,
    /// Count games once per pair instead of once per participant,
    /// halving the effective per-individual rate.
    pub half_rate: bool,
}

impl MFParams {
    /// Point-mass initial law at `q0`.
    pub fn point_mass(q0: Wealth) -> Vec<(Wealth, f64)> {
        vec![(q0, 1.0)]
    }

    /// The per-individual event rate after the `half_rate` convention.
    pub fn effective_rate(&self) -> f64 {
        if self.half_rate {
            self.v / 2.0
        } else {
            self.v
        }
    }

    /// Mean of the initial wealth law.
    pub fn q0_mean(&self) -> f64 {
        self.m0.iter().map(|&(w, p)| w as f64 * p).sum()
    }

    pub fn validate(&self) -> Result<(), MFError> {
        use MFError::InvalidParams as Invalid;
        if !(self.beta0 >= 0.0 && self.beta0 <= 1.0) {
            return Err(Invalid("0 <= beta0 <= 1"));
        }
        if !(self.rho0 >= 0.0 && self.rho0 <= 1.0) {
            return Err(Invalid("0 <= rho0 <= 1"));
        }
        if (self.beta0 + self.rho0 - 1.0).abs() > 1e-9 {
            return Err(Invalid("beta0 + rho0 == 1"));
        }
        if !(self.v.is_finite() && self.v >= 0.0) {
            return Err(Invalid("v >= 0 and finite"));
        }
        if self.m0.is_empty() {
            return Err(Invalid("m0 is nonempty"));
        }
        let mut total = 0.0;
        for &(_, p) in &self.m0 {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Invalid("m0 masses >= 0"));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Invalid("m0 masses sum to 1"));
        }
        Ok(())
    }
}

/// Per-event jump law of one wealth trajectory: a gain step, a loss step,
/// and an implicit zero-jump with the leftover probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpLaw {
    pub gain_step: Wealth,
    pub p_gain: f64,
    /// Signed, normally negative.
    pub loss_step: Wealth,
    pub p_loss: f64,
}

impl JumpLaw {
    pub fn p_zero(&self) -> f64 {
        1.0 - self.p_gain - self.p_loss
    }
}

/// Jump law of a live cooperator against effective opponent fractions
/// `beta_eff = beta0 * beta_t`, `rho_eff = rho0 * rho_t`.
pub fn cooperator_jump_law(payoffs: &PayoffMatrix, beta_eff: f64, rho_eff: f64) -> JumpLaw {
    JumpLaw {
        gain_step: payoffs.r,
        p_gain: beta_eff,
        loss_step: -payoffs.s,
        p_loss: rho_eff,
    }
}

/// Jump law of a live defector: it gains `T` from a cooperator, and in a
/// defector/defector meeting the fair coin makes it pay `2P` half the time
/// (the other half is a zero-jump).
pub fn defector_jump_law(payoffs: &PayoffMatrix, beta_eff: f64, rho_eff: f64) -> JumpLaw {
    JumpLaw {
        gain_step: payoffs.t,
        p_gain: beta_eff,
        loss_step: -2 * payoffs.p,
        p_loss: rho_eff / 2.0,
    }
}

/// Jump law of the linearized walk: environment frozen at the initial
/// composition, no death gate.
pub fn linearized_jump_law(params: &MFParams) -> JumpLaw {
    cooperator_jump_law(&params.payoffs, params.beta0, params.rho0)
}

// ---------------------------------------------------------------------------
// Sample ensemble
// ---------------------------------------------------------------------------

/// Which sample population an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Population {
    Cooperators,
    Defectors,
}

/// Event-driven sample ensemble of the well-mixed dynamics.
#[derive(Debug, Clone)]
pub struct MFEnsemble {
    coop: Vec<Wealth>,
    def: Vec<Wealth>,
    live_coop: usize,
    live_def: usize,
    clock: f64,
    events: u64,
}

impl MFEnsemble {
    /// Draws `n_coop + n_def` initial wealths from `m0` (cooperators first,
    /// one uniform per sample, inverse-CDF).
    pub fn new(
        params: &MFParams,
        n_coop: usize,
        n_def: usize,
        rng: &mut Rng,
    ) -> Result<Self, MFError> {
        params.validate()?;
        if n_coop + n_def == 0 {
            return Err(MFError::InvalidParams("ensemble is nonempty"));
        }
        let sample = |rng: &mut Rng| -> Wealth {
            let u = rng.next_f64();
            let mut acc = 0.0;
            for &(w, p) in &params.m0 {
                acc += p;
                if u < acc {
                    return w;
                }
            }
            params.m0.last().unwrap().0
        };
        let coop: Vec<Wealth> = (0..n_coop).map(|_| sample(rng)).collect();
        let def: Vec<Wealth> = (0..n_def).map(|_| sample(rng)).collect();
        let live_coop = coop.iter().filter(|&&w| w > 0).count();
        let live_def = def.iter().filter(|&&w| w > 0).count();
        Ok(MFEnsemble { coop, def, live_coop, live_def, clock: 0.0, events: 0 })
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn wealths(&self, which: Population) -> &[Wealth] {
        match which {
            Population::Cooperators => &self.coop,
            Population::Defectors => &self.def,
        }
    }

    /// Fraction of samples with strictly positive wealth (0 for an empty
    /// population).
    pub fn positive_fraction(&self, which: Population) -> f64 {
        let (live, n) = match which {
            Population::Cooperators => (self.live_coop, self.coop.len()),
            Population::Defectors => (self.live_def, self.def.len()),
        };
        if n == 0 {
            0.0
        } else {
            live as f64 / n as f64
        }
    }

    /// Normalized wealth histogram of one population.
    pub fn histogram(&self, which: Population) -> BTreeMap<Wealth, f64> {
        let samples = self.wealths(which);
        let n = samples.len().max(1);
        let mut hist = BTreeMap::new();
        for &w in samples {
            *hist.entry(w).or_insert(0.0) += 1.0 / n as f64;
        }
        hist
    }

    /// One event: every sample (dead or alive) carries a clock of rate
    /// `effective_rate()`, so the holding time has rate `(n_c + n_d) * v`
    /// and the target is uniform. Dead targets are no-ops that still count
    /// and still advance time.
    pub fn step(&mut self, params: &MFParams, rng: &mut Rng) {
        let n = self.coop.len() + self.def.len();
        let rate = n as f64 * params.effective_rate();
        if rate > 0.0 {
            self.clock += rng.exp(rate);
        }
        self.events += 1;
        let target = rng.uniform_usize(n);
        let beta_eff = params.beta0 * self.positive_fraction(Population::Cooperators);
        let rho_eff = params.rho0 * self.positive_fraction(Population::Defectors);
        let (wealth, law, live): (&mut Wealth, JumpLaw, &mut usize) =
            if target < self.coop.len() {
                (
                    &mut self.coop[target],
                    cooperator_jump_law(&params.payoffs, beta_eff, rho_eff),
                    &mut self.live_coop,
                )
            } else {
                (
                    &mut self.def[target - self.coop.len()],
                    defector_jump_law(&params.payoffs, beta_eff, rho_eff),
                    &mut self.live_def,
                )
            };
        if *wealth <= 0 {
            // Dead sample: the jump uniform is not drawn.
            return;
        }
        let u = rng.next_f64();
        let delta = if u < law.p_loss {
            law.loss_step
        } else if u < law.p_loss + law.p_gain {
            law.gain_step
        } else {
            0
        };
        let before_alive = *wealth > 0;
        *wealth += delta;
        let after_alive = *wealth > 0;
        match (before_alive, after_alive) {
            (true, false) => *live -= 1,
            (false, true) => *live += 1,
            _ => {}
        }
    }

    /// Runs events until the clock would pass `t_end`, then sets the clock
    /// to exactly `t_end`. With a zero rate the clock jumps straight to the
    /// horizon.
    pub fn run_until(&mut self, params: &MFParams, t_end: f64, rng: &mut Rng) {
        let n = self.coop.len() + self.def.len();
        let rate = n as f64 * params.effective_rate();
        if rate <= 0.0 {
            self.clock = self.clock.max(t_end);
            return;
        }
        loop {
            let dt = rng.exp(rate);
            if self.clock + dt > t_end {
                self.clock = t_end;
                return;
            }
            self.clock += dt;
            self.events += 1;
            // Inline of `step` minus the holding time, which is already
            // drawn and accepted.
            let target = rng.uniform_usize(n);
            let beta_eff = params.beta0 * self.positive_fraction(Population::Cooperators);
            let rho_eff = params.rho0 * self.positive_fraction(Population::Defectors);
            let (wealth, law, live): (&mut Wealth, JumpLaw, &mut usize) =
                if target < self.coop.len() {
                    (
                        &mut self.coop[target],
                        cooperator_jump_law(&params.payoffs, beta_eff, rho_eff),
                        &mut self.live_coop,
                    )
                } else {
                    (
                        &mut self.def[target - self.coop.len()],
                        defector_jump_law(&params.payoffs, beta_eff, rho_eff),
                        &mut self.live_def,
                    )
                };
            if *wealth <= 0 {
                continue;
            }
            let u = rng.next_f64();
            let delta = if u < law.p_loss {
                law.loss_step
            } else if u < law.p_loss + law.p_gain {
                law.gain_step
            } else {
                0
            };
            *wealth += delta;
            if delta < 0 && *wealth <= 0 {
                *live -= 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Master equation on the wealth lattice
// ---------------------------------------------------------------------------

/// Probability masses on the integer wealth window `[w_min, w_max]`, plus
/// two frozen accumulators for mass that left the window: `below` (dead,
/// exact) and `above` (alive, must stay under [`OVERFLOW_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct WealthLattice {
    w_min: Wealth,
    masses: Vec<f64>,
    below: f64,
    above: f64,
}

impl WealthLattice {
    /// Empty lattice over `[w_min, w_max]` inclusive.
    pub fn new(w_min: Wealth, w_max: Wealth) -> Result<Self, MFError> {
        if w_min > w_max {
            return Err(MFError::InvalidParams("w_min <= w_max"));
        }
        let len = (w_max - w_min + 1) as usize;
        Ok(WealthLattice { w_min, masses: vec![0.0; len], below: 0.0, above: 0.0 })
    }

    /// Lattice holding the initial law `m0`. Atoms outside the window land
    /// in the overflow accumulators.
    pub fn from_m0(m0: &[(Wealth, f64)], w_min: Wealth, w_max: Wealth) -> Result<Self, MFError> {
        let mut lattice = WealthLattice::new(w_min, w_max)?;
        for &(w, p) in m0 {
            lattice.deposit(w, p);
        }
        Ok(lattice)
    }

    pub fn w_min(&self) -> Wealth {
        self.w_min
    }

    pub fn w_max(&self) -> Wealth {
        self.w_min + self.masses.len() as Wealth - 1
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn below(&self) -> f64 {
        self.below
    }

    pub fn above(&self) -> f64 {
        self.above
    }

    /// Mass at one wealth value (0 outside the window; overflow mass is not
    /// attributed to any single value).
    pub fn mass(&self, w: Wealth) -> f64 {
        if w < self.w_min || w > self.w_max() {
            0.0
        } else {
            self.masses[(w - self.w_min) as usize]
        }
    }

    fn deposit(&mut self, w: Wealth, mass: f64) {
        if w < self.w_min {
            self.below += mass;
        } else if w > self.w_max() {
            self.above += mass;
        } else {
            self.masses[(w - self.w_min) as usize] += mass;
        }
    }

    /// Total mass including both overflow accumulators.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.below + self.above
    }

    /// Mass with strictly positive wealth. Above-window mass counts as
    /// positive (the window invariant keeps `w_max > 0`); below-window mass
    /// counts as dead (`w_min <= 0`).
    pub fn positive_mass(&self) -> f64 {
        let start = if self.w_min > 0 { 0 } else { (1 - self.w_min) as usize };
        self.masses[start.min(self.masses.len())..].iter().sum::<f64>() + self.above
    }

    /// Mean wealth of the in-window mass (overflow excluded).
    pub fn mean(&self) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .map(|(i, &m)| (self.w_min + i as Wealth) as f64 * m)
            .sum()
    }

    /// Nonzero in-window masses as a map, for comparisons against sampled
    /// histograms. Entries below 1e-15 are dropped.
    pub fn histogram(&self) -> BTreeMap<Wealth, f64> {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 1e-15)
            .map(|(i, &m)| (self.w_min + i as Wealth, m))
            .collect()
    }
}

/// Joint law of the two populations at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    pub coop: WealthLattice,
    pub def: WealthLattice,
    pub t: f64,
}

impl MasterState {
    /// Builds both lattices from `m0` with windows sized for integration up
    /// to `t_end` (see [`default_windows`]).
    pub fn new(params: &MFParams, t_end: f64) -> Result<Self, MFError> {
        params.validate()?;
        let ((cmin, cmax), (dmin, dmax)) = default_windows(params, t_end);
        Ok(MasterState {
            coop: WealthLattice::from_m0(&params.m0, cmin, cmax)?,
            def: WealthLattice::from_m0(&params.m0, dmin, dmax)?,
            t: 0.0,
        })
    }

    /// Positive-wealth fraction of the cooperator law.
    pub fn beta(&self) -> f64 {
        self.coop.positive_mass()
    }

    /// Positive-wealth fraction of the defector law.
    pub fn rho(&self) -> f64 {
        self.def.positive_mass()
    }
}

/// Window bounds guaranteeing that escape mass stays below 1e-10 up to
/// `t_end`: a Poisson(`v_eff * t_end`) jump-count bound `Q` with a
/// sub-Gaussian tail margin, times the largest step in each direction.
pub fn default_windows(
    params: &MFParams,
    t_end: f64,
) -> ((Wealth, Wealth), (Wealth, Wealth)) {
    let lambda = params.effective_rate() * t_end.max(0.0);
    // P(Poisson(L) > L + x) <= exp(-x^2 / (2(L + x))); x = 12 sqrt(L+1) + 30
    // pushes that below 1e-12 for any L.
    let q = (lambda + 12.0 * (lambda + 1.0).sqrt() + 30.0).ceil() as Wealth;
    let lo = params.m0.iter().map(|&(w, _)| w).min().unwrap_or(0);
    let hi = params.m0.iter().map(|&(w, _)| w).max().unwrap_or(0);
    let window = |steps: [Wealth; 2]| -> (Wealth, Wealth) {
        let max_up = steps.iter().copied().max().unwrap().max(0);
        let max_down = steps.iter().map(|&s| -s).max().unwrap().max(0);
        ((lo - max_down * q).min(0), (hi + max_up * q).max(1))
    };
    let p = &params.payoffs;
    (window([p.r, -p.s]), window([p.t, -2 * p.p]))
}

/// Time derivative of a [`MasterState`], including overflow flows.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterDerivative {
    pub coop: Vec<f64>,
    pub coop_below: f64,
    pub coop_above: f64,
    pub def: Vec<f64>,
    pub def_below: f64,
    pub def_above: f64,
}

fn lattice_flows(
    lattice: &WealthLattice,
    law: &JumpLaw,
    rate: f64,
) -> (Vec<f64>, f64, f64) {
    let mut d = vec![0.0; lattice.masses().len()];
    let mut d_below = 0.0;
    let mut d_above = 0.0;
    let w_min = lattice.w_min();
    let w_max = lattice.w_max();
    let gain_rate = rate * law.p_gain;
    let loss_rate = rate * law.p_loss;
    let mut deposit = |w: Wealth, amount: f64| {
        if w < w_min {
            d_below += amount;
        } else if w > w_max {
            d_above += amount;
        } else {
            d[(w - w_min) as usize] += amount;
        }
    };
    for (idx, &mass) in lattice.masses().iter().enumerate() {
        let w = w_min + idx as Wealth;
        // Source positivity gate: dead mass neither flows out nor feeds any
        // gain term, so it is frozen exactly.
        if w <= 0 || mass == 0.0 {
            continue;
        }
        deposit(w, -(gain_rate + loss_rate) * mass);
        deposit(w + law.gain_step, gain_rate * mass);
        deposit(w + law.loss_step, loss_rate * mass);
    }
    (d, d_below, d_above)
}

/// Right-hand side of the coupled master equations at the given state.
///
/// Cooperator mass at `y > 0` flows up by `R` at rate `v * beta0 * beta_t`
/// and down by `S` at rate `v * rho0 * rho_t`; defector mass flows up by `T`
/// at rate `v * beta0 * beta_t` and down by `2P` at rate
/// `v * rho0 * rho_t / 2` (the defector/defector self-term: the coin spares
/// the defector half the time, and that zero-jump cancels against the loss
/// term). `beta_t`, `rho_t` are read from the state itself, making the
/// system nonlinear; gains and losses are both gated on the source being
/// alive, so the total derivative sums to zero exactly.
pub fn master_rhs(state: &MasterState, params: &MFParams) -> MasterDerivative {
    let rate = params.effective_rate();
    let beta_t = state.beta();
    let rho_t = state.rho();
    let beta_eff = params.beta0 * beta_t;
    let rho_eff = params.rho0 * rho_t;
    let coop_law = cooperator_jump_law(&params.payoffs, beta_eff, rho_eff);
    let def_law = defector_jump_law(&params.payoffs, beta_eff, rho_eff);
    let (coop, coop_below, coop_above) = lattice_flows(&state.coop, &coop_law, rate);
    let (def, def_below, def_above) = lattice_flows(&state.def, &def_law, rate);
    MasterDerivative { coop, coop_below, coop_above, def, def_below, def_above }
}

fn add_scaled(state: &MasterState, derivative: &MasterDerivative, scale: f64) -> MasterState {
    let mut next = state.clone();
    for (m, d) in next.coop.masses.iter_mut().zip(&derivative.coop) {
        *m += scale * d;
    }
    next.coop.below += scale * derivative.coop_below;
    next.coop.above += scale * derivative.coop_above;
    for (m, d) in next.def.masses.iter_mut().zip(&derivative.def) {
        *m += scale * d;
    }
    next.def.below += scale * derivative.def_below;
    next.def.above += scale * derivative.def_above;
    next
}

fn accumulate(target: &mut MasterDerivative, source: &MasterDerivative, weight: f64) {
    for (t, s) in target.coop.iter_mut().zip(&source.coop) {
        *t += weight * s;
    }
    target.coop_below += weight * source.coop_below;
    target.coop_above += weight * source.coop_above;
    for (t, s) in target.def.iter_mut().zip(&source.def) {
        *t += weight * s;
    }
    target.def_below += weight * source.def_below;
    target.def_above += weight * source.def_above;
}

/// Time-stepping scheme for [`integrate_master`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    #[default]
    Rk4,
    /// Forward Euler, mainly for cross-checking.
    Euler,
}

/// One recorded point of a master integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterSample {
    pub t: f64,
    pub beta: f64,
    pub rho: f64,
}

/// Integrates the master equations from `state.t` to `t_end` with step
/// `dt` (the last step is shortened to land exactly). Returns the final
/// state and one sample per step boundary, initial state included.
///
/// Fails with [`MFError::NegativeMass`] if any mass dips below
/// -[`NEGATIVE_MASS_TOLERANCE`] (e.g. Euler with too coarse a step) and
/// with [`MFError::WindowOverflow`] if live mass escapes the window beyond
/// [`OVERFLOW_TOLERANCE`].
pub fn integrate_master(
    mut state: MasterState,
    params: &MFParams,
    t_end: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<(MasterState, Vec<MasterSample>), MFError> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MFError::InvalidParams("dt > 0"));
    }
    if t_end < state.t {
        return Err(MFError::InvalidParams("t_end >= start time"));
    }
    for lattice in [&state.coop, &state.def] {
        if lattice.w_min() > 0 {
            return Err(MFError::InvalidParams("window includes nonpositive wealth"));
        }
        if lattice.w_max() < 1 {
            return Err(MFError::InvalidParams("window includes positive wealth"));
        }
    }
    let mut samples = vec![MasterSample { t: state.t, beta: state.beta(), rho: state.rho() }];
    while state.t < t_end - 1e-12 {
        let h = dt.min(t_end - state.t);
        state = match integrator {
            Integrator::Euler => {
                let k1 = master_rhs(&state, params);
                add_scaled(&state, &k1, h)
            }
            Integrator::Rk4 => {
                let k1 = master_rhs(&state, params);
                let k2 = master_rhs(&add_scaled(&state, &k1, h / 2.0), params);
                let k3 = master_rhs(&add_scaled(&state, &k2, h / 2.0), params);
                let k4 = master_rhs(&add_scaled(&state, &k3, h), params);
                let mut combined = k1;
                accumulate(&mut combined, &k2, 2.0);
                accumulate(&mut combined, &k3, 2.0);
                accumulate(&mut combined, &k4, 1.0);
                add_scaled(&state, &combined, h / 6.0)
            }
        };
        state.t += h;
        for lattice in [&state.coop, &state.def] {
            if lattice.masses().iter().any(|&m| m < -NEGATIVE_MASS_TOLERANCE) {
                return Err(MFError::NegativeMass);
            }
            if lattice.above() > OVERFLOW_TOLERANCE {
                return Err(MFError::WindowOverflow);
            }
        }
        samples.push(MasterSample { t: state.t, beta: state.beta(), rho: state.rho() });
    }
    Ok((state, samples))
}

/// Total variation distance between two wealth histograms.
pub fn total_variation(a: &BTreeMap<Wealth, f64>, b: &BTreeMap<Wealth, f64>) -> f64 {
    let mut keys: Vec<Wealth> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Linearized walk
// ---------------------------------------------------------------------------

/// Closed-form moments of the linearized walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedMoments {
    /// Drift per unit time: `v_eff * (beta0 * R - rho0 * S)`.
    pub drift_rate: f64,
    /// Variance growth per unit time: `v_eff * (beta0 * R^2 + rho0 * S^2)`.
    pub variance_rate: f64,
    /// Mean at the probe time: `q0_mean + drift_rate * t`.
    pub mean: f64,
    /// Variance accumulated by the probe time: `variance_rate * t`
    /// (conditional on the initial value).
    pub variance: f64,
}

/// Drift and variance of the linearized walk, with the mean and variance
/// accumulated by time `t`. The initial mean comes from `m0`.
pub fn analytic_moments(params: &MFParams, t: f64) -> LinearizedMoments {
    let v = params.effective_rate();
    let p = &params.payoffs;
    let drift_rate = v * (params.beta0 * p.r as f64 - params.rho0 * p.s as f64);
    let variance_rate =
        v * (params.beta0 * (p.r * p.r) as f64 + params.rho0 * (p.s * p.s) as f64);
    LinearizedMoments {
        drift_rate,
        variance_rate,
        mean: params.q0_mean() + drift_rate * t,
        variance: variance_rate * t,
    }
}

/// A Chebyshev confidence band for the linearized walk at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevInterval {
    pub lo: f64,
    pub hi: f64,
    /// Guaranteed minimum coverage, `1 - eta^-2` (0 when `eta <= 1`).
    pub coverage: f64,
}

/// The interval `mean(t) +- eta * sqrt(variance(t))`, which contains the
/// walk value at time `t` with probability at least `1 - eta^-2`.
pub fn chebyshev_interval(
    params: &MFParams,
    t: f64,
    eta: f64,
) -> Result<ChebyshevInterval, MFError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(MFError::InvalidParams("eta > 0"));
    }
    let moments = analytic_moments(params, t);
    let half = eta * moments.variance.sqrt();
    Ok(ChebyshevInterval {
        lo: moments.mean - half,
        hi: moments.mean + half,
        coverage: (1.0 - eta.powi(-2)).max(0.0),
    })
}

/// Normalization of the drift penalty in [`survival_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdForm {
    /// Penalty `eta^2 sigma^2 / (4 m)` with `m` the drift rate. Primary.
    #[default]
    PerDrift,
    /// Penalty `eta^2 sigma^2 / (4 (beta0 R - rho0 S)^2)`: an alternative
    /// normalization dividing by the squared per-event drift instead.
    PerSquaredDrift,
}

/// Survival margin of the linearized walk started at `q0`.
///
/// Returns `q0 - penalty(eta)`. When the returned level is positive the
/// walk stays strictly positive forever with probability at least
/// `1 - eta^-2`. Requires positive drift: a walk drifting down dies with
/// probability one and no margin exists.
pub fn survival_threshold(
    params: &MFParams,
    q0: f64,
    eta: f64,
    form: ThresholdForm,
) -> Result<f64, MFError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(MFError::InvalidParams("eta > 0"));
    }
    let moments = analytic_moments(params, 0.0);
    let p = &params.payoffs;
    let per_event_drift = params.beta0 * p.r as f64 - params.rho0 * p.s as f64;
    if moments.drift_rate <= 0.0 {
        return Err(MFError::NonpositiveDrift);
    }
    let denominator = match form {
        ThresholdForm::PerDrift => 4.0 * moments.drift_rate,
        ThresholdForm::PerSquaredDrift => 4.0 * per_event_drift * per_event_drift,
    };
    Ok(q0 - eta * eta * moments.variance_rate / denominator)
}

/// One linearized trajectory as `(time, value)` points, starting at
/// `(0, q0)` with one point per event (zero-jumps included) until `t_end`.
pub fn linearized_path(
    params: &MFParams,
    q0: Wealth,
    t_end: f64,
    rng: &mut Rng,
) -> Vec<(f64, Wealth)> {
    let law = linearized_jump_law(params);
    let rate = params.effective_rate();
    let mut path = vec![(0.0, q0)];
    if rate <= 0.0 {
        return path;
    }
    let mut t = 0.0;
    let mut value = q0;
    loop {
        t += rng.exp(rate);
        if t > t_end {
            return path;
        }
        let u = rng.next_f64();
        value += if u < law.p_loss {
            law.loss_step
        } else if u < law.p_loss + law.p_gain {
            law.gain_step
        } else {
            0
        };
        path.push((t, value));
    }
}

/// Value of one linearized trajectory at time `t`.
pub fn linearized_value_at(params: &MFParams, q0: Wealth, t: f64, rng: &mut Rng) -> Wealth {
    linearized_path(params, q0, t, rng).last().unwrap().1
}

/// Running minimum and final value of one linearized trajectory over
/// `[0, t_end]`. Paths are piecewise constant, so the minimum over event
/// values is the exact pathwise minimum.
pub fn linearized_running_min(
    params: &MFParams,
    q0: Wealth,
    t_end: f64,
    rng: &mut Rng,
) -> (Wealth, Wealth) {
    let path = linearized_path(params, q0, t_end, rng);
    let min = path.iter().map(|&(_, w)| w).min().unwrap();
    (min, path.last().unwrap().1)
}

/// A Monte Carlo survival estimate with a Wilson 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalEstimate {
    pub horizon: f64,
    pub survivors: u64,
    pub n_paths: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score 95% confidence interval for a binomial proportion, with the
/// degenerate endpoints pinned exactly (0 successes gives a lower bound of
/// 0, all successes an upper bound of 1).
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    // 95% two-sided normal quantile.
    let z = 1.959963984540054_f64;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // The formula hits the exact endpoints at 0/n and n/n only up to
    // rounding; pin them.
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

/// First time at which one linearized path drops to zero or below, or
/// `f64::INFINITY` if it stays positive up to `t_end`.
fn death_time(params: &MFParams, q0: Wealth, t_end: f64, rng: &mut Rng) -> f64 {
    if q0 <= 0 {
        return 0.0;
    }
    let law = linearized_jump_law(params);
    let rate = params.effective_rate();
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let mut t = 0.0;
    let mut value = q0;
    loop {
        t += rng.exp(rate);
        if t > t_end {
            return f64::INFINITY;
        }
        let u = rng.next_f64();
        value += if u < law.p_loss {
            law.loss_step
        } else if u < law.p_loss + law.p_gain {
            law.gain_step
        } else {
            0
        };
        if value <= 0 {
            return t;
        }
    }
}

/// Monte Carlo estimate of the probability that the linearized walk started
/// at `q0` stays strictly positive on `[0, horizon]`. Paths run in parallel
/// with per-path seeds derived from `seed`, so results are independent of
/// thread count.
pub fn survival_probability_estimate(
    params: &MFParams,
    q0: Wealth,
    horizon: f64,
    n_paths: u64,
    seed: u64,
) -> SurvivalEstimate {
    let survivors = (0..n_paths)
        .into_par_iter()
        .filter(|&path| {
            let mut rng = Rng::new(mix(&[seed, path]));
            death_time(params, q0, horizon, &mut rng) > horizon
        })
        .count() as u64;
    let (ci_low, ci_high) = wilson_interval(survivors, n_paths.max(1));
    SurvivalEstimate {
        horizon,
        survivors,
        n_paths,
        estimate: survivors as f64 / n_paths.max(1) as f64,
        ci_low,
        ci_high,
    }
}

/// Survival estimates over several horizons from one coupled path set: each
/// path is simulated once to the largest horizon and its death time is
/// compared against every horizon, so the estimates are exactly monotone in
/// the horizon.
pub fn survival_probability_sweep(
    params: &MFParams,
    q0: Wealth,
    horizons: &[f64],
    n_paths: u64,
    seed: u64,
) -> Vec<SurvivalEstimate> {
    let t_max = horizons.iter().copied().fold(0.0_f64, f64::max);
    let deaths: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = Rng::new(mix(&[seed, path]));
            death_time(params, q0, t_max, &mut rng)
        })
        .collect();
    horizons
        .iter()
        .map(|&h| {
            let survivors = deaths.iter().filter(|&&d| d > h).count() as u64;
            let (ci_low, ci_high) = wilson_interval(survivors, n_paths.max(1));
            SurvivalEstimate {
                horizon: h,
                survivors,
                n_paths,
                estimate: survivors as f64 / n_paths.max(1) as f64,
                ci_low,
                ci_high,
            }
        })
        .collect()
}
