//! Event-driven simulation engine.
//!
//! All dynamics run on a single Poisson clock whose total rate never
//! changes:
//!
//! ```text
//! lambda = K*d  +  K*(K-1)/2 * v  +  K*b
//!          moves      games           births
//! ```
//!
//! Each event picks a category with probability proportional to its weight,
//! then picks a target uniformly over every addressable unit of that
//! category: one of the `K` slots for moves and births, one of the
//! `K*(K-1)/2` unordered slot pairs for games. Targets that cannot act
//! (Unborn slots, pairs that are not co-located, parents below the birth
//! threshold, and so on) make the event a no-op, but the event still counts
//! and still advances the clock. Keeping the rate constant and addressing
//! dead weight uniformly is what makes the chain exactly equivalent to the
//! classical construction with one independent clock per agent and per pair,
//! while the event count stays a meaningful, comparable budget across
//! configurations.
//!
//! Exponential holding times are bookkeeping: every observable of interest
//! is a function of the embedded discrete-time chain (the event sequence),
//! so the clock is recorded but never influences which event fires.
//!
//! # Event semantics
//!
//! * **Move**: the slot, if born, steps one site in a uniformly chosen
//!   cardinal direction, wrapping on the torus. Dead particles still move;
//!   only Unborn slots stay put. Wealth is never touched by a move.
//! * **Game**: the pair plays if both slots are born and co-located, and,
//!   under [`Flavor::True`], both hold strictly positive wealth.
//!   [`Flavor::Ghost`] drops the positivity gate. A defect/defect game
//!   flips a fair coin to pick the single player who pays `2P`.
//! * **Birth**: the parent, if born with wealth strictly above `wc`, places
//!   a child (wealth `w0`, parent's strategy and position) into a uniformly
//!   chosen Unborn slot, paying `w0`. If no Unborn slot exists the event is
//!   a no-op. Under Ghost, cooperators never reproduce and defector births
//!   are free: the child still costs `wc`-threshold eligibility but the
//!   parent keeps its wealth.
//!
//! Under Ghost, every game and birth event additionally charges an upkeep of
//! `w0` to every born cooperator (or to every born particle when
//! `ghost_upkeep_all` is set), whether or not the event fired. The
//! birth-giver is exempt at an event where its birth actually fired, and a
//! newborn child is never charged at the event that created it. Moves never
//! charge upkeep.
//!
//! # Random draw order
//!
//! For replay stability the draws per event are consumed in a fixed,
//! documented order:
//!
//! 1. holding time (exponential with rate `lambda`);
//! 2. category (one uniform);
//! 3. target: slot index for moves and births, pair index for games;
//! 4. lazily, only when the event needs them: move direction (always drawn
//!    for a move event), the defect/defect coin (drawn only when the
//!    selected game fires between two defectors), the child slot (drawn
//!    only when the selected birth fires).
//!
//! # Large populations
//!
//! [`Configuration`] stores only materialized slots; the Unborn tail up to
//! `K` is virtual. Slot and pair indices are sampled arithmetically over the
//! full range `[0, K)`, so a population with `K = 10^7` and twenty live
//! particles costs the same per event as a dense one. A birth that selects a
//! virtual slot materializes the child at the next free index. Virtual slots
//! are mutually exchangeable (they carry no observable state), so this
//! deterministic relabeling leaves the law of every observable unchanged.
//!
//! Pair indices use the colexicographic convention: pair `(i, j)` with
//! `i < j` has index `j*(j-1)/2 + i`, see [`unrank_pair`].

use crate::model::{
    resolve_game, Coin, Configuration, Flavor, Particle, Strategy, Wealth,
};
use crate::rng::Rng;
use thiserror::Error;

/// Engine construction and stepping errors.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    /// The total event rate is zero (or not a positive number): the chain
    /// has no dynamics to simulate.
    #[error("total event rate is zero")]
    ZeroRate,
    /// `K` is too large for exact pair-index arithmetic.
    #[error("population size overflows pair arithmetic")]
    CapacityOverflow,
}

/// One step in a cardinal direction on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// +y
    Up,
    /// -y
    Down,
    /// -x
    Left,
    /// +x
    Right,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];
}

/// What an event did, with enough detail to replay it against the pre-state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// Slot `slot` attempts a move. The direction is always drawn, even when
    /// the slot is Unborn and the move is a no-op.
    Move { slot: u64, direction: Direction },
    /// The pair with colexicographic index `pair` attempts a game. `coin` is
    /// `Some` exactly when a defect/defect game fired.
    Game { pair: u64, coin: Option<Coin> },
    /// Slot `parent` attempts a birth. `child_slot` is `Some` exactly when
    /// the birth fired; it names the slot the child was written to.
    Birth { parent: u64, child_slot: Option<u64> },
}

/// One realized event of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    /// Absolute simulated time at which the event occurred.
    pub time: f64,
    /// 1-based event ordinal within the engine's lifetime.
    pub seq: u64,
}

/// Category weights of the unified clock, in event-space probabilities
/// proportional to `(K*d, K*(K-1)/2 * v, K*b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryWeights {
    pub move_weight: f64,
    pub game_weight: f64,
    pub birth_weight: f64,
}

impl CategoryWeights {
    pub fn lambda(&self) -> f64 {
        self.move_weight + self.game_weight + self.birth_weight
    }
}

/// Computes the category weights for a slot count and rates.
pub fn category_weights(k: u64, d: f64, v: f64, b: f64) -> CategoryWeights {
    let kf = k as f64;
    let pairs = pair_count_u128(k) as f64;
    CategoryWeights {
        move_weight: kf * d,
        game_weight: pairs * v,
        birth_weight: kf * b,
    }
}

fn pair_count_u128(k: u64) -> u128 {
    (u128::from(k) * u128::from(k.saturating_sub(1))) / 2
}

/// Inverse of the colexicographic pair numbering: maps `p` in
/// `[0, K*(K-1)/2)` to the unordered pair `(i, j)` with `i < j` and
/// `p = j*(j-1)/2 + i`.
pub fn unrank_pair(p: u64) -> (u64, u64) {
    // Float start, then exact integer fixup: sqrt is correctly rounded, so
    // the estimate is off by at most one.
    let tri = |j: u64| (u128::from(j) * u128::from(j - 1)) / 2;
    let mut j = ((1.0 + (1.0 + 8.0 * p as f64).sqrt()) / 2.0) as u64;
    j = j.max(1);
    while tri(j) > u128::from(p) {
        j -= 1;
    }
    while tri(j + 1) <= u128::from(p) {
        j += 1;
    }
    let i = p - tri(j) as u64;
    debug_assert!(i < j);
    (i, j)
}

/// True when the game for materialized-or-virtual slots `i` and `j` fires:
/// both born, co-located, and (under [`Flavor::True`]) both with strictly
/// positive wealth.
pub fn game_fires(config: &Configuration, i: u64, j: u64) -> bool {
    let a = config.slot(i);
    let b = config.slot(j);
    if !a.strategy.is_born() || !b.strategy.is_born() {
        return false;
    }
    if a.position != b.position {
        return false;
    }
    match config.params().flavor {
        Flavor::True => a.wealth > 0 && b.wealth > 0,
        Flavor::Ghost => true,
    }
}

/// True when a birth by `parent` fires: parent born with wealth strictly
/// above `wc`, at least one Unborn slot exists, and (under Ghost) the parent
/// is a defector.
pub fn birth_fires(config: &Configuration, parent: u64) -> bool {
    let p = config.slot(parent);
    if !p.strategy.is_born() || p.wealth <= config.params().wc {
        return false;
    }
    if config.params().flavor == Flavor::Ghost && p.strategy == Strategy::Cooperator {
        return false;
    }
    config.unborn_count() > 0
}

fn torus_step(position: (u32, u32), direction: Direction, m: u32) -> (u32, u32) {
    let (x, y) = position;
    match direction {
        Direction::Up => (x, (y + 1) % m),
        Direction::Down => (x, (y + m - 1) % m),
        Direction::Left => ((x + m - 1) % m, y),
        Direction::Right => ((x + 1) % m, y),
    }
}

/// Applies a move event. Unborn slots (materialized or virtual) stay put;
/// dead particles still move. Wealth is never touched.
pub fn apply_move(config: &mut Configuration, slot: u64, direction: Direction) {
    debug_assert!(slot < config.k());
    if slot >= config.materialized_len() {
        return;
    }
    let m = config.m();
    let p = config.particle_mut(slot);
    if p.strategy == Strategy::Unborn {
        return;
    }
    p.position = torus_step(p.position, direction, m);
}

/// Charges the Ghost per-event upkeep of `w0` to every born cooperator (or
/// every born particle when `ghost_upkeep_all` is set), skipping `exempt`.
fn ghost_upkeep(config: &mut Configuration, exempt: Option<u64>) {
    let w0 = config.params().w0;
    let all = config.params().ghost_upkeep_all;
    let len = config.materialized_len();
    for idx in 0..len {
        if exempt == Some(idx) {
            continue;
        }
        let p = config.particle_mut(idx);
        let charged = match p.strategy {
            Strategy::Unborn => false,
            Strategy::Cooperator => true,
            Strategy::Defector => all,
        };
        if charged {
            p.wealth -= w0;
        }
    }
}

/// Applies a game event for the pair with colexicographic index `pair`.
///
/// If the game fires (see [`game_fires`]) the payoff deltas are applied;
/// otherwise the board is unchanged. Under Ghost the per-event upkeep is
/// charged afterwards whether or not the game fired.
///
/// # Panics
///
/// A fired defect/defect game requires `coin` to be `Some`; anything else is
/// a caller bug.
pub fn apply_game(config: &mut Configuration, pair: u64, coin: Option<Coin>) {
    let (i, j) = unrank_pair(pair);
    debug_assert!(j < config.k());
    if game_fires(config, i, j) {
        let si = config.strategy(i);
        let sj = config.strategy(j);
        let coin = if si == Strategy::Defector && sj == Strategy::Defector {
            coin.expect("defect/defect game fired without a coin")
        } else {
            // The coin is irrelevant off the defect/defect diagonal.
            coin.unwrap_or(Coin::Heads)
        };
        let outcome = resolve_game(si, sj, coin, config.payoffs())
            .expect("fired game cannot involve unborn slots");
        config.particle_mut(i).wealth += outcome.delta_i;
        config.particle_mut(j).wealth += outcome.delta_j;
    }
    if config.params().flavor == Flavor::Ghost {
        ghost_upkeep(config, None);
    }
}

/// Applies a birth event.
///
/// The birth happens iff `child_slot` is `Some` and the guard
/// [`birth_fires`] holds; the child (wealth `w0`, parent's strategy and
/// position) is written to `child_slot`, which must be Unborn: either a
/// materialized Unborn slot or exactly the next virtual index. Under
/// [`Flavor::True`] the parent pays `w0`; under Ghost the parent pays
/// nothing. Ghost upkeep is charged afterwards, exempting the parent only
/// when the birth fired (the newborn is written after the charge and is
/// never hit).
pub fn apply_birth(config: &mut Configuration, parent: u64, child_slot: Option<u64>) {
    debug_assert!(parent < config.k());
    let fires = birth_fires(config, parent);
    debug_assert!(
        child_slot.is_none() || fires,
        "child slot supplied for a birth whose guard does not hold"
    );
    let fired = fires && child_slot.is_some();
    let ghost = config.params().flavor == Flavor::Ghost;
    if ghost {
        ghost_upkeep(config, if fired { Some(parent) } else { None });
    }
    if !fired {
        return;
    }
    let slot = child_slot.unwrap();
    let w0 = config.params().w0;
    let parent_state = config.slot(parent);
    let child = Particle {
        position: parent_state.position,
        wealth: w0,
        strategy: parent_state.strategy,
    };
    if slot < config.materialized_len() {
        let target = config.particle_mut(slot);
        assert!(target.strategy == Strategy::Unborn, "birth into an occupied slot");
        *target = child;
    } else {
        assert!(slot == config.materialized_len(), "birth into a non-contiguous virtual slot");
        config.push_particle(child);
    }
    if !ghost {
        config.particle_mut(parent).wealth -= w0;
    }
}

/// Net change of total board wealth that applying `kind` to `config` must
/// produce. Used as a per-step conservation check under debug assertions.
pub(crate) fn expected_wealth_delta(config: &Configuration, kind: &EventKind) -> Wealth {
    let params = config.params();
    let ghost = params.flavor == Flavor::Ghost;
    let upkeep_charge = |exempt: Option<u64>| -> Wealth {
        if !ghost {
            return 0;
        }
        let mut count = 0;
        for (idx, p) in config.materialized().iter().enumerate() {
            if exempt == Some(idx as u64) {
                continue;
            }
            let charged = match p.strategy {
                Strategy::Unborn => false,
                Strategy::Cooperator => true,
                Strategy::Defector => params.ghost_upkeep_all,
            };
            if charged {
                count += 1;
            }
        }
        -params.w0 * count
    };
    match *kind {
        EventKind::Move { .. } => 0,
        EventKind::Game { pair, .. } => {
            let (i, j) = unrank_pair(pair);
            let game = if game_fires(config, i, j) {
                let payoffs = config.payoffs();
                match (config.strategy(i), config.strategy(j)) {
                    (Strategy::Cooperator, Strategy::Cooperator) => 2 * payoffs.r,
                    (Strategy::Defector, Strategy::Defector) => -2 * payoffs.p,
                    _ => payoffs.t - payoffs.s,
                }
            } else {
                0
            };
            game + upkeep_charge(None)
        }
        EventKind::Birth { parent, child_slot } => {
            let fired = child_slot.is_some() && birth_fires(config, parent);
            if fired {
                // True flavor: w0 moves from parent to child, net zero.
                // Ghost: the child's w0 is created from nothing.
                let created = if ghost { params.w0 } else { 0 };
                created + upkeep_charge(Some(parent))
            } else {
                upkeep_charge(None)
            }
        }
    }
}

/// When to stop a [`EngineState::run`] call.
pub enum StopRule<'a> {
    /// Stop after exactly this many events (no-ops included).
    MaxEvents(u64),
    /// Stop at the first event boundary where the clock has reached this
    /// time. The event whose holding time crosses the boundary is applied;
    /// the run stops before the one after it.
    MaxTime(f64),
    /// Stop as soon as the configuration satisfies the predicate, checked
    /// before every event (so a run may apply zero events).
    Predicate(&'a dyn Fn(&Configuration) -> bool),
}

/// A configuration coupled to the unified clock and a random stream.
#[derive(Debug, Clone)]
pub struct EngineState {
    config: Configuration,
    rng: Rng,
    clock: f64,
    event_count: u64,
    weights: CategoryWeights,
    pair_count: u64,
}

impl EngineState {
    /// Builds an engine from a configuration and a seed.
    pub fn new(config: Configuration, seed: u64) -> Result<Self, EngineError> {
        Self::with_rng(config, Rng::new(seed))
    }

    /// Builds an engine that continues an existing random stream. Used where
    /// initial placement and dynamics must share one documented stream.
    pub fn with_rng(config: Configuration, rng: Rng) -> Result<Self, EngineError> {
        let params = config.params();
        let pairs = pair_count_u128(params.k);
        if pairs > u128::from(u64::MAX) {
            return Err(EngineError::CapacityOverflow);
        }
        let weights = category_weights(params.k, params.d, params.v, params.b);
        let lambda = weights.lambda();
        if !lambda.is_finite() {
            return Err(EngineError::CapacityOverflow);
        }
        if lambda <= 0.0 {
            return Err(EngineError::ZeroRate);
        }
        Ok(EngineState {
            config,
            rng,
            clock: 0.0,
            event_count: 0,
            weights,
            pair_count: pairs as u64,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn into_config(self) -> Configuration {
        self.config
    }

    /// Absolute simulated time after the last applied event.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Number of events applied since construction (no-ops included).
    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn weights(&self) -> CategoryWeights {
        self.weights
    }

    /// Draws the next event without applying it. Consumes random draws in
    /// the documented order; calling this twice yields two consecutive
    /// events, so [`EngineState::step`] is the normal entry point.
    pub fn next_event(&mut self) -> Result<Event, EngineError> {
        let lambda = self.weights.lambda();
        if lambda <= 0.0 {
            return Err(EngineError::ZeroRate);
        }
        let dt = self.rng.exp(lambda);
        let time = self.clock + dt;
        let seq = self.event_count + 1;
        let pick = self.rng.next_f64() * lambda;
        let kind = if pick < self.weights.move_weight {
            let slot = self.rng.uniform_u64(self.config.k());
            let direction = Direction::ALL[self.rng.uniform_usize(4)];
            EventKind::Move { slot, direction }
        } else if pick < self.weights.move_weight + self.weights.game_weight {
            let pair = self.rng.uniform_u64(self.pair_count);
            let (i, j) = unrank_pair(pair);
            let coin = if game_fires(&self.config, i, j)
                && self.config.strategy(i) == Strategy::Defector
                && self.config.strategy(j) == Strategy::Defector
            {
                Some(if self.rng.bernoulli(0.5) { Coin::Heads } else { Coin::Tails })
            } else {
                None
            };
            EventKind::Game { pair, coin }
        } else {
            let parent = self.rng.uniform_u64(self.config.k());
            let child_slot = if birth_fires(&self.config, parent) {
                Some(self.pick_unborn_slot())
            } else {
                None
            };
            EventKind::Birth { parent, child_slot }
        };
        Ok(Event { kind, time, seq })
    }

    /// Picks a slot uniformly among all Unborn slots. Materialized Unborn
    /// slots are enumerated in index order, followed by the virtual tail; a
    /// virtual pick lands on the next free index (virtual slots are
    /// exchangeable, so this relabeling is unobservable).
    fn pick_unborn_slot(&mut self) -> u64 {
        let unborn = self.config.unborn_count();
        debug_assert!(unborn > 0);
        let pick = self.rng.uniform_u64(unborn);
        let mut seen = 0;
        for (idx, p) in self.config.materialized().iter().enumerate() {
            if p.strategy == Strategy::Unborn {
                if seen == pick {
                    return idx as u64;
                }
                seen += 1;
            }
        }
        self.config.materialized_len()
    }

    /// Draws and applies one event, advancing clock and event count.
    pub fn step(&mut self) -> Result<Event, EngineError> {
        let event = self.next_event()?;
        #[cfg(debug_assertions)]
        let (pre_total, expected) = (
            self.config.total_wealth(),
            expected_wealth_delta(&self.config, &event.kind),
        );
        match event.kind {
            EventKind::Move { slot, direction } => apply_move(&mut self.config, slot, direction),
            EventKind::Game { pair, coin } => apply_game(&mut self.config, pair, coin),
            EventKind::Birth { parent, child_slot } => {
                apply_birth(&mut self.config, parent, child_slot)
            }
        }
        #[cfg(debug_assertions)]
        debug_assert_eq!(
            self.config.total_wealth(),
            pre_total + expected,
            "event {:?} broke the wealth balance",
            event.kind
        );
        self.clock = event.time;
        self.event_count = event.seq;
        Ok(event)
    }

    /// Runs until the stop rule is satisfied, returning the number of events
    /// applied by this call.
    pub fn run(&mut self, stop: StopRule) -> Result<u64, EngineError> {
        self.run_with(stop, |_, _| ())
    }

    /// [`EngineState::run`] with an observer invoked after every applied
    /// event. The observer sees the post-event state.
    pub fn run_with(
        &mut self,
        stop: StopRule,
        mut observer: impl FnMut(&EngineState, &Event),
    ) -> Result<u64, EngineError> {
        let mut done = 0u64;
        loop {
            let stop_now = match stop {
                StopRule::MaxEvents(n) => done >= n,
                StopRule::MaxTime(t) => self.clock >= t,
                StopRule::Predicate(p) => p(&self.config),
            };
            if stop_now {
                return Ok(done);
            }
            let event = self.step()?;
            done += 1;
            observer(self, &event);
        }
    }
}
