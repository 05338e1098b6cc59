//! Core state types and game rules.
//!
//! A population is a fixed array of `K` slots. Each slot is either Unborn or
//! holds a particle with a torus position, an integer wealth, and a fixed
//! strategy (cooperate or defect). Wealth is quantized: every payoff,
//! threshold, and transfer is an `i64` number of wealth units, so totals are
//! conserved exactly with no floating-point drift.
//!
//! The two-player game is asymmetric only through the defect/defect coin:
//!
//! * both cooperate: each gains `R`;
//! * cooperator meets defector: the cooperator loses `S`, the defector
//!   gains `T`;
//! * both defect: a fair coin picks one player to lose `2P` while the other
//!   is untouched, so the expected outcome is a loss of `P` each but no
//!   single realization ever punishes both.
//!
//! Particles whose wealth reaches zero or below are dead: they stop playing
//! and reproducing but stay on the board (their slot is not freed). Unborn
//! slots are inert until a birth writes a child into them.
//!
//! [`Configuration`] stores only materialized slots. A tail of
//! `K - materialized` slots is implicitly Unborn, which is what makes
//! populations of 10^7 slots with twenty live particles cheap: the tail is
//! represented by a single count and sampled arithmetically.

use thiserror::Error;

/// Wealth in integer quanta.
pub type Wealth = i64;

/// Errors from state construction, parameter validation, and game rules.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    /// A parameter inequality was violated; the payload names it, e.g. "T > R".
    #[error("parameter constraint violated: {0}")]
    ConstraintViolation(&'static str),
    /// A game was resolved against an Unborn slot.
    #[error("game involves an unborn slot")]
    UnbornPlayer,
}

/// Fixed per-particle strategy. `Unborn` marks an empty slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Cooperator,
    Defector,
    Unborn,
}

impl Strategy {
    /// Numeric code used in serialized outputs: cooperate 0, defect 1,
    /// unborn -1.
    pub fn code(self) -> i8 {
        match self {
            Strategy::Cooperator => 0,
            Strategy::Defector => 1,
            Strategy::Unborn => -1,
        }
    }

    /// True for Cooperator and Defector, false for Unborn.
    pub fn is_born(self) -> bool {
        self != Strategy::Unborn
    }
}

/// Outcome of the fair coin in a defect/defect game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coin {
    /// The first player of the pair pays the 2P punishment.
    Heads,
    /// The second player pays.
    Tails,
}

impl Coin {
    /// The opposite face; swapping the players of a defect/defect game and
    /// flipping the coin reproduces the same outcome.
    pub fn flipped(self) -> Coin {
        match self {
            Coin::Heads => Coin::Tails,
            Coin::Tails => Coin::Heads,
        }
    }
}

/// Game payoffs in wealth units.
///
/// `s` is the magnitude lost by a cooperator meeting a defector (stored
/// positive), and `p` is half the defect/defect punishment: the coin loser
/// pays `2p`. The orthodox ordering `T > R > 0` and `S > P > 0` is enforced
/// by [`validate`] in strict mode; phase-diagram sweeps relax it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayoffMatrix {
    /// Temptation: defector's gain against a cooperator.
    pub t: Wealth,
    /// Reward: each cooperator's gain in a cooperate/cooperate game.
    pub r: Wealth,
    /// Sucker loss: cooperator's loss against a defector.
    pub s: Wealth,
    /// Half punishment: the defect/defect coin loser pays `2p`.
    pub p: Wealth,
}

/// Dynamical flavor of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// Ordinary dynamics: games fire only between live (positive-wealth)
    /// co-located particles; any particle above the birth threshold may
    /// reproduce, paying `w0` to its child.
    True,
    /// Comparison dynamics that bound cooperator survival from above: the
    /// positivity gate on games is dropped (dead particles keep playing),
    /// cooperators pay a `w0` upkeep at every game and birth event,
    /// cooperators never reproduce, and defector births are free (the
    /// parent's wealth is not debited).
    Ghost,
}

/// Static parameters of one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Torus side; sites are (x, y) with both coordinates in [0, m).
    pub m: u32,
    /// Number of population slots.
    pub k: u64,
    /// Per-slot move rate.
    pub d: f64,
    /// Per-pair game rate.
    pub v: f64,
    /// Per-slot birth rate.
    pub b: f64,
    /// Child starting wealth; also the ghost upkeep quantum.
    pub w0: Wealth,
    /// Birth threshold: a parent must hold wealth strictly above this.
    pub wc: Wealth,
    pub flavor: Flavor,
    /// Ghost only: charge the per-event upkeep to every born particle
    /// instead of cooperators alone. The birth-giver stays exempt.
    pub ghost_upkeep_all: bool,
}

/// One populated slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Particle {
    pub position: (u32, u32),
    pub wealth: Wealth,
    pub strategy: Strategy,
}

impl Particle {
    /// The canonical empty slot. Position is a placeholder: unborn slots
    /// never move or play, and a birth overwrites the position.
    pub fn unborn() -> Particle {
        Particle { position: (0, 0), wealth: 0, strategy: Strategy::Unborn }
    }

    /// Born (cooperator or defector) with strictly positive wealth.
    pub fn is_alive(&self) -> bool {
        self.strategy.is_born() && self.wealth > 0
    }
}

/// Wealth deltas applied to the two players of a game, in pair order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameOutcome {
    pub delta_i: Wealth,
    pub delta_j: Wealth,
}

/// Checks parameters and payoffs.
///
/// Always enforced: `m >= 1`, `K >= 1`, rates finite and nonnegative, and
/// `0 < w0 < wc`. Strict mode adds the orthodox payoff ordering `T > R`,
/// `R > 0`, `S > P`, `P > 0`. Phase-diagram sweeps scan payoffs outside the
/// orthodox region (including zero and negative entries), so they validate
/// with `strict = false`.
pub fn validate(params: &SimParams, payoffs: &PayoffMatrix, strict: bool) -> Result<(), ModelError> {
    use ModelError::ConstraintViolation as Violation;
    if params.m < 1 {
        return Err(Violation("m >= 1"));
    }
    if params.k < 1 {
        return Err(Violation("K >= 1"));
    }
    // A NaN rate fails the >= comparison, so it is rejected here too.
    if !(params.d.is_finite() && params.d >= 0.0) {
        return Err(Violation("d >= 0 and finite"));
    }
    if !(params.v.is_finite() && params.v >= 0.0) {
        return Err(Violation("v >= 0 and finite"));
    }
    if !(params.b.is_finite() && params.b >= 0.0) {
        return Err(Violation("b >= 0 and finite"));
    }
    if params.w0 <= 0 {
        return Err(Violation("w0 > 0"));
    }
    if params.w0 >= params.wc {
        return Err(Violation("w0 < wc"));
    }
    if strict {
        if payoffs.t <= payoffs.r {
            return Err(Violation("T > R"));
        }
        if payoffs.r <= 0 {
            return Err(Violation("R > 0"));
        }
        if payoffs.s <= payoffs.p {
            return Err(Violation("S > P"));
        }
        if payoffs.p <= 0 {
            return Err(Violation("P > 0"));
        }
    }
    Ok(())
}

/// Resolves one game between strategies `si` and `sj`.
///
/// The coin is consulted only when both players defect; `Heads` makes the
/// first player pay `2P`, `Tails` the second. Unborn strategies are a caller
/// bug surfaced as [`ModelError::UnbornPlayer`].
pub fn resolve_game(
    si: Strategy,
    sj: Strategy,
    coin: Coin,
    payoffs: &PayoffMatrix,
) -> Result<GameOutcome, ModelError> {
    use Strategy::*;
    let (delta_i, delta_j) = match (si, sj) {
        (Unborn, _) | (_, Unborn) => return Err(ModelError::UnbornPlayer),
        (Cooperator, Cooperator) => (payoffs.r, payoffs.r),
        (Cooperator, Defector) => (-payoffs.s, payoffs.t),
        (Defector, Cooperator) => (payoffs.t, -payoffs.s),
        (Defector, Defector) => match coin {
            Coin::Heads => (-2 * payoffs.p, 0),
            Coin::Tails => (0, -2 * payoffs.p),
        },
    };
    Ok(GameOutcome { delta_i, delta_j })
}

/// Full population state: parameters, payoffs, and the slot array.
///
/// Slots `0..materialized_len()` are stored explicitly; slots from there up
/// to `K` are virtual and Unborn. A birth into the virtual range
/// materializes exactly one slot by appending, so materialized length never
/// shrinks and never exceeds `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    params: SimParams,
    payoffs: PayoffMatrix,
    particles: Vec<Particle>,
}

impl Configuration {
    /// Builds a configuration from explicitly materialized slots.
    ///
    /// Positions must already lie on the torus and materialized Unborn slots
    /// must carry zero wealth; there must be at most `K` slots.
    pub fn new(
        params: SimParams,
        payoffs: PayoffMatrix,
        particles: Vec<Particle>,
    ) -> Result<Self, ModelError> {
        use ModelError::ConstraintViolation as Violation;
        if particles.len() as u64 > params.k {
            return Err(Violation("#particles <= K"));
        }
        for p in &particles {
            if p.position.0 >= params.m {
                return Err(Violation("x < m"));
            }
            if p.position.1 >= params.m {
                return Err(Violation("y < m"));
            }
            if p.strategy == Strategy::Unborn && p.wealth != 0 {
                return Err(Violation("unborn wealth == 0"));
            }
        }
        Ok(Configuration { params, payoffs, particles })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn payoffs(&self) -> &PayoffMatrix {
        &self.payoffs
    }

    /// Total slot count `K`, including the virtual Unborn tail.
    pub fn k(&self) -> u64 {
        self.params.k
    }

    pub fn m(&self) -> u32 {
        self.params.m
    }

    /// Explicitly stored slots. Indices beyond this are virtual Unborn.
    pub fn materialized(&self) -> &[Particle] {
        &self.particles
    }

    pub fn materialized_len(&self) -> u64 {
        self.particles.len() as u64
    }

    /// Slot contents by index, whether materialized or virtual.
    pub fn slot(&self, index: u64) -> Particle {
        debug_assert!(index < self.params.k);
        match self.particles.get(index as usize) {
            Some(p) => *p,
            None => Particle::unborn(),
        }
    }

    pub fn strategy(&self, index: u64) -> Strategy {
        self.slot(index).strategy
    }

    /// Number of Unborn slots, materialized and virtual.
    pub fn unborn_count(&self) -> u64 {
        let materialized_unborn = self
            .particles
            .iter()
            .filter(|p| p.strategy == Strategy::Unborn)
            .count() as u64;
        (self.params.k - self.materialized_len()) + materialized_unborn
    }

    /// Signed total wealth over all slots (virtual Unborn slots hold zero).
    pub fn total_wealth(&self) -> Wealth {
        self.particles.iter().map(|p| p.wealth).sum()
    }

    /// Mutable slot access for the event appliers. `index` must already be
    /// materialized.
    pub(crate) fn particle_mut(&mut self, index: u64) -> &mut Particle {
        &mut self.particles[index as usize]
    }

    /// Materializes the next virtual slot with the given contents and
    /// returns its index. Panics if all `K` slots are already materialized.
    pub(crate) fn push_particle(&mut self, particle: Particle) -> u64 {
        assert!(self.materialized_len() < self.params.k, "population is full");
        self.particles.push(particle);
        self.materialized_len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    // `proptest::prelude::*` would shadow our `Strategy` enum with the
    // generator trait of the same name, so import only the macros.
    use proptest::{prop_assert, prop_assert_eq, prop_assume, proptest};

    fn base_params() -> SimParams {
        SimParams {
            m: 7,
            k: 24,
            d: 5.0,
            v: 5.0,
            b: 5.0,
            w0: 3,
            wc: 10,
            flavor: Flavor::True,
            ghost_upkeep_all: false,
        }
    }

    const ORTHODOX: PayoffMatrix = PayoffMatrix { t: 4, r: 3, s: 2, p: 1 };

    #[test]
    fn validate_accepts_orthodox_payoffs() {
        assert!(validate(&base_params(), &ORTHODOX, true).is_ok());
    }

    #[test]
    fn validate_names_the_violated_inequality() {
        let bad = PayoffMatrix { t: 3, r: 3, s: 2, p: 1 };
        assert_eq!(
            validate(&base_params(), &bad, true),
            Err(ModelError::ConstraintViolation("T > R"))
        );
        let bad = PayoffMatrix { t: 4, r: 0, s: 2, p: 1 };
        assert_eq!(
            validate(&base_params(), &bad, true),
            Err(ModelError::ConstraintViolation("R > 0"))
        );
        let bad = PayoffMatrix { t: 4, r: 3, s: 1, p: 1 };
        assert_eq!(
            validate(&base_params(), &bad, true),
            Err(ModelError::ConstraintViolation("S > P"))
        );
        let bad = PayoffMatrix { t: 4, r: 3, s: 2, p: 0 };
        assert_eq!(
            validate(&base_params(), &bad, true),
            Err(ModelError::ConstraintViolation("P > 0"))
        );
    }

    #[test]
    fn non_strict_admits_degenerate_grid_corners() {
        // Grid corner R = 0, S = 0 with derived T = 1, P = -1.
        let corner = PayoffMatrix { t: 1, r: 0, s: 0, p: -1 };
        assert!(validate(&base_params(), &corner, false).is_ok());
        assert!(validate(&base_params(), &corner, true).is_err());
    }

    #[test]
    fn wealth_thresholds_are_always_enforced() {
        let mut p = base_params();
        p.w0 = 0;
        assert_eq!(
            validate(&p, &ORTHODOX, false),
            Err(ModelError::ConstraintViolation("w0 > 0"))
        );
        p.w0 = 10;
        p.wc = 10;
        assert_eq!(
            validate(&p, &ORTHODOX, false),
            Err(ModelError::ConstraintViolation("w0 < wc"))
        );
    }

    #[test]
    fn rates_must_be_finite_and_nonnegative() {
        for field in ["d", "v", "b"] {
            for bad in [-1.0, f64::NAN, f64::INFINITY] {
                let mut p = base_params();
                match field {
                    "d" => p.d = bad,
                    "v" => p.v = bad,
                    _ => p.b = bad,
                }
                assert!(validate(&p, &ORTHODOX, false).is_err(), "{field} = {bad}");
            }
        }
    }

    #[test]
    fn resolve_game_matches_the_payoff_table() {
        use Strategy::*;
        let g = |a, b, c| resolve_game(a, b, c, &ORTHODOX).unwrap();
        assert_eq!(g(Cooperator, Cooperator, Coin::Heads), GameOutcome { delta_i: 3, delta_j: 3 });
        assert_eq!(g(Cooperator, Defector, Coin::Heads), GameOutcome { delta_i: -2, delta_j: 4 });
        assert_eq!(g(Defector, Cooperator, Coin::Tails), GameOutcome { delta_i: 4, delta_j: -2 });
        assert_eq!(g(Defector, Defector, Coin::Heads), GameOutcome { delta_i: -2, delta_j: 0 });
        assert_eq!(g(Defector, Defector, Coin::Tails), GameOutcome { delta_i: 0, delta_j: -2 });
    }

    #[test]
    fn unborn_players_are_rejected() {
        assert_eq!(
            resolve_game(Strategy::Unborn, Strategy::Cooperator, Coin::Heads, &ORTHODOX),
            Err(ModelError::UnbornPlayer)
        );
        assert_eq!(
            resolve_game(Strategy::Defector, Strategy::Unborn, Coin::Tails, &ORTHODOX),
            Err(ModelError::UnbornPlayer)
        );
    }

    #[test]
    fn configuration_rejects_bad_slots() {
        let params = base_params();
        let off_torus = Particle { position: (7, 0), wealth: 1, strategy: Strategy::Cooperator };
        assert_eq!(
            Configuration::new(params, ORTHODOX, vec![off_torus]),
            Err(ModelError::ConstraintViolation("x < m"))
        );
        let rich_unborn = Particle { position: (0, 0), wealth: 5, strategy: Strategy::Unborn };
        assert_eq!(
            Configuration::new(params, ORTHODOX, vec![rich_unborn]),
            Err(ModelError::ConstraintViolation("unborn wealth == 0"))
        );
        let mut small = params;
        small.k = 1;
        let p = Particle { position: (0, 0), wealth: 1, strategy: Strategy::Defector };
        assert_eq!(
            Configuration::new(small, ORTHODOX, vec![p, p]),
            Err(ModelError::ConstraintViolation("#particles <= K"))
        );
    }

    #[test]
    fn virtual_tail_reads_as_unborn() {
        let p = Particle { position: (1, 2), wealth: 9, strategy: Strategy::Cooperator };
        let config = Configuration::new(base_params(), ORTHODOX, vec![p]).unwrap();
        assert_eq!(config.slot(0), p);
        assert_eq!(config.slot(23).strategy, Strategy::Unborn);
        assert_eq!(config.slot(23).wealth, 0);
        assert_eq!(config.unborn_count(), 23);
        assert_eq!(config.total_wealth(), 9);
    }

    proptest! {
        /// No single game realization punishes both players, for any
        /// strategies, coin, and strictly ordered payoffs.
        #[test]
        fn no_outcome_hits_both_players(
            t in 1i64..200, r_gap in 1i64..100, s in 1i64..200, p_gap in 1i64..100,
        ) {
            let r = (t - r_gap).max(1);
            let p = (s - p_gap).max(1);
            prop_assume!(t > r && s > p);
            let payoffs = PayoffMatrix { t, r, s, p };
            use Strategy::*;
            for si in [Cooperator, Defector] {
                for sj in [Cooperator, Defector] {
                    for coin in [Coin::Heads, Coin::Tails] {
                        let out = resolve_game(si, sj, coin, &payoffs).unwrap();
                        prop_assert!(!(out.delta_i < 0 && out.delta_j < 0));
                    }
                }
            }
        }

        /// Swapping the players and flipping the coin swaps the deltas.
        #[test]
        fn transpose_symmetry(
            t in -50i64..50, r in -50i64..50, s in -50i64..50, p in -50i64..50,
        ) {
            let payoffs = PayoffMatrix { t, r, s, p };
            use Strategy::*;
            for si in [Cooperator, Defector] {
                for sj in [Cooperator, Defector] {
                    for coin in [Coin::Heads, Coin::Tails] {
                        let ab = resolve_game(si, sj, coin, &payoffs).unwrap();
                        let ba = resolve_game(sj, si, coin.flipped(), &payoffs).unwrap();
                        prop_assert_eq!(ab.delta_i, ba.delta_j);
                        prop_assert_eq!(ab.delta_j, ba.delta_i);
                    }
                }
            }
        }

        /// The two coin outcomes of a defect/defect game average to a loss
        /// of exactly P for each player.
        #[test]
        fn dd_coin_averages_to_minus_p(p in -100i64..100) {
            let payoffs = PayoffMatrix { t: 0, r: 0, s: 0, p };
            let heads =
                resolve_game(Strategy::Defector, Strategy::Defector, Coin::Heads, &payoffs).unwrap();
            let tails =
                resolve_game(Strategy::Defector, Strategy::Defector, Coin::Tails, &payoffs).unwrap();
            prop_assert_eq!(heads.delta_i + tails.delta_i, -2 * p);
            prop_assert_eq!(heads.delta_j + tails.delta_j, -2 * p);
        }
    }
}
