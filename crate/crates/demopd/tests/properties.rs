//! Trajectory-level properties checked across random parameter setups.
//!
//! Each property re-derives its expectation from the stated rules rather
//! than calling back into the engine's own bookkeeping, so a consistent
//! internal bug still trips the comparison.

use demopd::engine::{unrank_pair, EngineState, EventKind};
use demopd::model::{
    validate, Configuration, Flavor, Particle, PayoffMatrix, SimParams, Strategy, Wealth,
};
use demopd::observables::{photograph, survival_counts};
use proptest::collection::vec as prop_vec;
use proptest::strategy::{BoxedStrategy, Just, Strategy as _};
use proptest::{prop_assert, prop_assert_eq, prop_oneof, proptest};

type Setup = (SimParams, PayoffMatrix, Vec<Particle>);

/// Random torus, rates, relaxed payoffs, and particle soup. `d` stays
/// bounded away from zero so the total event rate is always positive.
fn arb_setup(flavors: &'static [Flavor]) -> BoxedStrategy<Setup> {
    (1u32..6, 1u64..12)
        .prop_flat_map(move |(m, k)| {
            let particle = (0..m, 0..m, prop_oneof![
                (Just(Strategy::Cooperator), -5i64..26),
                (Just(Strategy::Defector), -5i64..26),
                (Just(Strategy::Unborn), Just(0i64)),
            ])
                .prop_map(|(x, y, (strategy, wealth))| Particle {
                    position: (x, y),
                    wealth,
                    strategy,
                });
            (
                Just((m, k)),
                0.25f64..4.0,
                0.0f64..4.0,
                0.0f64..4.0,
                1i64..4,
                1i64..9,
                proptest::sample::select(flavors.to_vec()),
                proptest::bool::ANY,
                [-4i64..10, -4i64..10, -4i64..10, -4i64..10],
                prop_vec(particle, 0..=(k as usize)),
            )
        })
        .prop_map(|((m, k), d, v, b, w0, extra, flavor, upkeep_all, [t, r, s, p], particles)| {
            let params = SimParams {
                m,
                k,
                d,
                v,
                b,
                w0,
                wc: w0 + extra,
                flavor,
                ghost_upkeep_all: upkeep_all,
            };
            (params, PayoffMatrix { t, r, s, p }, particles)
        })
        .boxed()
}

/// Independent restatement of the wealth rules: what one event may do to
/// the configuration's total wealth, derived from the pre-event state.
fn classified_delta(pre: &Configuration, kind: &EventKind) -> Wealth {
    let params = pre.params();
    let pay = pre.payoffs();
    let ghost = params.flavor == Flavor::Ghost;
    let base = match *kind {
        EventKind::Move { .. } => 0,
        EventKind::Game { pair, .. } => {
            let (i, j) = unrank_pair(pair);
            let a = pre.slot(i);
            let b = pre.slot(j);
            let fires = a.strategy.is_born()
                && b.strategy.is_born()
                && a.position == b.position
                && (ghost || (a.wealth > 0 && b.wealth > 0));
            if fires {
                match (a.strategy, b.strategy) {
                    (Strategy::Cooperator, Strategy::Cooperator) => 2 * pay.r,
                    (Strategy::Defector, Strategy::Defector) => -2 * pay.p,
                    _ => pay.t - pay.s,
                }
            } else {
                0
            }
        }
        // A fired birth adds the child's wealth; in the true flavor the
        // parent pays for it, netting zero.
        EventKind::Birth { child_slot, .. } => {
            if child_slot.is_some() && ghost {
                params.w0
            } else {
                0
            }
        }
    };
    let upkeep = if ghost {
        let exempt = match *kind {
            EventKind::Birth { parent, child_slot: Some(_) } => Some(parent),
            EventKind::Move { .. } => return base,
            _ => None,
        };
        let charged = (0..pre.materialized_len())
            .filter(|&i| Some(i) != exempt)
            .map(|i| pre.slot(i))
            .filter(|p| {
                p.strategy.is_born()
                    && (params.ghost_upkeep_all || p.strategy == Strategy::Cooperator)
            })
            .count() as Wealth;
        -charged * params.w0
    } else {
        0
    };
    base + upkeep
}

fn born_count(config: &Configuration) -> u64 {
    config.materialized().iter().filter(|p| p.strategy.is_born()).count() as u64
}

proptest! {
    /// Every event changes total wealth by exactly its classified amount:
    /// game payoffs for fired games, upkeep and creation for the ghost
    /// flavor, nothing otherwise.
    #[test]
    fn total_wealth_moves_only_by_classified_deltas(
        (params, payoffs, particles) in arb_setup(&[Flavor::True, Flavor::Ghost]),
        seed in 0u64..(1 << 48),
    ) {
        prop_assert!(validate(&params, &payoffs, false).is_ok());
        let config = Configuration::new(params, payoffs, particles).unwrap();
        let mut engine = EngineState::new(config, seed).unwrap();
        for _ in 0..200 {
            let pre = engine.config().clone();
            let event = engine.step().unwrap();
            let observed = engine.config().total_wealth() - pre.total_wealth();
            prop_assert_eq!(observed, classified_delta(&pre, &event.kind));
        }
    }

    /// With orthodox payoffs and the true flavor, the positive-wealth
    /// defector count never reaches zero once it starts at one or more:
    /// defectors only ever lose wealth to each other, and that needs two of
    /// them alive.
    #[test]
    fn live_defectors_never_go_extinct(
        (mut params, _, mut particles) in arb_setup(&[Flavor::True]),
        r in 1i64..8,
        t_gap in 1i64..5,
        p in 1i64..6,
        s_gap in 1i64..6,
        def_wealth in 1i64..20,
        seed in 0u64..(1 << 48),
    ) {
        params.flavor = Flavor::True;
        let payoffs = PayoffMatrix { t: r + t_gap, r, s: p + s_gap, p };
        prop_assert!(validate(&params, &payoffs, true).is_ok());
        // Guarantee at least one live defector at the start.
        let forced = Particle {
            position: (0, 0),
            wealth: def_wealth,
            strategy: Strategy::Defector,
        };
        if (particles.len() as u64) < params.k {
            particles.push(forced);
        } else {
            *particles.last_mut().unwrap() = forced;
        }
        let config = Configuration::new(params, payoffs, particles).unwrap();
        let mut engine = EngineState::new(config, seed).unwrap();
        for _ in 0..1_000 {
            engine.step().unwrap();
            prop_assert!(
                survival_counts(engine.config()).defectors >= 1,
                "defectors went extinct"
            );
        }
    }

    /// In the true flavor a particle at nonpositive wealth is inert: its
    /// wealth and strategy never change again, though it keeps moving.
    #[test]
    fn true_flavor_freezes_the_dead(
        (mut params, payoffs, particles) in arb_setup(&[Flavor::True]),
        seed in 0u64..(1 << 48),
    ) {
        params.flavor = Flavor::True;
        let config = Configuration::new(params, payoffs, particles).unwrap();
        let mut engine = EngineState::new(config, seed).unwrap();
        let mut frozen: Vec<(u64, Wealth, Strategy)> = Vec::new();
        for _ in 0..400 {
            for (i, p) in engine.config().materialized().iter().enumerate() {
                if p.strategy.is_born() && p.wealth <= 0 {
                    let entry = (i as u64, p.wealth, p.strategy);
                    if !frozen.iter().any(|e| e.0 == entry.0) {
                        frozen.push(entry);
                    }
                }
            }
            engine.step().unwrap();
            for &(slot, wealth, strategy) in &frozen {
                let now = engine.config().slot(slot);
                prop_assert_eq!(now.wealth, wealth, "dead wealth changed");
                prop_assert_eq!(now.strategy, strategy, "dead strategy changed");
            }
        }
    }

    /// Slots are born exactly once: the born count increases by one on each
    /// fired birth and never otherwise, and born + unborn always equals K.
    #[test]
    fn born_and_unborn_slots_balance(
        (params, payoffs, particles) in arb_setup(&[Flavor::True, Flavor::Ghost]),
        seed in 0u64..(1 << 48),
    ) {
        let k = params.k;
        let config = Configuration::new(params, payoffs, particles).unwrap();
        let mut engine = EngineState::new(config, seed).unwrap();
        for _ in 0..300 {
            let before = born_count(engine.config());
            let event = engine.step().unwrap();
            let after = born_count(engine.config());
            let fired_birth =
                matches!(event.kind, EventKind::Birth { child_slot: Some(_), .. });
            prop_assert_eq!(after - before, u64::from(fired_birth));
            prop_assert_eq!(after + engine.config().unborn_count(), k);
        }
    }

    /// The photograph and the survivor counts are two views of one state.
    #[test]
    fn photographs_agree_with_survivor_counts(
        (params, payoffs, particles) in arb_setup(&[Flavor::True, Flavor::Ghost]),
        seed in 0u64..(1 << 48),
    ) {
        let config = Configuration::new(params, payoffs, particles).unwrap();
        let mut engine = EngineState::new(config, seed).unwrap();
        for _ in 0..150 {
            engine.step().unwrap();
        }
        let shot = photograph(engine.config());
        let counts = survival_counts(engine.config());
        prop_assert_eq!(shot.total(Strategy::Cooperator), counts.cooperators);
        prop_assert_eq!(shot.total(Strategy::Defector), counts.defectors);
        prop_assert_eq!(shot.total(Strategy::Unborn), 0);
    }
}
