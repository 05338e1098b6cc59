//! Browser bindings: three small interactive views over the simulation
//! library, compiled to WebAssembly for the static demo page in `www/`.
//!
//! [`TorusSim`] steps a spatial board and exposes flat position, strategy,
//! and wealth buffers for canvas rendering. [`WealthLawSolver`] integrates
//! the master equations and exposes the dense wealth laws. [`DriftExplorer`]
//! serves the linearized walk: analytic band, sampled paths, and a survival
//! estimate.
//!
//! Everything here is single threaded: the engine is sequential already and
//! the Monte Carlo loop below runs its paths inline, so the module never
//! touches a thread pool that browsers do not provide. Fallible calls
//! return `Result<_, String>`; the boundary turns the message into a JS
//! exception.

use demopd::engine::StopRule;
use demopd::meanfield::{
    analytic_moments, chebyshev_interval, integrate_master, linearized_path,
    linearized_running_min, survival_threshold, wilson_interval, Integrator, MFParams,
    MasterState, ThresholdForm,
};
use demopd::model::{validate, Flavor, SimParams, Strategy, Wealth};
use demopd::observables::survival_counts;
use demopd::rng::mix;
use demopd::sweep::{build_initial, InitialLayout, Placement};
use demopd::{EngineState, PayoffMatrix, Rng};
use wasm_bindgen::prelude::wasm_bindgen;

/// Interactive spatial board.
#[wasm_bindgen]
#[derive(Debug)]
pub struct TorusSim {
    engine: EngineState,
}

#[wasm_bindgen]
impl TorusSim {
    /// Builds a board with `n_coop + n_def` particles of starting wealth
    /// `wealth` placed uniformly at random from `seed`. `ghost` selects the
    /// upkeep flavor; `upkeep_all` widens the upkeep to all born particles.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: u32,
        k: u32,
        d: f64,
        v: f64,
        b: f64,
        w0: i32,
        wc: i32,
        t: i32,
        r: i32,
        s: i32,
        p: i32,
        ghost: bool,
        upkeep_all: bool,
        n_coop: u32,
        n_def: u32,
        wealth: i32,
        seed: u32,
    ) -> Result<TorusSim, String> {
        let params = SimParams {
            m,
            k: u64::from(k),
            d,
            v,
            b,
            w0: Wealth::from(w0),
            wc: Wealth::from(wc),
            flavor: if ghost { Flavor::Ghost } else { Flavor::True },
            ghost_upkeep_all: upkeep_all,
        };
        let payoffs = PayoffMatrix {
            t: Wealth::from(t),
            r: Wealth::from(r),
            s: Wealth::from(s),
            p: Wealth::from(p),
        };
        validate(&params, &payoffs, false).map_err(|e| e.to_string())?;
        let layout = InitialLayout {
            n_cooperators: u64::from(n_coop),
            n_defectors: u64::from(n_def),
            wealth: Wealth::from(wealth),
            placement: Placement::UniformRandom,
        };
        let mut rng = Rng::new(u64::from(seed));
        let initial =
            build_initial(&params, payoffs, &layout, &mut rng).map_err(|e| e.to_string())?;
        let engine = EngineState::with_rng(initial, rng).map_err(|e| e.to_string())?;
        Ok(TorusSim { engine })
    }

    /// Applies up to `n` events and returns the number applied.
    pub fn step_events(&mut self, n: u32) -> Result<u32, String> {
        self.engine
            .run(StopRule::MaxEvents(u64::from(n)))
            .map(|applied| applied as u32)
            .map_err(|e| e.to_string())
    }

    pub fn side(&self) -> u32 {
        self.engine.config().params().m
    }

    pub fn clock(&self) -> f64 {
        self.engine.clock()
    }

    /// Event ordinal as a float: exact up to 2^53 events.
    pub fn event_count(&self) -> f64 {
        self.engine.event_count() as f64
    }

    pub fn live_cooperators(&self) -> u32 {
        survival_counts(self.engine.config()).cooperators as u32
    }

    pub fn live_defectors(&self) -> u32 {
        survival_counts(self.engine.config()).defectors as u32
    }

    pub fn total_wealth(&self) -> f64 {
        self.engine.config().total_wealth() as f64
    }

    /// X coordinates of materialized (born, possibly dead) slots, in slot
    /// order; parallel to `ys`, `strategies`, and `wealths`.
    pub fn xs(&self) -> Vec<u32> {
        self.engine.config().materialized().iter().map(|p| p.position.0).collect()
    }

    pub fn ys(&self) -> Vec<u32> {
        self.engine.config().materialized().iter().map(|p| p.position.1).collect()
    }

    /// Strategy codes: 0 cooperator, 1 defector, 2 unborn.
    pub fn strategies(&self) -> Vec<u8> {
        self.engine
            .config()
            .materialized()
            .iter()
            .map(|p| match p.strategy {
                Strategy::Cooperator => 0,
                Strategy::Defector => 1,
                Strategy::Unborn => 2,
            })
            .collect()
    }

    pub fn wealths(&self) -> Vec<f64> {
        self.engine.config().materialized().iter().map(|p| p.wealth as f64).collect()
    }
}

fn walk_params(
    beta0: f64,
    rho0: f64,
    v: f64,
    r: i32,
    s: i32,
    t: i32,
    p: i32,
    half_rate: bool,
    q0: i32,
) -> Result<MFParams, String> {
    let params = MFParams {
        beta0,
        rho0,
        v,
        payoffs: PayoffMatrix {
            t: Wealth::from(t),
            r: Wealth::from(r),
            s: Wealth::from(s),
            p: Wealth::from(p),
        },
        m0: vec![(Wealth::from(q0), 1.0)],
        half_rate,
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

/// Master-equation integrator with dense wealth-law views.
#[wasm_bindgen]
pub struct WealthLawSolver {
    params: MFParams,
    state: MasterState,
    dt: f64,
}

#[wasm_bindgen]
impl WealthLawSolver {
    /// Builds both population laws as a point mass at `q0`, with lattice
    /// windows sized for integration up to `t_max`.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta0: f64,
        rho0: f64,
        v: f64,
        t: i32,
        r: i32,
        s: i32,
        p: i32,
        q0: i32,
        half_rate: bool,
        t_max: f64,
        dt: f64,
    ) -> Result<WealthLawSolver, String> {
        let params = walk_params(beta0, rho0, v, r, s, t, p, half_rate, q0)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err("dt must be positive".into());
        }
        let state = MasterState::new(&params, t_max).map_err(|e| e.to_string())?;
        Ok(WealthLawSolver { params, state, dt })
    }

    /// Integrates forward by `t_delta` time units.
    pub fn advance(&mut self, t_delta: f64) -> Result<(), String> {
        if !(t_delta >= 0.0 && t_delta.is_finite()) {
            return Err("t_delta must be nonnegative".into());
        }
        let target = self.state.t + t_delta;
        let (next, _) =
            integrate_master(self.state.clone(), &self.params, target, self.dt, Integrator::Rk4)
                .map_err(|e| e.to_string())?;
        self.state = next;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// Positive-wealth mass of the cooperator law.
    pub fn beta(&self) -> f64 {
        self.state.beta()
    }

    /// Positive-wealth mass of the defector law.
    pub fn rho(&self) -> f64 {
        self.state.rho()
    }

    /// Lowest wealth of the cooperator window; `coop_masses()[i]` is the
    /// mass at wealth `coop_support_min() + i`.
    pub fn coop_support_min(&self) -> f64 {
        self.state.coop.w_min() as f64
    }

    pub fn coop_masses(&self) -> Vec<f64> {
        self.window_masses(true)
    }

    pub fn def_support_min(&self) -> f64 {
        self.state.def.w_min() as f64
    }

    pub fn def_masses(&self) -> Vec<f64> {
        self.window_masses(false)
    }

    fn window_masses(&self, coop: bool) -> Vec<f64> {
        let lattice = if coop { &self.state.coop } else { &self.state.def };
        (lattice.w_min()..=lattice.w_max()).map(|w| lattice.mass(w)).collect()
    }
}

/// Linearized-walk explorer: analytic envelope plus Monte Carlo.
#[wasm_bindgen]
pub struct DriftExplorer {
    params: MFParams,
    q0: Wealth,
}

#[wasm_bindgen]
impl DriftExplorer {
    /// Frozen-environment walk of a single cooperator starting at `q0`:
    /// gains `r` against cooperators, loses `s` against defectors.
    #[wasm_bindgen(constructor)]
    pub fn new(
        beta0: f64,
        rho0: f64,
        v: f64,
        r: i32,
        s: i32,
        q0: i32,
        half_rate: bool,
    ) -> Result<DriftExplorer, String> {
        // T and P are irrelevant to the cooperator walk; any strict-order
        // values do.
        let params = walk_params(beta0, rho0, v, r, s, r + 1, s - 1, half_rate, q0)?;
        Ok(DriftExplorer { params, q0: Wealth::from(q0) })
    }

    pub fn drift_rate(&self) -> f64 {
        analytic_moments(&self.params, 0.0).drift_rate
    }

    pub fn variance_rate(&self) -> f64 {
        analytic_moments(&self.params, 0.0).variance_rate
    }

    /// Chebyshev envelope sampled at `n + 1` evenly spaced times, flattened
    /// as `[t, lo, hi, t, lo, hi, ...]`. Coverage is at least `1 - eta^-2`.
    pub fn band(&self, t_end: f64, eta: f64, n: u32) -> Result<Vec<f64>, String> {
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err("t_end must be nonnegative".into());
        }
        let n = n.max(1);
        let mut out = Vec::with_capacity(3 * (n as usize + 1));
        for i in 0..=n {
            let t = t_end * f64::from(i) / f64::from(n);
            let interval =
                chebyshev_interval(&self.params, t, eta).map_err(|e| e.to_string())?;
            out.extend_from_slice(&[t, interval.lo, interval.hi]);
        }
        Ok(out)
    }

    /// Survival margin `q0 - eta^2 sigma^2 / (4 m)`, or an error when the
    /// drift is nonpositive.
    pub fn survival_margin(&self, eta: f64) -> Result<f64, String> {
        survival_threshold(&self.params, self.q0 as f64, eta, ThresholdForm::PerDrift)
            .map_err(|e| e.to_string())
    }

    /// One sampled trajectory flattened as `[t, w, t, w, ...]`, one point
    /// per event, starting at `(0, q0)`.
    pub fn sample_path(&self, t_end: f64, seed: u32) -> Vec<f64> {
        let mut rng = Rng::new(u64::from(seed));
        linearized_path(&self.params, self.q0, t_end, &mut rng)
            .into_iter()
            .flat_map(|(t, w)| [t, w as f64])
            .collect()
    }

    /// Monte Carlo survival probability on `[0, horizon]`, returned as
    /// `[estimate, ci_low, ci_high, survivors]` with a Wilson 95% interval.
    /// Paths are seeded per index, matching the library's parallel
    /// estimator, but run inline.
    pub fn survival_estimate(&self, horizon: f64, n_paths: u32, seed: u32) -> Vec<f64> {
        let n = u64::from(n_paths.max(1));
        let mut survivors = 0u64;
        for path in 0..n {
            let mut rng = Rng::new(mix(&[u64::from(seed), path]));
            let (min, _) = linearized_running_min(&self.params, self.q0, horizon, &mut rng);
            if min > 0 {
                survivors += 1;
            }
        }
        let (ci_low, ci_high) = wilson_interval(survivors, n);
        vec![survivors as f64 / n as f64, ci_low, ci_high, survivors as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use demopd::meanfield::survival_probability_estimate;

    fn reference_sim(seed: u32) -> TorusSim {
        TorusSim::new(7, 24, 5.0, 5.0, 5.0, 3, 10, 4, 3, 2, 1, false, false, 10, 10, 10, seed)
            .unwrap()
    }

    #[test]
    fn torus_sim_steps_and_exposes_parallel_buffers() {
        let mut sim = reference_sim(5);
        assert_eq!(sim.side(), 7);
        assert_eq!(sim.live_cooperators(), 10);
        assert_eq!(sim.live_defectors(), 10);
        assert_eq!(sim.step_events(500).unwrap(), 500);
        assert!(sim.clock() > 0.0);
        assert_eq!(sim.event_count(), 500.0);

        let n = sim.xs().len();
        assert_eq!(sim.ys().len(), n);
        assert_eq!(sim.strategies().len(), n);
        assert_eq!(sim.wealths().len(), n);
        assert!(n >= 20, "births only add slots");
        assert!(sim.xs().iter().all(|&x| x < 7));
        assert!(sim.strategies().iter().all(|&s| s <= 1), "materialized slots are born");
    }

    #[test]
    fn torus_sim_is_deterministic_in_the_seed() {
        let mut a = reference_sim(11);
        let mut b = reference_sim(11);
        a.step_events(300).unwrap();
        b.step_events(300).unwrap();
        assert_eq!(a.wealths(), b.wealths());
        assert_eq!(a.xs(), b.xs());
        assert_eq!(a.clock(), b.clock());
    }

    #[test]
    fn torus_sim_rejects_bad_parameters() {
        let err =
            TorusSim::new(7, 24, 5.0, 5.0, 5.0, 10, 3, 4, 3, 2, 1, false, false, 1, 1, 10, 0)
                .unwrap_err();
        assert!(err.contains("w0 < wc"), "unexpected message: {err}");
    }

    #[test]
    fn wealth_law_solver_conserves_mass_and_splits_populations() {
        let mut solver =
            WealthLawSolver::new(0.5, 0.5, 1.0, 4, 3, 2, 1, 10, false, 5.0, 0.01).unwrap();
        solver.advance(5.0).unwrap();
        assert!((solver.time() - 5.0).abs() < 1e-12);
        let coop_total: f64 = solver.coop_masses().iter().sum();
        let def_total: f64 = solver.def_masses().iter().sum();
        assert!((coop_total - 1.0).abs() < 1e-8, "cooperator law leaked: {coop_total}");
        assert!((def_total - 1.0).abs() < 1e-8, "defector law leaked: {def_total}");
        assert!(solver.beta() > 0.9 && solver.beta() < 1.0);
        assert!(solver.rho() > solver.beta(), "defectors outlive cooperators here");
        // The mass buffers line up with the advertised support.
        assert!(solver.coop_support_min() <= 0.0);
        let idx = (10.0 - solver.coop_support_min()) as usize;
        assert!(solver.coop_masses()[idx] > 0.0, "mass near the start point");
    }

    #[test]
    fn drift_explorer_matches_analytics_and_library_estimator() {
        let explorer = DriftExplorer::new(0.6, 0.4, 1.0, 3, 2, 10, false).unwrap();
        assert!((explorer.drift_rate() - 1.0).abs() < 1e-12);
        assert!((explorer.variance_rate() - 7.0).abs() < 1e-12);

        let band = explorer.band(10.0, 2.0, 5).unwrap();
        assert_eq!(band.len(), 18);
        assert_eq!(band[0], 0.0);
        // At t = 0 the band collapses onto q0.
        assert_eq!((band[1], band[2]), (10.0, 10.0));
        let (t_last, lo, hi) = (band[15], band[16], band[17]);
        assert_eq!(t_last, 10.0);
        assert!((lo - (20.0 - 2.0 * 70.0_f64.sqrt())).abs() < 1e-9);
        assert!((hi - (20.0 + 2.0 * 70.0_f64.sqrt())).abs() < 1e-9);

        // The inline Monte Carlo agrees with the library's parallel
        // estimator path for path: same seeds, same draws.
        let est = explorer.survival_estimate(25.0, 400, 99);
        let reference = survival_probability_estimate(
            &walk_params(0.6, 0.4, 1.0, 3, 2, 4, 1, false, 10).unwrap(),
            10,
            25.0,
            400,
            99,
        );
        assert_eq!(est[3] as u64, reference.survivors);
        assert_eq!(est[0], reference.estimate);
        assert_eq!((est[1], est[2]), (reference.ci_low, reference.ci_high));
    }

    #[test]
    fn drift_explorer_paths_start_at_q0_and_respect_time() {
        let explorer = DriftExplorer::new(0.6, 0.4, 2.0, 3, 2, 8, false).unwrap();
        let path = explorer.sample_path(4.0, 7);
        assert!(path.len() >= 2 && path.len() % 2 == 0);
        assert_eq!((path[0], path[1]), (0.0, 8.0));
        let times: Vec<f64> = path.iter().step_by(2).copied().collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]), "event times increase");
        assert!(times.last().unwrap() <= &4.0);
        // Nonpositive drift is reported, not computed.
        let sinking = DriftExplorer::new(0.4, 0.6, 1.0, 2, 3, 8, false).unwrap();
        assert!(sinking.survival_margin(2.0).is_err());
    }
}
