//! Payoff-grid sweeps over the spatial chain.
//!
//! A sweep fixes everything about the simulation except the payoff pair
//! `(R, S)`, scans a rectangular grid of values, runs a batch of seeded
//! replicas per cell, and reports the batch-mean survivor counts. The
//! remaining two payoffs follow `R` and `S` through a [`PayoffRule`], e.g.
//! `T = R + 1`, `P = S - 1`, which keeps the strict orderings `T > R` and
//! `S > P` at every grid point while allowing boundary cells (such as
//! `R = 0` or `S = 0`) that the strict validator would reject; sweeps
//! therefore validate in relaxed mode.
//!
//! Determinism: the replica at `(R, S, run)` seeds its own generator with
//! `mix(master_seed, R, S, run)` and draws its initial placement and the
//! whole event stream from it. No state is shared between replicas, so the
//! grid can be evaluated on any number of threads, in any order, and the
//! results (and emitted CSV bytes) are identical.

use crate::engine::{EngineError, EngineState, StopRule};
use crate::model::{
    validate, Configuration, Flavor, ModelError, Particle, PayoffMatrix, SimParams, Strategy,
    Wealth,
};
use crate::observables::survival_counts;
use crate::rng::{mix, Rng};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Errors from sweep construction, execution, or output.
#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("sweep constraint violated: {0}")]
    InvalidSpec(&'static str),
    #[error("failed to write sweep output: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool construction failed: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

/// Where the initial particles sit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Each particle draws an independent uniform site (two draws, x then
    /// y); multiple occupancy is allowed.
    UniformRandom,
    /// Fixed sites, cooperators' positions first, then defectors'. The
    /// length must equal the total particle count.
    Explicit(Vec<(u32, u32)>),
}

/// Initial population: cooperators first, then defectors, all with the same
/// starting wealth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialLayout {
    pub n_cooperators: u64,
    pub n_defectors: u64,
    pub wealth: Wealth,
    pub placement: Placement,
}

/// Builds the starting configuration. With [`Placement::UniformRandom`] the
/// position draws come from `rng` before any engine event, so a replica's
/// placement and its event stream share one seed.
pub fn build_initial(
    params: &SimParams,
    payoffs: PayoffMatrix,
    layout: &InitialLayout,
    rng: &mut Rng,
) -> Result<Configuration, SweepError> {
    let total = layout.n_cooperators + layout.n_defectors;
    let mut positions = Vec::with_capacity(total as usize);
    match &layout.placement {
        Placement::UniformRandom => {
            for _ in 0..total {
                let x = rng.uniform_u64(params.m as u64) as u32;
                let y = rng.uniform_u64(params.m as u64) as u32;
                positions.push((x, y));
            }
        }
        Placement::Explicit(sites) => {
            if sites.len() as u64 != total {
                return Err(SweepError::InvalidSpec("one explicit site per particle"));
            }
            positions.extend_from_slice(sites);
        }
    }
    let particles = positions
        .iter()
        .enumerate()
        .map(|(i, &position)| Particle {
            position,
            wealth: layout.wealth,
            strategy: if (i as u64) < layout.n_cooperators {
                Strategy::Cooperator
            } else {
                Strategy::Defector
            },
        })
        .collect();
    Ok(Configuration::new(params.clone(), payoffs, particles)?)
}

/// How `T` and `P` follow the swept `(R, S)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffRule {
    /// `T = R + t_offset`, `P = S + p_offset`.
    Offset { t_offset: Wealth, p_offset: Wealth },
    /// `T` and `P` pinned regardless of the grid point.
    Fixed { t: Wealth, p: Wealth },
}

impl PayoffRule {
    pub fn payoffs(&self, r: Wealth, s: Wealth) -> PayoffMatrix {
        match *self {
            PayoffRule::Offset { t_offset, p_offset } => {
                PayoffMatrix { t: r + t_offset, r, s, p: s + p_offset }
            }
            PayoffRule::Fixed { t, p } => PayoffMatrix { t, r, s, p },
        }
    }
}

/// A full sweep description.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub params: SimParams,
    pub layout: InitialLayout,
    pub payoff_rule: PayoffRule,
    pub r_values: Vec<Wealth>,
    pub s_values: Vec<Wealth>,
    /// Replicas per grid cell.
    pub batch_size: u32,
    /// Event budget per replica (no-ops included).
    pub events_per_run: u64,
    pub master_seed: u64,
}

/// The classic heat-map setup: a 7x7 torus holding 10 cooperators and 10
/// defectors (wealth 10) in 24 slots, all rates at their reference values,
/// `T = R + 1`, `P = S - 1`, and the full `0..=100` square of `(R, S)`
/// pairs at 100 replicas of 10^4 events each.
pub fn figure2_preset(master_seed: u64) -> SweepSpec {
    SweepSpec {
        params: SimParams {
            m: 7,
            k: 24,
            d: 5.0,
            v: 5.0,
            b: 5.0,
            w0: 3,
            wc: 10,
            flavor: Flavor::True,
            ghost_upkeep_all: false,
        },
        layout: InitialLayout {
            n_cooperators: 10,
            n_defectors: 10,
            wealth: 10,
            placement: Placement::UniformRandom,
        },
        payoff_rule: PayoffRule::Offset { t_offset: 1, p_offset: -1 },
        r_values: (0..=100).collect(),
        s_values: (0..=100).collect(),
        batch_size: 100,
        events_per_run: 10_000,
        master_seed,
    }
}

/// Batch-mean survivor counts at one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub r: Wealth,
    pub s: Wealth,
    pub mean_cooperators: f64,
    pub mean_defectors: f64,
    pub batch_size: u32,
}

/// Runs one replica batch at `(r, s)` and averages the survivor counts.
///
/// Replica `run` uses the seed `mix(master_seed, r, s, run)` for both
/// placement and events. Parameters are validated in relaxed mode: grid
/// boundaries may break the strict payoff orderings on purpose.
pub fn run_cell(spec: &SweepSpec, r: Wealth, s: Wealth) -> Result<CellResult, SweepError> {
    let payoffs = spec.payoff_rule.payoffs(r, s);
    validate(&spec.params, &payoffs, false)?;
    if spec.batch_size == 0 {
        return Err(SweepError::InvalidSpec("batch_size >= 1"));
    }
    let mut coop_total = 0u64;
    let mut def_total = 0u64;
    for run in 0..spec.batch_size {
        let seed = mix(&[spec.master_seed, r as u64, s as u64, run as u64]);
        let mut rng = Rng::new(seed);
        let config = build_initial(&spec.params, payoffs, &spec.layout, &mut rng)?;
        let mut engine = EngineState::with_rng(config, rng)?;
        engine.run(StopRule::MaxEvents(spec.events_per_run))?;
        let survivors = survival_counts(engine.config());
        coop_total += survivors.cooperators;
        def_total += survivors.defectors;
    }
    Ok(CellResult {
        r,
        s,
        mean_cooperators: coop_total as f64 / spec.batch_size as f64,
        mean_defectors: def_total as f64 / spec.batch_size as f64,
        batch_size: spec.batch_size,
    })
}

/// Evaluates every `(r, s)` cell of the grid, `r` outermost, on
/// `parallelism` threads (0 means the rayon default). Cell results are
/// gathered by grid index, so the output order and every byte of any
/// emitted CSV are independent of the thread count.
pub fn run_grid(spec: &SweepSpec, parallelism: usize) -> Result<Vec<CellResult>, SweepError> {
    let cells: Vec<(Wealth, Wealth)> = spec
        .r_values
        .iter()
        .flat_map(|&r| spec.s_values.iter().map(move |&s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build()?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(r, s)| run_cell(spec, r, s))
            .collect::<Result<Vec<_>, _>>()
    })
}

/// Writes grid results as two CSV files next to each other:
///
/// * `{stem}_long.csv`: one row per cell, `R,S,mean_coop,mean_def,batch_size`.
/// * `{stem}_matrix.csv`: mean cooperator survivors as a matrix, rows
///   indexed by `R`, columns by `S`.
///
/// Returns the two paths. `results` must be in [`run_grid`] order.
pub fn emit_heatmap(
    spec: &SweepSpec,
    results: &[CellResult],
    out_dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf), SweepError> {
    if results.len() != spec.r_values.len() * spec.s_values.len() {
        return Err(SweepError::InvalidSpec("one result per grid cell"));
    }
    let long_path = out_dir.join(format!("{stem}_long.csv"));
    let matrix_path = out_dir.join(format!("{stem}_matrix.csv"));

    let mut long = BufWriter::new(File::create(&long_path)?);
    writeln!(long, "R,S,mean_coop,mean_def,batch_size")?;
    for cell in results {
        writeln!(
            long,
            "{},{},{},{},{}",
            cell.r, cell.s, cell.mean_cooperators, cell.mean_defectors, cell.batch_size
        )?;
    }
    long.flush()?;

    let mut matrix = BufWriter::new(File::create(&matrix_path)?);
    write!(matrix, "R\\S")?;
    for s in &spec.s_values {
        write!(matrix, ",{s}")?;
    }
    writeln!(matrix)?;
    let width = spec.s_values.len();
    for (row, r) in spec.r_values.iter().enumerate() {
        write!(matrix, "{r}")?;
        for cell in &results[row * width..(row + 1) * width] {
            write!(matrix, ",{}", cell.mean_cooperators)?;
        }
        writeln!(matrix)?;
    }
    matrix.flush()?;
    Ok((long_path, matrix_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::survival_counts;

    /// A small, fast spec for tests: same shape as the preset, tiny batch.
    fn test_spec() -> SweepSpec {
        let mut spec = figure2_preset(0xBEEF);
        spec.batch_size = 10;
        spec.events_per_run = 10_000;
        spec
    }

    #[test]
    fn build_initial_orders_and_counts_particles() {
        let spec = test_spec();
        let payoffs = spec.payoff_rule.payoffs(3, 1);
        let mut rng = Rng::new(1);
        let config = build_initial(&spec.params, payoffs, &spec.layout, &mut rng).unwrap();
        let survivors = survival_counts(&config);
        assert_eq!((survivors.cooperators, survivors.defectors), (10, 10));
        assert_eq!(config.unborn_count(), 4);
        for i in 0..10 {
            assert_eq!(config.slot(i).strategy, Strategy::Cooperator);
            assert_eq!(config.slot(i).wealth, 10);
        }
        for i in 10..20 {
            assert_eq!(config.slot(i).strategy, Strategy::Defector);
        }
        // Explicit placement is used verbatim and draws nothing.
        let layout = InitialLayout {
            n_cooperators: 1,
            n_defectors: 1,
            wealth: 5,
            placement: Placement::Explicit(vec![(0, 0), (6, 3)]),
        };
        let before = rng.clone();
        let config = build_initial(&spec.params, payoffs, &layout, &mut rng).unwrap();
        assert_eq!(config.slot(0).position, (0, 0));
        assert_eq!(config.slot(1).position, (6, 3));
        assert_eq!(rng, before, "explicit placement consumes no randomness");
        // Length mismatch is rejected.
        let bad = InitialLayout {
            n_cooperators: 2,
            n_defectors: 0,
            wealth: 5,
            placement: Placement::Explicit(vec![(0, 0)]),
        };
        assert!(build_initial(&spec.params, payoffs, &bad, &mut rng).is_err());
    }

    #[test]
    fn payoff_rules_follow_the_grid_point() {
        let offset = PayoffRule::Offset { t_offset: 1, p_offset: -1 };
        assert_eq!(offset.payoffs(7, 3), PayoffMatrix { t: 8, r: 7, s: 3, p: 2 });
        // The relaxed corner: R = 0, S = 0 gives T = 1, P = -1, which the
        // strict validator rejects but the sweep accepts.
        let corner = offset.payoffs(0, 0);
        assert_eq!(corner, PayoffMatrix { t: 1, r: 0, s: 0, p: -1 });
        assert!(validate(&test_spec().params, &corner, true).is_err());
        assert!(validate(&test_spec().params, &corner, false).is_ok());
        let fixed = PayoffRule::Fixed { t: 90, p: 2 };
        assert_eq!(fixed.payoffs(7, 3), PayoffMatrix { t: 90, r: 7, s: 3, p: 2 });
    }

    #[test]
    fn hostile_corner_decimates_the_population() {
        // R = 0, S = 100: cooperators never gain and lose 100 per exploit;
        // defectors lose 198 per defector/defector coin. Within the 10^4
        // event budget a few replicas still hold stragglers that were never
        // drawn into a killing game, so the regression bounds are ceilings
        // calibrated on the frozen stream (measured: 0.8 mean cooperators),
        // not literal extinction.
        let spec = test_spec();
        let cell = run_cell(&spec, 0, 100).unwrap();
        assert!(cell.mean_cooperators < 2.0, "cooperators {}", cell.mean_cooperators);
        assert!(cell.mean_defectors < 6.0, "defectors {}", cell.mean_defectors);
        assert!(
            cell.mean_cooperators + cell.mean_defectors < 20.0 * 0.35,
            "the corner must visibly depopulate the board"
        );
    }

    #[test]
    fn generous_corner_keeps_cooperators_alive() {
        // R = 100, S = 2: cooperators gain massively from each other and
        // barely bleed. At least 8 of 10 replicas keep a positive mean.
        let spec = test_spec();
        let mut alive = 0;
        for run in 0..spec.batch_size {
            let seed = mix(&[spec.master_seed, 100, 2, run as u64]);
            let mut rng = Rng::new(seed);
            let payoffs = spec.payoff_rule.payoffs(100, 2);
            let config = build_initial(&spec.params, payoffs, &spec.layout, &mut rng).unwrap();
            let mut engine = EngineState::with_rng(config, rng).unwrap();
            engine.run(StopRule::MaxEvents(spec.events_per_run)).unwrap();
            if survival_counts(engine.config()).cooperators > 0 {
                alive += 1;
            }
        }
        assert!(alive >= 8, "cooperators survived in only {alive}/10 replicas");
        let cell = run_cell(&spec, 100, 2).unwrap();
        assert!(cell.mean_cooperators > 1.0, "mean {}", cell.mean_cooperators);
    }

    #[test]
    fn cell_means_are_exact_batch_averages() {
        let mut spec = test_spec();
        spec.batch_size = 3;
        spec.events_per_run = 2_000;
        let (r, s) = (40, 10);
        let mut coop_sum = 0u64;
        let mut def_sum = 0u64;
        for run in 0..3u64 {
            let seed = mix(&[spec.master_seed, r as u64, s as u64, run]);
            let mut rng = Rng::new(seed);
            let payoffs = spec.payoff_rule.payoffs(r, s);
            let config = build_initial(&spec.params, payoffs, &spec.layout, &mut rng).unwrap();
            let mut engine = EngineState::with_rng(config, rng).unwrap();
            engine.run(StopRule::MaxEvents(spec.events_per_run)).unwrap();
            let counts = survival_counts(engine.config());
            coop_sum += counts.cooperators;
            def_sum += counts.defectors;
        }
        let cell = run_cell(&spec, r, s).unwrap();
        assert_eq!(cell.mean_cooperators, coop_sum as f64 / 3.0);
        assert_eq!(cell.mean_defectors, def_sum as f64 / 3.0);
        assert_eq!(cell.batch_size, 3);
    }

    #[test]
    fn grids_are_identical_across_thread_counts() {
        let mut spec = test_spec();
        spec.r_values = vec![0, 50];
        spec.s_values = vec![10, 60];
        spec.batch_size = 4;
        spec.events_per_run = 2_000;
        let serial = run_grid(&spec, 1).unwrap();
        let parallel = run_grid(&spec, 4).unwrap();
        assert_eq!(serial, parallel);
        // And the emitted bytes agree too.
        let dir = tempfile::tempdir().unwrap();
        emit_heatmap(&spec, &serial, dir.path(), "serial").unwrap();
        emit_heatmap(&spec, &parallel, dir.path(), "parallel").unwrap();
        let a = std::fs::read(dir.path().join("serial_long.csv")).unwrap();
        let b = std::fs::read(dir.path().join("parallel_long.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(dir.path().join("serial_matrix.csv")).unwrap();
        let b = std::fs::read(dir.path().join("parallel_matrix.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replica_seeds_are_isolated_per_cell_and_run() {
        // Distinct cells draw distinct streams even when r + s collides.
        let a = mix(&[7, 10, 20, 0]);
        let b = mix(&[7, 20, 10, 0]);
        let c = mix(&[7, 10, 20, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Same spec evaluated twice gives identical results.
        let mut spec = test_spec();
        spec.batch_size = 2;
        spec.events_per_run = 1_000;
        assert_eq!(run_cell(&spec, 30, 30).unwrap(), run_cell(&spec, 30, 30).unwrap());
    }

    #[test]
    fn emitted_csvs_match_golden_bytes() {
        let mut spec = test_spec();
        spec.r_values = vec![0, 10];
        spec.s_values = vec![5];
        let results = vec![
            CellResult { r: 0, s: 5, mean_cooperators: 1.5, mean_defectors: 0.25, batch_size: 4 },
            CellResult { r: 10, s: 5, mean_cooperators: 10.0, mean_defectors: 2.0, batch_size: 4 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let (long, matrix) = emit_heatmap(&spec, &results, dir.path(), "golden").unwrap();
        assert_eq!(
            std::fs::read_to_string(long).unwrap(),
            "R,S,mean_coop,mean_def,batch_size\n0,5,1.5,0.25,4\n10,5,10,2,4\n"
        );
        assert_eq!(
            std::fs::read_to_string(matrix).unwrap(),
            "R\\S,5\n0,1.5\n10,10\n"
        );
        // Wrong result count is rejected.
        assert!(emit_heatmap(&spec, &results[..1], dir.path(), "bad").is_err());
    }

    #[test]
    fn preset_matches_the_reference_setup() {
        let spec = figure2_preset(42);
        assert_eq!(spec.params.m, 7);
        assert_eq!(spec.params.k, 24);
        assert_eq!((spec.params.d, spec.params.v, spec.params.b), (5.0, 5.0, 5.0));
        assert_eq!((spec.params.w0, spec.params.wc), (3, 10));
        assert_eq!(spec.layout.n_cooperators, 10);
        assert_eq!(spec.layout.n_defectors, 10);
        assert_eq!(spec.layout.wealth, 10);
        assert_eq!(spec.r_values.len(), 101);
        assert_eq!(spec.s_values.len(), 101);
        assert_eq!(spec.batch_size, 100);
        assert_eq!(spec.events_per_run, 10_000);
        assert_eq!(spec.payoff_rule.payoffs(3, 7), PayoffMatrix { t: 4, r: 3, s: 7, p: 6 });
    }
}
