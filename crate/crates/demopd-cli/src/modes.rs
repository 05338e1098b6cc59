//! Mode dispatch: each run resolves an output directory, produces its CSV
//! outputs, and drops a `run_manifest.toml` beside them echoing the full
//! resolved configuration, the seed, and the crate version, so any output
//! is reproducible from its manifest alone.
//!
//! Output files are deterministic byte for byte in the config and seed; the
//! manifest additionally records wall time and is exempt from that promise.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use demopd::engine::StopRule;
use demopd::meanfield::{
    analytic_moments, chebyshev_interval, integrate_master, survival_probability_sweep,
    survival_threshold, Integrator, MFEnsemble, MFError, MasterState, Population, ThresholdForm,
};
use demopd::model::validate;
use demopd::observables::{survival_counts, ObservableKey, TrajectoryLog};
use demopd::rng::mix;
use demopd::sweep::{build_initial, emit_heatmap, run_grid};
use demopd::{EngineState, Rng};
use serde::Serialize;

use crate::config::{CliError, Mode, RunConfig};

/// Environment variable naming the fallback output directory.
pub const OUT_DIR_ENV: &str = "DEMOPD_OUT_DIR";

/// Output directory precedence: config `out`, then `DEMOPD_OUT_DIR`, then
/// the working directory.
pub fn resolve_out_dir(config: &RunConfig) -> PathBuf {
    if let Some(out) = &config.out {
        return out.clone();
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(".")
}

/// Checks the resolved configuration against the active mode's constraints
/// without running anything.
pub fn validate_only(config: &RunConfig) -> Result<(), CliError> {
    match config.mode {
        Mode::Spatial | Mode::Ghost => {
            let params = config.sim_params()?;
            let payoffs = config.payoff_matrix()?;
            validate(&params, &payoffs, true)?;
            config.initial_layout()?;
        }
        Mode::Sweep => {
            config.sweep_spec()?;
        }
        Mode::MeanfieldEnsemble | Mode::MeanfieldMaster | Mode::Linearized => {
            config.walk_params()?;
        }
    }
    println!("configuration valid: mode {}", config.mode);
    Ok(())
}

/// Runs the configured mode, writes its outputs and manifest, and prints a
/// one-paragraph summary.
pub fn dispatch(config: &RunConfig) -> Result<(), CliError> {
    let out_dir = resolve_out_dir(config);
    fs::create_dir_all(&out_dir)?;
    println!("demopd {}: seed {}", config.mode, config.seed);
    let start = Instant::now();
    match config.mode {
        Mode::Spatial | Mode::Ghost => run_board(config, &out_dir)?,
        Mode::Sweep => run_sweep(config, &out_dir)?,
        Mode::MeanfieldEnsemble => run_ensemble(config, &out_dir)?,
        Mode::MeanfieldMaster => run_master(config, &out_dir)?,
        Mode::Linearized => run_linearized(config, &out_dir)?,
    }
    let wall = start.elapsed().as_secs_f64();
    write_manifest(config, &out_dir, wall)?;
    println!("done in {wall:.2} s; outputs in {}", out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    mode: &'static str,
    seed: u64,
    wall_time_s: f64,
    config: &'a RunConfig,
}

fn write_manifest(config: &RunConfig, out_dir: &Path, wall_time_s: f64) -> Result<(), CliError> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode.as_str(),
        seed: config.seed,
        wall_time_s,
        config,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(out_dir.join("run_manifest.toml"), text)?;
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    let mut file = fs::File::create(path)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

/// Rounds to 12 significant digits for run headers, absorbing one-ulp noise
/// from decimal inputs (0.6 * 3 - 0.4 * 2 prints as 1, not 0.999...8). CSV
/// outputs are not rounded; they keep shortest-roundtrip formatting.
fn header_num(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powf(11.0 - x.abs().log10().floor());
    (x * scale).round() / scale
}

/// One spatial trajectory with a strided observable log.
fn run_board(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let params = config.sim_params()?;
    let payoffs = config.payoff_matrix()?;
    // Single runs keep the orthodox payoff ordering; grid scans go through
    // the sweep mode, which relaxes it.
    validate(&params, &payoffs, true)?;
    let layout = config.initial_layout()?;

    // Placement and event stream share one seeded stream, so the run is a
    // single deterministic replica.
    let mut rng = Rng::new(config.seed);
    let initial = build_initial(&params, payoffs, &layout, &mut rng)?;
    let mut engine = EngineState::with_rng(initial, rng)?;

    let mut log = TrajectoryLog::new(ObservableKey::ALL.to_vec(), config.stride.max(1));
    log.record_initial(engine.config());
    engine.run_with(StopRule::MaxEvents(config.events), |state, event| {
        log.observe(event.seq, state.clock(), &event.kind, state.config());
    })?;

    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    fs::write(out_dir.join("trajectory.csv"), csv)?;

    let counts = survival_counts(engine.config());
    println!(
        "{} events to clock {:.4}: {} live cooperators, {} live defectors",
        config.events,
        engine.clock(),
        counts.cooperators,
        counts.defectors,
    );
    Ok(())
}

/// Payoff-grid scan emitting the long-form and matrix heat-map CSVs.
fn run_sweep(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let spec = config.sweep_spec()?;
    let cells = spec.r_values.len() * spec.s_values.len();
    let results = run_grid(&spec, config.parallelism)?;
    let (long_path, matrix_path) = emit_heatmap(&spec, &results, out_dir, "sweep")?;
    println!(
        "{cells} grid cells x {} replicas of {} events; wrote {} and {}",
        spec.batch_size,
        spec.events_per_run,
        long_path.display(),
        matrix_path.display(),
    );
    Ok(())
}

/// Stochastic ensemble of the well-mixed walks: survivor-fraction series
/// plus terminal wealth histograms.
fn run_ensemble(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let params = config.walk_params()?;
    let t_end = config.walk.t_end;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(CliError::Validation("walk.t-end must be positive".into()));
    }
    let n = usize::try_from(config.walk.ensemble)
        .map_err(|_| CliError::Validation("walk.ensemble overflows usize".into()))?;
    let mut rng = Rng::new(config.seed);
    let mut ensemble = MFEnsemble::new(&params, n, n, &mut rng)?;

    const SAMPLES: u32 = 100;
    let mut series = String::from("t,beta,rho\n");
    for i in 0..=SAMPLES {
        let t = t_end * f64::from(i) / f64::from(SAMPLES);
        ensemble.run_until(&params, t, &mut rng);
        let beta = ensemble.positive_fraction(Population::Cooperators);
        let rho = ensemble.positive_fraction(Population::Defectors);
        series.push_str(&format!("{t},{beta},{rho}\n"));
    }
    write_file(&out_dir.join("ensemble_fractions.csv"), &series)?;

    let scale = config.payoffs.wealth_scale;
    let mut hist = String::from("population,wealth,mass\n");
    for (label, which) in
        [("coop", Population::Cooperators), ("def", Population::Defectors)]
    {
        for (w, mass) in ensemble.histogram(which) {
            hist.push_str(&format!("{label},{},{mass}\n", w as f64 / scale));
        }
    }
    write_file(&out_dir.join("ensemble_histogram.csv"), &hist)?;

    println!(
        "{n} + {n} walkers to t = {t_end}: beta = {:.4}, rho = {:.4} ({} events)",
        ensemble.positive_fraction(Population::Cooperators),
        ensemble.positive_fraction(Population::Defectors),
        ensemble.event_count(),
    );
    Ok(())
}

/// Deterministic master-equation integration of the two wealth laws.
fn run_master(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let params = config.walk_params()?;
    let t_end = config.walk.t_end;
    let state = MasterState::new(&params, t_end)?;
    let (final_state, samples) =
        integrate_master(state, &params, t_end, config.walk.dt, Integrator::Rk4)?;

    let mut series = String::from("t,beta,rho\n");
    for sample in &samples {
        series.push_str(&format!("{},{},{}\n", sample.t, sample.beta, sample.rho));
    }
    write_file(&out_dir.join("master_series.csv"), &series)?;

    let scale = config.payoffs.wealth_scale;
    let mut hist = String::from("population,wealth,mass\n");
    for (label, lattice) in [("coop", &final_state.coop), ("def", &final_state.def)] {
        for (w, mass) in lattice.histogram() {
            hist.push_str(&format!("{label},{},{mass}\n", w as f64 / scale));
        }
    }
    write_file(&out_dir.join("master_histogram.csv"), &hist)?;

    println!(
        "master integration to t = {t_end} (dt = {}): beta = {:.6}, rho = {:.6}",
        config.walk.dt,
        final_state.beta(),
        final_state.rho(),
    );
    Ok(())
}

/// Frozen-environment linearized walk: analytic moments and Chebyshev band
/// in the run header and `band.csv`, Monte Carlo survival in `survival.csv`.
fn run_linearized(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let params = config.walk_params()?;
    let scale = config.payoffs.wealth_scale;
    let walk = &config.walk;
    let q0 = crate::config::quantize(walk.q0, scale, "walk.q0")?;

    let moments = analytic_moments(&params, walk.t_end);
    println!(
        "linearized walk: drift rate {} per unit time, variance rate {} per unit time",
        header_num(moments.drift_rate / scale),
        header_num(moments.variance_rate / (scale * scale)),
    );
    match survival_threshold(&params, q0 as f64, walk.eta, ThresholdForm::PerDrift) {
        Ok(level) => println!(
            "survival margin at eta = {}: {} (positive means the walk stays alive \
             with probability at least {:.3})",
            walk.eta,
            header_num(level / scale),
            1.0 - walk.eta.powi(-2),
        ),
        Err(MFError::NonpositiveDrift) => {
            println!("nonpositive drift: the walk dies with probability one");
        }
        Err(other) => return Err(other.into()),
    }

    const SAMPLES: u32 = 100;
    let mut band = String::from("t,lo,hi,coverage\n");
    for i in 0..=SAMPLES {
        let t = walk.t_end * f64::from(i) / f64::from(SAMPLES);
        let interval = chebyshev_interval(&params, t, walk.eta)?;
        band.push_str(&format!(
            "{t},{},{},{}\n",
            interval.lo / scale,
            interval.hi / scale,
            interval.coverage,
        ));
    }
    write_file(&out_dir.join("band.csv"), &band)?;

    let estimates =
        survival_probability_sweep(&params, q0, &walk.horizons, walk.paths, mix(&[config.seed, 1]));
    let mut survival = String::from("horizon,survivors,n_paths,estimate,ci_low,ci_high\n");
    for e in &estimates {
        survival.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.horizon, e.survivors, e.n_paths, e.estimate, e.ci_low, e.ci_high,
        ));
    }
    write_file(&out_dir.join("survival.csv"), &survival)?;

    if let Some(last) = estimates.last() {
        println!(
            "survival to horizon {}: {:.4} (95% CI [{:.4}, {:.4}], {} paths)",
            last.horizon, last.estimate, last.ci_low, last.ci_high, last.n_paths,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::figure2_config;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("demopd-cli-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn out_dir_prefers_config_over_default() {
        let mut config = RunConfig::default();
        assert_eq!(resolve_out_dir(&config), PathBuf::from("."));
        config.out = Some(PathBuf::from("elsewhere"));
        assert_eq!(resolve_out_dir(&config), PathBuf::from("elsewhere"));
    }

    #[test]
    fn validate_only_accepts_the_preset_and_rejects_bad_boards() {
        validate_only(&figure2_config()).unwrap();
        let mut bad = RunConfig::default();
        bad.board.w0 = 20.0; // at or above wc = 10
        let err = validate_only(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn spatial_run_writes_trajectory_and_manifest() {
        let dir = tmp_dir("spatial");
        let mut config = RunConfig::default();
        config.events = 200;
        config.stride = 50;
        config.seed = 9;
        config.out = Some(dir.clone());
        dispatch(&config).unwrap();
        let log = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(
            lines.next().unwrap(),
            "event,clock,kind,coop_survivors,def_survivors,coop_total_wealth,\
             def_total_wealth,total_wealth,born"
        );
        // Initial row plus one per stride boundary.
        assert_eq!(lines.count(), 1 + 200 / 50);
        let manifest = fs::read_to_string(dir.join("run_manifest.toml")).unwrap();
        assert!(manifest.contains("mode = \"spatial\""));
        assert!(manifest.contains("seed = 9"));
        assert!(manifest.contains("[config.board]"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn zero_rate_board_maps_to_engine_error() {
        let dir = tmp_dir("zero-rate");
        let mut config = RunConfig::default();
        config.board.d = 0.0;
        config.board.v = 0.0;
        config.board.b = 0.0;
        config.out = Some(dir.clone());
        let err = dispatch(&config).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("rate"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn linearized_outputs_band_and_survival() {
        let dir = tmp_dir("linearized");
        let mut config = RunConfig::default();
        config.mode = Mode::Linearized;
        config.walk.t_end = 2.0;
        config.walk.paths = 40;
        config.walk.horizons = vec![1.0, 2.0];
        config.out = Some(dir.clone());
        dispatch(&config).unwrap();
        let band = fs::read_to_string(dir.join("band.csv")).unwrap();
        assert!(band.starts_with("t,lo,hi,coverage\n"));
        assert_eq!(band.lines().count(), 102);
        let survival = fs::read_to_string(dir.join("survival.csv")).unwrap();
        assert_eq!(survival.lines().count(), 3);
        fs::remove_dir_all(dir).unwrap();
    }
}
