//! Run configuration: a declarative TOML document resolved in three layers
//! (preset, then file, then command-line flags, later layers winning key by
//! key), quantization of wealth-valued inputs, and emission of the resolved
//! document for manifests and `--print-config`.
//!
//! Wealth quantities cross this boundary as floats and are converted to
//! integer quanta via `wealth-scale`: a value is accepted only if
//! `value * wealth-scale` is an integer up to rounding noise, so config
//! files can speak in model units while the core stays exact.

use std::fmt;
use std::path::{Path, PathBuf};

use demopd::engine::EngineError;
use demopd::meanfield::MFError;
use demopd::model::{Flavor, ModelError, PayoffMatrix, SimParams, Wealth};
use demopd::sweep::{InitialLayout, PayoffRule, Placement, SweepError, SweepSpec};
use demopd::MFParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Front-end failure, tagged with the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: the configuration could not be parsed (syntax, types,
    /// unknown keys).
    #[error("config: {0}")]
    Config(String),
    /// Exit 3: well-formed input whose values violate a model constraint.
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// Exit 4: the engine refused to run.
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    /// Exit 5: mean-field numerics failed mid-run.
    #[error("mean-field: {0}")]
    Numeric(MFError),
    /// Exit 6: filesystem trouble.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Engine(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        CliError::Validation(err.to_string())
    }
}

impl From<MFError> for CliError {
    fn from(err: MFError) -> Self {
        match err {
            // Bad inputs are a validation failure; the rest are runtime
            // numerics (mass leaks, window overflow).
            MFError::InvalidParams(_) | MFError::NonpositiveDrift => {
                CliError::Validation(err.to_string())
            }
            other => CliError::Numeric(other),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(err: SweepError) -> Self {
        match err {
            SweepError::Model(e) => e.into(),
            SweepError::Engine(e) => e.into(),
            SweepError::InvalidSpec(msg) => CliError::Validation(msg.to_string()),
            SweepError::Io(e) => e.into(),
            SweepError::ThreadPool(e) => CliError::Config(e.to_string()),
        }
    }
}

/// What a run computes. Kebab-case in config files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Spatial demographic game with frozen dead.
    Spatial,
    /// Spatial demographic game with ghost upkeep.
    Ghost,
    /// Well-mixed stochastic ensemble of independent wealth walks.
    MeanfieldEnsemble,
    /// Deterministic master-equation integration of the wealth laws.
    MeanfieldMaster,
    /// Frozen-environment linearized walk: analytic bands plus Monte Carlo.
    Linearized,
    /// Payoff-grid scan emitting heat-map CSVs.
    Sweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Spatial => "spatial",
            Mode::Ghost => "ghost",
            Mode::MeanfieldEnsemble => "meanfield-ensemble",
            Mode::MeanfieldMaster => "meanfield-master",
            Mode::Linearized => "linearized",
            Mode::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Board geometry and rates for the spatial modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BoardConfig {
    /// Torus side length.
    pub m: u32,
    /// Population slots.
    pub k: u64,
    /// Per-slot move rate.
    pub d: f64,
    /// Per-pair game rate.
    pub v: f64,
    /// Per-slot birth rate.
    pub b: f64,
    /// Child starting wealth (model units).
    pub w0: f64,
    /// Birth threshold (model units); a parent needs strictly more.
    pub wc: f64,
    /// Ghost mode only: charge upkeep to every born particle instead of
    /// cooperators alone.
    pub upkeep_all: bool,
}

impl Default for BoardConfig {
    fn default() -> Self {
        BoardConfig { m: 7, k: 24, d: 5.0, v: 5.0, b: 5.0, w0: 3.0, wc: 10.0, upkeep_all: false }
    }
}

/// Game payoffs in model units plus the quantization scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PayoffConfig {
    pub t: f64,
    pub r: f64,
    pub s: f64,
    pub p: f64,
    /// Integer quanta per model unit. All wealth-valued inputs must be
    /// exact multiples of `1 / wealth-scale`.
    pub wealth_scale: f64,
}

impl Default for PayoffConfig {
    fn default() -> Self {
        PayoffConfig { t: 4.0, r: 3.0, s: 2.0, p: 1.0, wealth_scale: 1.0 }
    }
}

/// Initial population of the spatial modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PopulationConfig {
    pub cooperators: u64,
    pub defectors: u64,
    /// Starting wealth (model units) shared by every initial particle.
    pub wealth: f64,
    /// Fixed sites, cooperators first; omitted means uniform random
    /// placement drawn from the run's seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[u32; 2]>>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig { cooperators: 10, defectors: 10, wealth: 10.0, positions: None }
    }
}

/// Well-mixed and linearized-walk settings. Payoffs come from `[payoffs]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct WalkConfig {
    /// Ambient cooperator fraction.
    pub beta0: f64,
    /// Ambient defector fraction.
    pub rho0: f64,
    /// Per-individual game rate.
    pub v: f64,
    /// Initial wealth (model units).
    pub q0: f64,
    /// Time horizon.
    pub t_end: f64,
    /// Chebyshev band width in standard deviations.
    pub eta: f64,
    /// Monte Carlo paths for the linearized mode.
    pub paths: u64,
    /// Walkers per population for the ensemble mode.
    pub ensemble: u64,
    /// Master-equation integration step.
    pub dt: f64,
    /// Count games once per pair, halving the per-individual rate.
    pub half_rate: bool,
    /// Survival-probability horizons for the linearized mode.
    pub horizons: Vec<f64>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            beta0: 0.6,
            rho0: 0.4,
            v: 1.0,
            q0: 10.0,
            t_end: 50.0,
            eta: 2.0,
            paths: 10_000,
            ensemble: 10_000,
            dt: 0.01,
            half_rate: false,
            horizons: vec![10.0, 100.0, 1000.0],
        }
    }
}

/// Payoff-grid scan settings. Grid coordinates are integer quanta.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepConfig {
    pub r_min: i64,
    pub r_max: i64,
    pub s_min: i64,
    pub s_max: i64,
    /// Grid stride along both axes.
    pub step: i64,
    /// `T = R + t-offset` at every grid point.
    pub t_offset: i64,
    /// `P = S + p-offset` at every grid point.
    pub p_offset: i64,
    /// Replicas per grid cell.
    pub batch: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            r_min: 0,
            r_max: 100,
            s_min: 0,
            s_max: 100,
            step: 1,
            t_offset: 1,
            p_offset: -1,
            batch: 100,
        }
    }
}

/// The complete resolved run configuration. Emitting and re-parsing one of
/// these reproduces it exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Output directory; falls back to `DEMOPD_OUT_DIR`, then `.`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Event budget per spatial run (no-ops included).
    pub events: u64,
    /// Trajectory-log record stride, in events.
    pub stride: u64,
    /// Worker threads for the sweep mode; 0 means one per core.
    pub parallelism: usize,
    pub board: BoardConfig,
    pub payoffs: PayoffConfig,
    pub population: PopulationConfig,
    pub walk: WalkConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Spatial,
            seed: 0,
            out: None,
            events: 10_000,
            stride: 100,
            parallelism: 0,
            board: BoardConfig::default(),
            payoffs: PayoffConfig::default(),
            population: PopulationConfig::default(),
            walk: WalkConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// The classic heat-map study: full 101x101 offset grid over the reference
/// board, 100 replicas of 10^4 events per cell.
pub fn figure2_config() -> RunConfig {
    RunConfig {
        mode: Mode::Sweep,
        events: 10_000,
        board: BoardConfig { m: 7, k: 24, d: 5.0, v: 5.0, b: 5.0, w0: 3.0, wc: 10.0, upkeep_all: false },
        payoffs: PayoffConfig::default(),
        population: PopulationConfig { cooperators: 10, defectors: 10, wealth: 10.0, positions: None },
        sweep: SweepConfig::default(),
        ..RunConfig::default()
    }
}

// Partial mirror of the config tree: every field optional, unknown keys
// rejected. Files and presets both overlay through this, so precedence is
// uniform and per key.

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Overlay {
    mode: Option<Mode>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    events: Option<u64>,
    stride: Option<u64>,
    parallelism: Option<usize>,
    board: Option<BoardOverlay>,
    payoffs: Option<PayoffOverlay>,
    population: Option<PopulationOverlay>,
    walk: Option<WalkOverlay>,
    sweep: Option<SweepOverlay>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct BoardOverlay {
    m: Option<u32>,
    k: Option<u64>,
    d: Option<f64>,
    v: Option<f64>,
    b: Option<f64>,
    w0: Option<f64>,
    wc: Option<f64>,
    upkeep_all: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct PayoffOverlay {
    t: Option<f64>,
    r: Option<f64>,
    s: Option<f64>,
    p: Option<f64>,
    wealth_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct PopulationOverlay {
    cooperators: Option<u64>,
    defectors: Option<u64>,
    wealth: Option<f64>,
    positions: Option<Vec<[u32; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct WalkOverlay {
    beta0: Option<f64>,
    rho0: Option<f64>,
    v: Option<f64>,
    q0: Option<f64>,
    t_end: Option<f64>,
    eta: Option<f64>,
    paths: Option<u64>,
    ensemble: Option<u64>,
    dt: Option<f64>,
    half_rate: Option<bool>,
    horizons: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SweepOverlay {
    r_min: Option<i64>,
    r_max: Option<i64>,
    s_min: Option<i64>,
    s_max: Option<i64>,
    step: Option<i64>,
    t_offset: Option<i64>,
    p_offset: Option<i64>,
    batch: Option<u32>,
}

macro_rules! apply_fields {
    ($src:expr, $dst:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(value) = $src.$field {
            $dst.$field = value;
        })+
    };
}

impl Overlay {
    pub fn apply(self, config: &mut RunConfig) {
        apply_fields!(self, config, mode, seed, events, stride, parallelism);
        if let Some(out) = self.out {
            config.out = Some(out);
        }
        if let Some(o) = self.board {
            apply_fields!(o, config.board, m, k, d, v, b, w0, wc, upkeep_all);
        }
        if let Some(o) = self.payoffs {
            apply_fields!(o, config.payoffs, t, r, s, p, wealth_scale);
        }
        if let Some(o) = self.population {
            apply_fields!(o, config.population, cooperators, defectors, wealth);
            if let Some(positions) = o.positions {
                config.population.positions = Some(positions);
            }
        }
        if let Some(o) = self.walk {
            apply_fields!(
                o,
                config.walk,
                beta0,
                rho0,
                v,
                q0,
                t_end,
                eta,
                paths,
                ensemble,
                dt,
                half_rate,
                horizons,
            );
        }
        if let Some(o) = self.sweep {
            apply_fields!(
                o,
                config.sweep,
                r_min,
                r_max,
                s_min,
                s_max,
                step,
                t_offset,
                p_offset,
                batch,
            );
        }
    }
}

/// Parses one TOML config document into an overlay. Syntax errors and
/// unknown keys surface with the offending key and line in the message.
pub fn parse_overlay(text: &str) -> Result<Overlay, CliError> {
    toml::from_str(text).map_err(|err| CliError::Config(err.to_string()))
}

pub fn read_overlay(path: &Path) -> Result<Overlay, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| CliError::Config(format!("{}: {err}", path.display())))?;
    parse_overlay(&text)
}

/// Emits the resolved configuration as TOML. `parse_overlay` applied to the
/// output reconstructs the input exactly.
pub fn emit(config: &RunConfig) -> String {
    // RunConfig serializes scalars before tables, which is valid TOML.
    toml::to_string(config).expect("config serializes")
}

/// Converts a model-unit value into integer quanta at `scale`, rejecting
/// values that are not exact lattice points.
pub fn quantize(value: f64, scale: f64, what: &str) -> Result<Wealth, CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Validation(format!("wealth-scale must be positive, got {scale}")));
    }
    let scaled = value * scale;
    let q = scaled.round();
    if !scaled.is_finite() || (scaled - q).abs() > 1e-9 * q.abs().max(1.0) {
        return Err(CliError::Validation(format!(
            "{what} = {value} is not an integer multiple of 1/{scale} (wealth-scale)"
        )));
    }
    if q.abs() >= 2f64.powi(53) {
        return Err(CliError::Validation(format!("{what} = {value} overflows wealth arithmetic")));
    }
    Ok(q as Wealth)
}

impl RunConfig {
    pub fn flavor(&self) -> Flavor {
        match self.mode {
            Mode::Ghost => Flavor::Ghost,
            _ => Flavor::True,
        }
    }

    pub fn payoff_matrix(&self) -> Result<PayoffMatrix, CliError> {
        let scale = self.payoffs.wealth_scale;
        Ok(PayoffMatrix {
            t: quantize(self.payoffs.t, scale, "payoffs.t")?,
            r: quantize(self.payoffs.r, scale, "payoffs.r")?,
            s: quantize(self.payoffs.s, scale, "payoffs.s")?,
            p: quantize(self.payoffs.p, scale, "payoffs.p")?,
        })
    }

    pub fn sim_params(&self) -> Result<SimParams, CliError> {
        let scale = self.payoffs.wealth_scale;
        Ok(SimParams {
            m: self.board.m,
            k: self.board.k,
            d: self.board.d,
            v: self.board.v,
            b: self.board.b,
            w0: quantize(self.board.w0, scale, "board.w0")?,
            wc: quantize(self.board.wc, scale, "board.wc")?,
            flavor: self.flavor(),
            ghost_upkeep_all: self.board.upkeep_all,
        })
    }

    pub fn initial_layout(&self) -> Result<InitialLayout, CliError> {
        let placement = match &self.population.positions {
            None => Placement::UniformRandom,
            Some(sites) => Placement::Explicit(sites.iter().map(|&[x, y]| (x, y)).collect()),
        };
        Ok(InitialLayout {
            n_cooperators: self.population.cooperators,
            n_defectors: self.population.defectors,
            wealth: quantize(self.population.wealth, self.payoffs.wealth_scale, "population.wealth")?,
            placement,
        })
    }

    pub fn walk_params(&self) -> Result<MFParams, CliError> {
        let q0 = quantize(self.walk.q0, self.payoffs.wealth_scale, "walk.q0")?;
        let params = MFParams {
            beta0: self.walk.beta0,
            rho0: self.walk.rho0,
            v: self.walk.v,
            payoffs: self.payoff_matrix()?,
            m0: vec![(q0, 1.0)],
            half_rate: self.walk.half_rate,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, CliError> {
        let sw = &self.sweep;
        if sw.step < 1 {
            return Err(CliError::Validation("sweep.step must be at least 1".into()));
        }
        if sw.r_max < sw.r_min || sw.s_max < sw.s_min {
            return Err(CliError::Validation("sweep grid bounds are inverted".into()));
        }
        let axis = |lo: i64, hi: i64| (lo..=hi).step_by(sw.step as usize).collect::<Vec<Wealth>>();
        Ok(SweepSpec {
            params: self.sim_params()?,
            layout: self.initial_layout()?,
            payoff_rule: PayoffRule::Offset { t_offset: sw.t_offset, p_offset: sw.p_offset },
            r_values: axis(sw.r_min, sw.r_max),
            s_values: axis(sw.s_min, sw.s_max),
            batch_size: sw.batch,
            events_per_run: self.events,
            master_seed: self.seed,
        })
    }
}
