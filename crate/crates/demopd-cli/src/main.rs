//! `demopd`: command-line front end for the demographic game library.
//!
//! A run is described by a declarative TOML config resolved in three
//! layers: an optional named preset, then an optional `--config` file, then
//! individual flag overrides, later layers winning key by key. Every run
//! writes its outputs plus a `run_manifest.toml` echoing the resolved
//! configuration. Exit codes are categorical: 0 success, 2 config parse,
//! 3 validation, 4 engine, 5 mean-field numerics, 6 io.
//!
//! The binary itself stays single-threaded; the sweep mode delegates its
//! parallelism to the library's fixed-size worker pool, which keeps output
//! bytes independent of the thread count.

mod config;
mod modes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{emit, figure2_config, read_overlay, CliError, Mode, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "demopd",
    about = "Demographic prisoner's dilemma: spatial runs, payoff sweeps, \
             mean-field companions",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run whatever mode the resolved config selects (default: spatial).
    Run,
    /// Scan the payoff grid and emit heat-map CSVs (mode sweep).
    Sweep,
    /// Well-mixed companion dynamics (modes meanfield-ensemble/-master).
    Meanfield {
        /// Stochastic ensemble or deterministic master integration.
        #[arg(long, value_enum, default_value_t = MeanfieldVariant::Ensemble)]
        variant: MeanfieldVariant,
    },
    /// Frozen-environment linearized walk (mode linearized).
    Linearized,
    /// Resolve and validate the configuration, then exit without running.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeanfieldVariant {
    Ensemble,
    Master,
}

/// Named configuration presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// The classic heat map: 101x101 offset payoff grid over the reference
    /// 7x7 board, 100 replicas of 10^4 events per cell.
    Figure2,
}

/// Flag-level overrides. Each maps onto one config key and wins over both
/// the preset and the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file (applied over the preset, under the flags).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Start from a named preset instead of the built-in defaults.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (falls back to $DEMOPD_OUT_DIR, then `.`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Event budget per spatial run.
    #[arg(long, global = true)]
    events: Option<u64>,
    /// Trajectory-log record stride.
    #[arg(long, global = true)]
    stride: Option<u64>,
    /// Sweep worker threads (0 = one per core).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Run mode (subcommands sweep/meanfield/linearized override this).
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    /// Torus side length.
    #[arg(long, global = true)]
    m: Option<u32>,
    /// Population slots.
    #[arg(long, global = true)]
    k: Option<u64>,
    /// Per-slot move rate.
    #[arg(long, global = true)]
    d: Option<f64>,
    /// Game rate: per pair on the board, per individual in the walk modes.
    #[arg(long, global = true)]
    v: Option<f64>,
    /// Per-slot birth rate.
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Child starting wealth.
    #[arg(long, global = true)]
    w0: Option<f64>,
    /// Birth threshold.
    #[arg(long, global = true)]
    wc: Option<f64>,

    /// Temptation payoff.
    #[arg(long = "T", global = true)]
    t_payoff: Option<f64>,
    /// Reward payoff.
    #[arg(long = "R", global = true)]
    r_payoff: Option<f64>,
    /// Sucker-loss payoff.
    #[arg(long = "S", global = true)]
    s_payoff: Option<f64>,
    /// Half-punishment payoff.
    #[arg(long = "P", global = true)]
    p_payoff: Option<f64>,
    /// Integer quanta per model wealth unit.
    #[arg(long, global = true)]
    wealth_scale: Option<f64>,

    /// Ambient cooperator fraction (walk modes).
    #[arg(long, global = true)]
    beta0: Option<f64>,
    /// Ambient defector fraction (walk modes).
    #[arg(long, global = true)]
    rho0: Option<f64>,
    /// Initial wealth of the tracked walker.
    #[arg(long, global = true)]
    q0: Option<f64>,
    /// Time horizon for the walk modes.
    #[arg(long, global = true)]
    t_end: Option<f64>,
    /// Chebyshev band width in standard deviations.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Monte Carlo path count (linearized mode).
    #[arg(long, global = true)]
    n_paths: Option<u64>,
    /// Walkers per population (ensemble mode).
    #[arg(long, global = true)]
    n_ensemble: Option<u64>,
    /// Master-equation integration step.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Replicas per sweep grid cell.
    #[arg(long, global = true)]
    batch: Option<u32>,
    /// Sweep grid stride along both axes.
    #[arg(long, global = true)]
    grid_step: Option<i64>,
}

impl Overrides {
    /// Applies the flag layer onto the config. `--v` feeds both the board's
    /// pair rate and the walk's individual rate; only the active mode reads
    /// its copy.
    fn apply(&self, config: &mut RunConfig) {
        macro_rules! set {
            ($($flag:ident => $($path:ident).+),+ $(,)?) => {
                $(if let Some(value) = self.$flag {
                    config.$($path).+ = value;
                })+
            };
        }
        set! {
            mode => mode,
            seed => seed,
            events => events,
            stride => stride,
            parallelism => parallelism,
            m => board.m,
            k => board.k,
            d => board.d,
            v => board.v,
            v => walk.v,
            b => board.b,
            w0 => board.w0,
            wc => board.wc,
            t_payoff => payoffs.t,
            r_payoff => payoffs.r,
            s_payoff => payoffs.s,
            p_payoff => payoffs.p,
            wealth_scale => payoffs.wealth_scale,
            beta0 => walk.beta0,
            rho0 => walk.rho0,
            q0 => walk.q0,
            t_end => walk.t_end,
            eta => walk.eta,
            n_paths => walk.paths,
            n_ensemble => walk.ensemble,
            dt => walk.dt,
            batch => sweep.batch,
            grid_step => sweep.step,
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
    }
}

/// Resolves the three config layers and the subcommand's mode pin.
fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match cli.overrides.preset {
        Some(Preset::Figure2) => figure2_config(),
        None => RunConfig::default(),
    };
    if let Some(path) = &cli.overrides.config {
        read_overlay(path)?.apply(&mut config);
    }
    cli.overrides.apply(&mut config);
    match cli.command {
        Some(Command::Sweep) => config.mode = Mode::Sweep,
        Some(Command::Meanfield { variant: MeanfieldVariant::Ensemble }) => {
            config.mode = Mode::MeanfieldEnsemble;
        }
        Some(Command::Meanfield { variant: MeanfieldVariant::Master }) => {
            config.mode = Mode::MeanfieldMaster;
        }
        Some(Command::Linearized) => config.mode = Mode::Linearized,
        Some(Command::Run) | Some(Command::Validate) | None => {}
    }
    Ok(config)
}

fn real_main(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(cli)?;
    if cli.overrides.print_config {
        print!("{}", emit(&config));
        return Ok(());
    }
    match cli.command {
        Some(Command::Validate) => modes::validate_only(&config),
        _ => modes::dispatch(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("demopd: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("demopd").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_preset_and_file_layers() {
        let cli = parse(&["--preset", "figure2", "--seed", "42"]);
        let config = resolve(&cli).unwrap();
        assert_eq!(config.mode, Mode::Sweep);
        assert_eq!(config.seed, 42);
        assert_eq!(config.sweep.batch, 100);
    }

    #[test]
    fn subcommand_pins_the_mode_over_the_flag() {
        let cli = parse(&["linearized", "--mode", "spatial"]);
        assert_eq!(resolve(&cli).unwrap().mode, Mode::Linearized);

        let cli = parse(&["meanfield", "--variant", "master"]);
        assert_eq!(resolve(&cli).unwrap().mode, Mode::MeanfieldMaster);
    }

    #[test]
    fn v_flag_feeds_board_and_walk_rates() {
        let cli = parse(&["--v", "2.5"]);
        let config = resolve(&cli).unwrap();
        assert_eq!(config.board.v, 2.5);
        assert_eq!(config.walk.v, 2.5);
    }

    #[test]
    fn payoff_flags_use_uppercase_long_names() {
        let cli = parse(&["--R", "3", "--S", "2", "--T", "5", "--P", "1.5"]);
        let config = resolve(&cli).unwrap();
        assert_eq!(
            (config.payoffs.r, config.payoffs.s, config.payoffs.t, config.payoffs.p),
            (3.0, 2.0, 5.0, 1.5)
        );
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let cli = parse(&["--config", "/no/such/file.toml"]);
        let err = resolve(&cli).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
