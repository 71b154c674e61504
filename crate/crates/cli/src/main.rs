use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dsm_core::game::{certify, GameConfig};
use dsm_core::report::{emit, load_report, recompute_bills, report_profile, run, summary, RESULT_FILE};
use dsm_core::scenario::load_scenario;
use dsm_core::synth::{synth_scenario, SynthParams};

const EXIT_CONVERGED: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

/// Day-ahead battery scheduling and energy sharing game for a prosumer
/// community.
#[derive(Debug, Parser)]
#[command(name = "dsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the baseline and the game, then write the report.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        game: GameArgs,
        /// Skip the game; report the no-battery, no-sharing baseline only.
        #[arg(long)]
        baseline_only: bool,
    },
    /// Write a synthetic scenario.
    Synth {
        /// Scenario file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        households: usize,
        #[arg(long, default_value_t = 24)]
        intervals: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Household indices (0-based) with wind-like renewables.
        #[arg(long, value_delimiter = ',')]
        wind: Vec<usize>,
        #[arg(long)]
        p0: Option<f64>,
        #[arg(long)]
        eta_bar: Option<f64>,
        /// Total generation as a multiple of total positive net demand.
        #[arg(long)]
        generation_scale: Option<f64>,
        /// Scale of every demand component.
        #[arg(long)]
        demand_amplitude: Option<f64>,
    },
    /// Validate a scenario file.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-run the deviation oracle on an existing result.
    Certify {
        #[arg(long)]
        scenario: PathBuf,
        /// Result directory (or the result document itself).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        game: GameArgs,
    },
}

#[derive(Debug, Args)]
struct GameArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    soc_grid: Option<usize>,
    #[arg(long)]
    action_grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from idle batteries and full sharing.
    #[arg(long)]
    cold_start: bool,
    /// Lower bound on every household's end-of-day SOC (kWh).
    #[arg(long)]
    terminal_soc_min: Option<f64>,
}

impl GameArgs {
    fn apply(&self, mut config: GameConfig) -> GameConfig {
        if let Some(v) = self.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = self.max_sweeps {
            config.max_sweeps = v;
        }
        if let Some(v) = self.soc_grid {
            config.soc_grid = v;
        }
        if let Some(v) = self.action_grid {
            config.action_grid = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if self.cold_start {
            config.cold_start = true;
        }
        if self.terminal_soc_min.is_some() {
            config.terminal_soc_min = self.terminal_soc_min;
        }
        config
    }
}

fn solve_cmd(scenario: &Path, out: &Path, game: &GameArgs, baseline_only: bool) -> Result<u8> {
    let scenario = load_scenario(scenario)?;
    let config = game.apply(GameConfig::default());
    config.validate()?;
    let report = run(&scenario, &config, baseline_only)?;
    emit(&report, &scenario, out)?;
    print!("{}", summary(&report));
    info!("report written to {}", out.display());
    Ok(match report.converged() {
        Some(false) => EXIT_NOT_CONVERGED,
        _ => EXIT_CONVERGED,
    })
}

fn certify_cmd(scenario: &Path, out: &Path, game: &GameArgs) -> Result<u8> {
    let scenario = load_scenario(scenario)?;
    let path = if out.is_dir() { out.join(RESULT_FILE) } else { out.to_path_buf() };
    let report = load_report(&path).with_context(|| format!("reading {}", path.display()))?;
    let profile = report_profile(&report, &scenario)?;
    let result = &report.game.as_ref().expect("checked by report_profile").result;
    let reported = &result.outcome.bills;
    let bills = recompute_bills(&report, &scenario)?;
    if &bills != reported {
        bail!("recomputed bills {bills:?} differ from the reported {reported:?}");
    }
    // Certify 2x finer than the finest search the solver used.
    let config = game.apply(result.search_grid.apply(&report.config));
    config.validate()?;
    let gains = certify(&scenario, &profile, &config)?;
    println!("{:<12}{:>16}{:>14}", "household", "bill", "gain");
    for ((id, bill), gain) in report.household_ids.iter().zip(&bills).zip(&gains) {
        println!("{id:<12}{bill:>16.6}{gain:>14.3e}");
    }
    let worst = gains.iter().copied().fold(0.0, f64::max);
    let ok = worst <= config.epsilon;
    println!(
        "max deviation gain {worst:.3e} ({} epsilon {:.1e})",
        if ok { "within" } else { "above" },
        config.epsilon
    );
    Ok(if ok { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED })
}

#[allow(clippy::too_many_arguments)]
fn synth_cmd(
    out: &Path,
    households: usize,
    intervals: usize,
    seed: u64,
    wind: &[usize],
    p0: Option<f64>,
    eta_bar: Option<f64>,
    generation_scale: Option<f64>,
    demand_amplitude: Option<f64>,
) -> Result<u8> {
    if households < 1 || intervals < 2 {
        bail!("need at least 1 household and 2 intervals");
    }
    let defaults = SynthParams::default();
    let params = SynthParams {
        wind_households: wind.to_vec(),
        p0: p0.unwrap_or(defaults.p0),
        eta_bar: eta_bar.unwrap_or(defaults.eta_bar),
        generation_scale: generation_scale.unwrap_or(defaults.generation_scale),
        demand_amplitude: demand_amplitude.unwrap_or(defaults.demand_amplitude),
        ..defaults
    };
    let scenario = synth_scenario(households, intervals, seed, &params);
    scenario.validate()?;
    std::fs::write(out, scenario.to_toml()).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} (digest {})", out.display(), scenario.digest());
    Ok(EXIT_CONVERGED)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve {
            scenario,
            out,
            game,
            baseline_only,
        } => solve_cmd(&scenario, &out, &game, baseline_only),
        Command::Synth {
            out,
            households,
            intervals,
            seed,
            wind,
            p0,
            eta_bar,
            generation_scale,
            demand_amplitude,
        } => synth_cmd(
            &out,
            households,
            intervals,
            seed,
            &wind,
            p0,
            eta_bar,
            generation_scale,
            demand_amplitude,
        ),
        Command::Check { scenario } => {
            let s = load_scenario(&scenario)?;
            println!(
                "{}: ok ({} households, {} intervals, digest {})",
                scenario.display(),
                s.len(),
                s.intervals,
                s.digest()
            );
            Ok(EXIT_CONVERGED)
        }
        Command::Certify { scenario, out, game } => certify_cmd(&scenario, &out, &game),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_CONVERGED });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
