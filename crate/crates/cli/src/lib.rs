//! Command-line front end. `main.rs` only forwards to [`cli_main`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use cdca_sim::config::parse_scenario;
use cdca_sim::{render_chart_files, write_outputs, ChartKind, Error, ScenarioConfig, Simulation};
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BREACH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cdca-sim", version, about = "Highway congestion warning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics.csv, events.csv, config_echo.toml
    /// and world_final.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        cdca: Option<Toggle>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Diverted vehicles keep forwarding (overhead comparison only).
        #[arg(long)]
        no_cessation: bool,
        /// Speed in m/s at or below which a vehicle counts as congested.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an SVG chart from one or two metrics.csv files.
    Plot {
        #[arg(long, value_parser = |s: &str| s.parse::<ChartKind>())]
        kind: ChartKind,
        #[arg(long = "in", required = true, num_args = 1)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CDCA_SIM_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Validation(_) | Error::InvalidGeometry(_) | Error::SchemaMismatch(_) => EXIT_CONFIG,
        Error::InvariantBreach { .. } => EXIT_BREACH,
        _ => EXIT_USAGE,
    }
}

fn load(path: &Path, edit: impl FnOnce(&mut cdca_sim::ScenarioFile)) -> Result<ScenarioConfig, Error> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse { path: origin.clone(), message: e.to_string() })?;
    let mut file = parse_scenario(&text, &origin)?;
    edit(&mut file);
    ScenarioConfig::from_file(file)
}

fn report(err: &Error) {
    match err {
        Error::Validation(problems) => {
            eprintln!("error: invalid scenario");
            for p in problems {
                eprintln!("  {p}");
            }
        }
        Error::InvariantBreach { tick, detail, dump } => {
            eprintln!("error: invariant breach at tick {tick}: {detail}");
            eprintln!("world at breach:\n{dump}");
        }
        other => eprintln!("error: {other}"),
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, seed, cdca, duration, no_cessation, threshold, out } => {
            let config = load(&config, |f| {
                if let Some(s) = seed {
                    f.seed = s;
                }
                if let Some(t) = cdca {
                    f.cdca_enabled = t == Toggle::On;
                }
                if let Some(d) = duration {
                    f.duration = d;
                }
                if no_cessation {
                    f.cessation = false;
                }
                if let Some(t) = threshold {
                    f.congestion_threshold = t;
                }
            })?;
            let started = std::time::Instant::now();
            let output = Simulation::new(config)?.run_to_end()?;
            log::info!("run finished in {:.2?}", started.elapsed());
            write_outputs(&output, &out)?;
            let s = output.summary;
            println!(
                "ticks={} congested={} blocked={} diversions={} messages={} max_standstill={:.1}s",
                s.ticks, s.final_congested, s.blocked, s.diversions, s.messages_total, s.max_queue_standstill
            );
            Ok(())
        }
        Command::Plot { kind, inputs, out } => {
            if inputs.len() > 2 {
                return Err(Error::SchemaMismatch(format!("at most two inputs, got {}", inputs.len())));
            }
            render_chart_files(&inputs, kind, &out)
        }
        Command::Validate { config } => {
            let c = load(&config, |_| {})?;
            println!(
                "ok: {} ticks, {} accident(s), {} roadside unit(s)",
                c.ticks(),
                c.accidents.len(),
                c.rsus.len()
            );
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(&e);
            exit_code(&e)
        }
    }
}
