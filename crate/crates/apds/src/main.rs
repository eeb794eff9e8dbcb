use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apds::baselines::SchedulerKind;
use apds::engine::run_with_scheduler;
use apds::metrics::{build_report, emit_csv_file};
use apds::scenario::Scenario;

/// Frame-based downlink scheduling simulator.
#[derive(Parser)]
#[command(name = "apds", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one scheduler and write a metrics CSV.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Scheduler to use (apds, fifo, dfpq); defaults to the
        /// scenario's setting.
        #[arg(long)]
        scheduler: Option<String>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $APDS_OUT_DIR or the current
        /// directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metrics window length in frames.
        #[arg(long, default_value_t = 100)]
        window: u64,
    },
    /// Run one scenario under several schedulers and write one combined
    /// CSV for side-by-side comparison.
    Compare {
        scenario: PathBuf,
        /// Comma-separated list, e.g. apds,fifo,dfpq.
        #[arg(long, value_delimiter = ',', default_value = "apds,fifo,dfpq")]
        schedulers: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        window: u64,
    },
    /// Parse and validate a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("APDS_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn parse_scheduler(name: &str) -> Result<SchedulerKind, String> {
    name.parse::<SchedulerKind>()
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<Scenario, String> {
    let mut s = Scenario::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn cmd_run(
    scenario: PathBuf,
    scheduler: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    window: u64,
) -> Result<(), String> {
    if window == 0 {
        return Err("--window must be >= 1".into());
    }
    let sc = load(&scenario, seed)?;
    let kind = match scheduler {
        Some(name) => parse_scheduler(&name)?,
        None => sc.scheduler,
    };
    let run = run_with_scheduler(&sc, kind).map_err(|e| e.to_string())?;
    let report = build_report(&sc, std::slice::from_ref(&run), window);
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join(format!("run_{}.csv", kind.name()));
    emit_csv_file(&report, &path).map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(
    scenario: PathBuf,
    schedulers: Vec<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    window: u64,
) -> Result<(), String> {
    if window == 0 {
        return Err("--window must be >= 1".into());
    }
    if schedulers.is_empty() {
        return Err("--schedulers needs at least one entry".into());
    }
    let sc = load(&scenario, seed)?;
    let mut runs = Vec::new();
    for name in &schedulers {
        let kind = parse_scheduler(name)?;
        runs.push(run_with_scheduler(&sc, kind).map_err(|e| e.to_string())?);
    }
    let report = build_report(&sc, &runs, window);
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("compare.csv");
    emit_csv_file(&report, &path).map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(scenario: PathBuf) -> Result<(), String> {
    let sc = Scenario::load(&scenario).map_err(|e| e.to_string())?;
    println!(
        "ok: {} connections, {} frames of {} us, {} bytes/frame, scheduler {}",
        sc.connections.len(),
        sc.num_frames,
        sc.frame_duration_us,
        sc.bytes_per_frame(),
        sc.scheduler.name()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, scheduler, seed, out, window } => {
            cmd_run(scenario, scheduler, seed, out, window)
        }
        Command::Compare { scenario, schedulers, seed, out, window } => {
            cmd_compare(scenario, schedulers, seed, out, window)
        }
        Command::Validate { scenario } => cmd_validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
