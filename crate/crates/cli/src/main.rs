use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use superhedge::config::{ConfigError, ProblemConfig};
use superhedge::run::{config_hash, evaluate, Status};
use superhedge::sweep::{run_sweep, SweepSpec};

/// Robust superhedging prices and supermartingale transport bounds on a path lattice.
///
/// Exit codes: 0 success, 2 arbitrage (certificate in the report),
/// 3 infeasible or ill-posed input, 4 solver failure.
#[derive(Debug, Parser)]
#[command(name = "superhedge", version)]
struct Cli {
    /// Problem config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Report (or sweep CSV) destination; overrides the config, `-` for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a convergence sweep, e.g. `proxy_factor=10,100,1000`.
    #[arg(long, value_name = "AXIS=v1,v2,...")]
    sweep: Option<String>,
    /// Pricing routes to run: any of direct, beta, gammaN.
    #[arg(long, value_name = "LIST")]
    routes: Option<String>,
    /// Seed for randomized payoff tables.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::IllPosed.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<u8, ConfigError> {
    let (mut cfg, raw) = ProblemConfig::load(&cli.config)?;
    if let Some(list) = &cli.routes {
        cfg.routes.select(list)?;
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let hash = config_hash(&raw);

    if let Some(sweep) = &cli.sweep {
        let spec: SweepSpec = sweep.parse()?;
        let workers = cfg
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let result = run_sweep(&cfg, &hash, &spec, workers)?;
        if !result.gap_monotone() {
            log::warn!("gap column is not monotone");
        }
        for row in result.rows.iter().filter(|r| r.status != Status::Ok) {
            log::warn!(
                "{} = {}: {}",
                sweep,
                row.axis_value,
                row.report.message.as_deref().unwrap_or("failed")
            );
        }
        let dest = cli.out.clone().or(cfg.output.sweep.as_ref().map(PathBuf::from));
        emit(dest.as_deref(), &result.to_csv())?;
        return Ok(result.exit_code());
    }

    let report = evaluate(&cfg, hash);
    if let Some(message) = &report.message {
        eprintln!("{:?}: {message}", report.status);
    }
    let dest = cli.out.clone().or(cfg.output.report.as_ref().map(PathBuf::from));
    emit(dest.as_deref(), &report.to_toml())?;
    Ok(report.exit_code)
}

fn emit(dest: Option<&Path>, text: &str) -> Result<(), ConfigError> {
    let io = |source, path: &Path| ConfigError::Io {
        path: path.display().to_string(),
        source,
    };
    match dest {
        Some(p) if p != Path::new("-") => std::fs::write(p, text).map_err(|e| io(e, p)),
        _ => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io(e, Path::new("<stdout>"))),
    }
}
