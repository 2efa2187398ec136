use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driftburst::analysis::{
    cgw_regression, double_sort, event_returns, normalized_volume, reversion_regression, write_double_sort_csv,
    write_event_returns_csv, write_regressions_csv, EventWindow, VolumeProfile,
};
use driftburst::critval::{critical_value, CriticalValueTable, TableAxes};
use driftburst::detector::{read_events_csv, write_events_csv};
use driftburst::ingest::{build_midquote, read_ticks, write_ticks, SessionWindow, TickRecord};
use driftburst::pipeline::{
    assemble_report, fit_event, run_detect_days, run_experiment, ExperimentCell, ExperimentConfig, RunConfig,
    ThresholdSource,
};
use driftburst::simulator::{simulate_day, BurstParams, ScenarioSpec};

#[derive(Parser)]
#[command(name = "driftburst", about = "Drift burst detection on high-frequency prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trading day and write it as tick CSV.
    Simulate(SimulateArgs),
    /// Run detection on tick CSV and write a report.
    Detect(DetectArgs),
    /// Build or query a critical-value table.
    #[command(subcommand)]
    Crit(CritCommand),
    /// Monte Carlo size and power study.
    Experiment(ExperimentArgs),
    /// Fit the local parametric burst model to event windows.
    FitDb(FitArgs),
    /// Reversion and volume analytics around detected events.
    Events(EventsArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; defaults to the null design of the simulation study.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Adds a flash crash with this drift burst exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Adds a volatility burst with this exponent.
    #[arg(long)]
    beta: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Tick CSV, `-` for standard input.
    #[arg(long, default_value = "-")]
    input: String,
    /// Run configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "level")]
    threshold: Option<f64>,
    /// Use the simulated critical value at this level instead of a fixed threshold.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    h_mean: Option<f64>,
    #[arg(long)]
    h_var: Option<f64>,
    #[arg(long)]
    grid_spacing: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report JSON; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// t-statistic CSV (one file per day when there are several).
    #[arg(long)]
    tstats: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CritCommand {
    /// Simulate a table and save it as JSON.
    Build(CritBuildArgs),
    /// Interpolate a critical value from a saved table.
    Query(CritQueryArgs),
}

#[derive(Args)]
struct CritBuildArgs {
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100_000)]
    n_sims: usize,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CritQueryArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    level: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML; overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drift bandwidths in seconds.
    #[arg(long, value_delimiter = ',', default_value = "300")]
    h_mean: Vec<f64>,
    #[arg(long)]
    table_sims: Option<usize>,
    /// Size/power CSV; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Explosion time in seconds after the first record.
    #[arg(long, required_unless_present = "events")]
    end: Option<f64>,
    /// Events CSV; each event's peak is used as the explosion time.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Window length in seconds.
    #[arg(long, default_value_t = 3600.0)]
    window: f64,
    /// JSON output; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EventsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value_t = 300.0)]
    horizon: f64,
    /// Session open, `HH:MM` local time; enables volume normalization.
    #[arg(long, requires = "session_end")]
    session_start: Option<String>,
    #[arg(long)]
    session_end: Option<String>,
    #[arg(long, default_value_t = 0)]
    utc_offset_minutes: i32,
    #[arg(long)]
    output_dir: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_records(input: &str) -> Result<Vec<TickRecord>> {
    let reader: Box<dyn Read> = if input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(input).with_context(|| format!("opening {input}"))?))
    };
    let loaded = read_ticks(reader).with_context(|| format!("reading ticks from {input}"))?;
    Ok(loaded.records)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => ScenarioSpec::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ScenarioSpec::study_null(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if args.alpha.is_some() || args.beta.is_some() {
        spec.burst = Some(BurstParams::new(
            if args.alpha.is_some() { 3.0 } else { 0.0 },
            args.alpha.unwrap_or(0.5),
            if args.beta.is_some() { 0.15 } else { 0.0 },
            args.beta.unwrap_or(0.0),
        ));
    }
    let day = simulate_day(&spec, spec.seed)?;
    write_ticks(&day.to_records(&spec), writer(args.output.as_deref())?)?;
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(x) = args.threshold {
        cfg.threshold = ThresholdSource::Fixed(x);
    }
    if let Some(p) = args.level {
        cfg.threshold = ThresholdSource::Critval(p);
    }
    if let Some(h) = args.h_mean {
        cfg.detector.h_mean = h;
        if args.h_var.is_none() {
            cfg.detector.h_var = 5.0 * h;
        }
    }
    if let Some(h) = args.h_var {
        cfg.detector.h_var = h;
    }
    if let Some(g) = args.grid_spacing {
        cfg.grid_spacing = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let records = load_records(&args.input)?;
    let days = run_detect_days(&cfg, &records)?;
    let report = assemble_report(&cfg, &days);
    if let Some(path) = &args.tstats {
        for d in &days {
            let p = if days.len() == 1 { path.clone() } else { day_path(path, d.report.day) };
            d.tstats.write_csv(writer(Some(&p))?)?;
        }
    }
    if let Some(path) = &args.events {
        write_events_csv(&report.events, writer(Some(path))?)?;
    }
    let mut w = writer(args.report.as_deref())?;
    writeln!(w, "{}", report.to_json()?)?;
    w.flush()?;
    Ok(())
}

fn day_path(path: &Path, day: i64) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tstats");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{day}.{ext}"))
}

fn crit(cmd: CritCommand) -> Result<()> {
    match cmd {
        CritCommand::Build(a) => {
            let d = TableAxes::default();
            let axes = TableAxes { m: a.m.unwrap_or(d.m), rho: a.rho.unwrap_or(d.rho), level: a.levels.unwrap_or(d.level) };
            let table = CriticalValueTable::build(axes, a.n_sims, a.burn_in, a.seed)?;
            table.save(writer(Some(&a.output))?)?;
            for v in table.monotonicity_violations() {
                log::warn!("monotonicity violation along {} at m={} rho={} level={}", v.axis, v.m, v.rho, v.level);
            }
        }
        CritCommand::Query(a) => {
            let f = File::open(&a.table).with_context(|| format!("opening {}", a.table.display()))?;
            let table = CriticalValueTable::load(BufReader::new(f))?;
            println!("{}", critical_value(&table, a.m, a.rho, a.level)?);
        }
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => {
            let mut cells = Vec::new();
            for &h in &args.h_mean {
                for beta in [None, Some(0.1), Some(0.2), Some(0.3), Some(0.4)] {
                    for alpha in [None, Some(0.55), Some(0.65), Some(0.75)] {
                        cells.push(ExperimentCell { alpha, beta, h_mean: h });
                    }
                }
            }
            let mut c = ExperimentConfig::new(cells, args.replications, args.seed);
            if let Some(n) = args.table_sims {
                c.table_sims = n;
            }
            c
        }
    };
    let report = run_experiment(&cfg)?;
    report.write_csv(writer(args.output.as_deref())?)?;
    Ok(())
}

fn fit_db(args: FitArgs) -> Result<()> {
    let records = load_records(args.input.to_str().context("input path is not UTF-8")?)?;
    if records.is_empty() {
        bail!(driftburst::Error::Input("no tick records".into()));
    }
    let series = build_midquote(&records, records[0].ts_ms)?;
    let origin = records[0].ts_ms as f64 / 1000.0;
    let ends: Vec<f64> = match (&args.events, args.end) {
        (Some(p), _) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_events_csv(BufReader::new(f))?.iter().map(|e| e.peak_time - origin).collect()
        }
        (None, Some(e)) => vec![e],
        (None, None) => unreachable!("clap requires --end or --events"),
    };
    let mut fits = Vec::with_capacity(ends.len());
    for end in ends {
        fits.push(fit_event(&series, end, args.window).with_context(|| format!("fitting the window ending at {end}"))?);
    }
    let mut w = writer(args.output.as_deref())?;
    if args.events.is_some() {
        writeln!(w, "{}", serde_json::to_string_pretty(&fits)?)?;
    } else {
        writeln!(w, "{}", serde_json::to_string_pretty(&fits[0])?)?;
    }
    w.flush()?;
    Ok(())
}

fn clock_seconds(s: &str) -> Result<u32> {
    let (h, m) = s.split_once(':').context("clock times are HH:MM")?;
    let (h, m): (u32, u32) = (h.parse()?, m.parse()?);
    if h > 24 || m > 59 {
        bail!(driftburst::Error::Config(format!("invalid clock time {s}")));
    }
    Ok(h * 3600 + m * 60)
}

fn events(args: EventsArgs) -> Result<()> {
    let records = load_records(args.input.to_str().context("input path is not UTF-8")?)?;
    if records.is_empty() {
        bail!(driftburst::Error::Input("no tick records".into()));
    }
    let series = build_midquote(&records, records[0].ts_ms)?;
    let f = File::open(&args.events).with_context(|| format!("opening {}", args.events.display()))?;
    let evs = read_events_csv(BufReader::new(f))?;
    let mut samples = event_returns(&series, &evs, EventWindow::Fixed(args.horizon), None)?;
    if let (Some(a), Some(b)) = (&args.session_start, &args.session_end) {
        let session = SessionWindow { start_sec: clock_seconds(a)?, end_sec: clock_seconds(b)?, utc_offset_minutes: args.utc_offset_minutes };
        session.validate()?;
        normalized_volume(&mut samples, &VolumeProfile::new(&records, session)?)?;
    }
    fs::create_dir_all(&args.output_dir).with_context(|| format!("creating {}", args.output_dir.display()))?;
    let out = |name: &str| args.output_dir.join(name);
    write_event_returns_csv(&samples, writer(Some(&out("event_returns.csv")))?)?;

    let mut json = serde_json::Map::new();
    json.insert("events".into(), samples.len().into());
    let mut rows = Vec::new();
    let reversion = reversion_regression(&samples).map_err(|e| log::warn!("reversion regression skipped: {e}")).ok();
    let with_volume = samples.iter().all(|s| s.v_minus.is_some());
    let cgw = if with_volume { cgw_regression(&samples).map_err(|e| log::warn!("volume regression skipped: {e}")).ok() } else { None };
    if let Some(r) = &reversion {
        rows.push(("reversion", r));
        json.insert("reversion".into(), serde_json::to_value(r)?);
    }
    if let Some(r) = &cgw {
        rows.push(("cgw", r));
        json.insert("cgw".into(), serde_json::to_value(r)?);
    }
    write_regressions_csv(&rows, writer(Some(&out("regressions.csv")))?)?;
    if with_volume {
        match double_sort(&samples) {
            Ok(tables) => {
                write_double_sort_csv(&tables, writer(Some(&out("double_sort.csv")))?)?;
                json.insert("double_sort".into(), serde_json::to_value(tables)?);
            }
            Err(e) => log::warn!("double sort skipped: {e}"),
        }
    }
    let mut w = writer(Some(&out("analysis.json")))?;
    writeln!(w, "{}", serde_json::to_string_pretty(&json)?)?;
    w.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<driftburst::Error>() {
            return if e.is_numerical() { 2 } else { 1 };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Crit(c) => crit(c),
        Command::Experiment(a) => experiment(a),
        Command::FitDb(a) => fit_db(a),
        Command::Events(a) => events(a),
        Command::Version => {
            println!("driftburst {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
