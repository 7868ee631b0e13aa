use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use underlay_core::harness::{
    calibrate, parse_matrix_csv, reference_table, render_matrix, run_spectrum_scenario, run_sweep, ExperimentConfig,
    Format, RunManifest, SpectrumScript,
};
use underlay_core::channel::write_delivery_csv;
use underlay_core::plant::{run_trial, write_trial_csv};
use underlay_core::SimTime;

#[derive(Parser)]
#[command(name = "underlay", version, about = "Closed-loop control over impaired links")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trial length in seconds; overrides the config.
    #[arg(long, global = true)]
    trial_length: Option<f64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Structured,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => Format::Markdown,
            FormatArg::Csv => Format::Csv,
            FormatArg::Structured => Format::Structured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Default,
    Adapted,
}

#[derive(Subcommand)]
enum Command {
    /// Run the latency/jitter sweep.
    Sweep {
        /// Repeat the run recorded in this manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Format printed to stdout.
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
    },
    /// Run a single trial.
    Trial {
        /// Mean one-way delay; defaults to the configured channel.
        #[arg(long)]
        latency_ms: Option<f64>,
        /// Jitter bound; defaults to the configured channel.
        #[arg(long)]
        jitter_ms: Option<f64>,
        #[arg(long, value_enum, default_value = "default")]
        profile: ProfileArg,
        /// Stop delivering feedback from this time on.
        #[arg(long)]
        sever_at_ms: Option<f64>,
    },
    /// Replay a spectrum request/release script.
    /// Without a script, replays the requests in the config's spectrum section.
    Spectrum { script: Option<PathBuf> },
    /// Search the configured grid for loop settings that reproduce the
    /// reference verdicts.
    Calibrate,
    /// Re-render a matrix CSV.
    Render {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(cli, &mut cfg)?;
    Ok(cfg)
}

fn apply_overrides(cli: &Cli, cfg: &mut ExperimentConfig) -> Result<()> {
    if let Some(seed) = cli.seed {
        cfg.sweep.base_seed = seed;
    }
    if let Some(len) = cli.trial_length {
        cfg.sweep.trial_length_s = len;
    }
    cfg.validate()?;
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn write(path: PathBuf, text: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(path);
    Ok(())
}

fn sweep(cli: &Cli, manifest: Option<&Path>, format: Format) -> Result<ExitCode> {
    let cfg = match manifest {
        Some(p) => {
            let mut cfg = RunManifest::load(p).with_context(|| format!("loading {}", p.display()))?.config;
            apply_overrides(cli, &mut cfg)?;
            cfg
        }
        None => load_config(cli)?,
    };
    let started = Instant::now();
    let mut record = RunManifest::new("sweep", &cfg);
    let matrix = run_sweep(&cfg.sweep, &cfg.loop_pair(), &cfg.scenario()?)?;
    record.wall_clock_s = started.elapsed().as_secs_f64();
    info!("sweep finished in {:.1} s", record.wall_clock_s);
    if let Some(dir) = out_dir(cli)? {
        write(dir.join("matrix.csv"), &render_matrix(&matrix, Format::Csv), &mut record.outputs)?;
        write(dir.join("matrix.md"), &render_matrix(&matrix, Format::Markdown), &mut record.outputs)?;
        let path = dir.join("manifest.json");
        record.outputs.push(path.clone());
        fs::write(&path, record.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", render_matrix(&matrix, format));
    Ok(ExitCode::SUCCESS)
}

fn trial(
    cli: &Cli,
    latency_ms: Option<f64>,
    jitter_ms: Option<f64>,
    profile: ProfileArg,
    sever_at_ms: Option<f64>,
) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let pair = cfg.loop_pair();
    let lc = match profile {
        ProfileArg::Default => pair.default,
        ProfileArg::Adapted => pair.adapted,
    };
    let mut setup = cfg
        .scenario()?
        .trial(
            lc,
            latency_ms.unwrap_or(cfg.channel.mean_delay_ms),
            jitter_ms.unwrap_or(cfg.channel.jitter_ms),
            cfg.sweep.base_seed,
            cfg.sweep.trial_length(),
        );
    setup.sever_feedback_at = sever_at_ms.map(SimTime::from_millis_f64);
    let dir = out_dir(cli)?;
    setup.record_samples = dir.is_some();
    setup.record_events = dir.is_some();
    let report = run_trial(&setup)?;
    if let Some(dir) = dir {
        let path = dir.join("trial.csv");
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_trial_csv(&report.samples, file)?;
        fs::write(dir.join("events.ndjson"), report.events.to_ndjson())?;
        for (name, recs) in [("commands.csv", &report.command_deliveries), ("feedback.csv", &report.feedback_deliveries)] {
            let path = dir.join(name);
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_delivery_csv(recs, file)?;
        }
    }
    let summary = serde_json::json!({
        "verdict": report.verdict,
        "init_completed_us": report.init_completed_at.map(SimTime::as_micros),
        "verified_init": report.verified_init,
        "commands_sent": report.commands_sent,
        "status_received": report.status_received,
        "urllc_ring": report.urllc,
        "sensor_ring": report.sensor,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn spectrum(cli: &Cli, script: Option<&Path>) -> Result<ExitCode> {
    let (parsed, source) = match script {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut parsed = SpectrumScript::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cli.config.is_some() && !text.lines().any(|l| l.trim_start().starts_with("band")) {
                parsed.band = load_config(cli)?.spectrum.script()?.band;
            }
            (parsed, path.display().to_string())
        }
        None => {
            if cli.config.is_none() {
                bail!("give a script file or a --config with [spectrum] requests");
            }
            (load_config(cli)?.spectrum.script()?, "configured requests".to_string())
        }
    };
    let log = run_spectrum_scenario(&parsed).with_context(|| format!("running {source}"))?;
    if let Some(dir) = out_dir(cli)? {
        let mut audit = String::new();
        for rec in &log.audit {
            audit.push_str(&serde_json::to_string(rec)?);
            audit.push('\n');
        }
        fs::write(dir.join("audit.ndjson"), audit)?;
    }
    for e in &log.events {
        let block = e.block_mhz.map_or(String::new(), |(lo, hi)| format!(" [{lo}, {hi}] MHz"));
        println!("{:>10.3} ms  line {:<3} {:<12} {:<16} {}{}", e.time_us as f64 / 1000.0, e.line, e.action, e.requester, e.outcome, block);
    }
    println!("final occupancy:");
    for o in &log.occupancy {
        println!("  ({}, {}): {} MHz across {} grants", o.x, o.y, o.total_mhz, o.grants.len());
    }
    println!("granted {}, rejected {}", log.granted(), log.rejected());
    Ok(ExitCode::SUCCESS)
}

fn run_calibration(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let started = Instant::now();
    let result = calibrate(
        &cfg.calibration,
        &cfg.loop_pair(),
        &cfg.sweep,
        &cfg.scenario()?,
        &reference_table(),
    )?;
    info!("calibration finished in {:.1} s", started.elapsed().as_secs_f64());
    match result {
        Ok(report) => {
            let tuned = cfg.with_loop_pair(&report.pair);
            if let Some(dir) = out_dir(cli)? {
                fs::write(dir.join("calibrated.toml"), tuned.to_toml())?;
                fs::write(dir.join("matrix.csv"), render_matrix(&report.matrix, Format::Csv))?;
            }
            println!("matched after {} candidate(s)", report.candidates_tried);
            println!("{}", serde_json::to_string_pretty(&report.pair)?);
            print!("{}", render_matrix(&report.matrix, Format::Markdown));
            Ok(ExitCode::SUCCESS)
        }
        Err(failure) => {
            eprintln!("calibration failed: {failure}");
            if let Some(m) = &failure.best_matrix {
                eprint!("{}", render_matrix(m, Format::Markdown));
            }
            eprintln!("confusion (rows reference, columns achieved; pass, adapted, fail):");
            for row in failure.confusion {
                eprintln!("  {row:?}");
            }
            Ok(ExitCode::from(2))
        }
    }
}

fn render(input: &Path, format: Format) -> Result<ExitCode> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let matrix = parse_matrix_csv(&text).with_context(|| format!("parsing {}", input.display()))?;
    if matrix.cells.iter().any(|c| !c.is_consistent()) {
        bail!("{}: cell classes disagree with their per-seed verdicts", input.display());
    }
    print!("{}", render_matrix(&matrix, format));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Sweep { manifest, format } => sweep(&cli, manifest.as_deref(), (*format).into()),
        Command::Trial {
            latency_ms,
            jitter_ms,
            profile,
            sever_at_ms,
        } => trial(&cli, *latency_ms, *jitter_ms, *profile, *sever_at_ms),
        Command::Spectrum { script } => spectrum(&cli, script.as_deref()),
        Command::Calibrate => run_calibration(&cli),
        Command::Render { input, format } => render(input, (*format).into()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
