//! `qsd-lab`: run the verification ladder on a problem config and write
//! `report.json`, `run_info.json` and CSV tables.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use qsd_core::report::{sha256_hex, Record};
use serde::Serialize;

use commands::{Context, Op, Table};
use config::{LoadedConfig, Model, ToleranceProfile, Tolerances, CONFIG_SCHEMA_VERSION};
use error::CliError;

const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "qsd-lab",
    version,
    about = "Compute and verify quasi-stationary distributions"
)]
struct Cli {
    /// classify | spectrum | qsd | verify-qsd | doob-check | tightness | yaglom | moments | all
    subcommand: String,
    /// Problem config (JSON).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Interior grid nodes for diffusions.
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ToleranceProfile::Default)]
    tolerance_profile: ToleranceProfile,
}

#[derive(Debug, Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    config_digest: String,
    config_schema: u32,
    seed: u64,
    tolerance_profile: ToleranceProfile,
}

#[derive(Debug, Serialize)]
struct ErrorEntry {
    op: String,
    code: &'static str,
    message: String,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    subcommand: String,
    provenance: Provenance,
    tolerances: Tolerances,
    records: Vec<Record>,
    skipped: Vec<String>,
    errors: Vec<ErrorEntry>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct RunInfo {
    started_unix_ms: u128,
    finished_unix_ms: u128,
    argv: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(if e.is_input() { 1 } else { 2 })
        }
    }
}

/// Runs the requested ops and writes artifacts; returns the exit code.
fn run(cli: &Cli) -> Result<u8, CliError> {
    let started = now_ms();
    let ops: Vec<Op> = match cli.subcommand.as_str() {
        "all" => Op::LADDER.to_vec(),
        s => vec![Op::parse(s).ok_or_else(|| CliError::UnknownSubcommand(s.to_string()))?],
    };
    let loaded = LoadedConfig::load(&cli.config)?;
    let mut grid = loaded.config.grid.clone();
    let mut mc = loaded.config.mc.clone();
    if let Some(n) = cli.grid_n {
        grid.n = n;
    }
    if let Some(s) = cli.seed {
        mc.seed = s;
    }
    if let Some(dt) = cli.dt {
        if !(dt > 0.0) {
            return Err(CliError::ConfigParse(format!("--dt must be > 0, got {dt}")));
        }
        mc.dt = dt;
    }
    if let Some(p) = cli.paths {
        if p == 0 {
            return Err(CliError::ConfigParse("--paths must be ≥ 1".into()));
        }
        mc.n_paths = p;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| loaded.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("qsd-out"));
    let tol = Tolerances::for_profile(cli.tolerance_profile);
    let provenance = Provenance {
        tool: "qsd-lab",
        version: env!("CARGO_PKG_VERSION"),
        config_digest: sha256_hex(&loaded.raw),
        config_schema: CONFIG_SCHEMA_VERSION,
        seed: mc.seed,
        tolerance_profile: cli.tolerance_profile,
    };
    let model = loaded.model()?;
    let is_chain = matches!(model, Model::Chain(_));
    let mut ctx = Context::new(loaded, model, grid, mc, tol);

    let single = ops.len() == 1;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut errors = Vec::new();
    let mut first_error: Option<CliError> = None;
    for op in ops {
        if !single && is_chain && matches!(op, Op::Classify | Op::Tightness) {
            skipped.push(op.name().to_string());
            continue;
        }
        match ctx.run(op) {
            Ok(r) => records.push(r),
            Err(e) => {
                errors.push(ErrorEntry {
                    op: op.name().to_string(),
                    code: e.code(),
                    message: e.to_string(),
                });
                // an input error in a single op has nothing worth reporting
                if single && e.is_input() {
                    return Err(e);
                }
                first_error.get_or_insert(e);
            }
        }
    }
    let passed = errors.is_empty() && records.iter().all(|r| r.passed());
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        subcommand: cli.subcommand.clone(),
        provenance,
        tolerances: tol,
        records,
        skipped,
        errors,
        passed,
    };
    write_artifacts(&out, &report, &ctx.tables, started)?;
    for r in &report.records {
        let verdict = match r.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "DONE",
        };
        println!("{verdict} {}", r.op);
    }
    for e in &report.errors {
        eprintln!("error [{}] in {}: {}", e.code, e.op, e.message);
    }
    println!("report: {}", out.join("report.json").display());
    Ok(match first_error {
        Some(e) if e.is_input() => 1,
        Some(_) => 2,
        None if passed => 0,
        None => 2,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_artifacts(
    out: &Path,
    report: &Report,
    tables: &[Table],
    started: u128,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(report).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    for t in tables {
        let path = out.join(&t.file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(&t.header).map_err(|e| io_err(&path, e))?;
        for row in &t.rows {
            let fields: Vec<String> = row
                .iter()
                .map(|v| {
                    if v.is_finite() {
                        format!("{v:e}")
                    } else {
                        String::new()
                    }
                })
                .collect();
            w.write_record(&fields).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let info = RunInfo {
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        argv: std::env::args().collect(),
    };
    let path = out.join("run_info.json");
    let text = serde_json::to_string_pretty(&info).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(())
}
