//! `gridsched` command line.
//!
//! Exit codes: 0 success, 1 validation or report error, 2 scenario config error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridsched::profiles::{parse_application_profile, parse_computer_profile};
use gridsched::simkernel::{self, ConfigError, ExecutionModel, Policy, RunReport, Scenario};

const EXIT_INVALID: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "gridsched", version, about = "Profile-driven Grid scheduling simulator")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check computer or application profile XML files.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run a scenario and write its report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        execution_model: Option<ExecutionModel>,
        /// Report JSON destination.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Write the volatile-sample time series CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the accounting log (JSON lines) here.
        #[arg(long)]
        accounting: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Compare run reports side by side.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.cmd {
        Cmd::Validate { paths } => cmd_validate(&paths),
        Cmd::Simulate {
            scenario,
            seed,
            policy,
            execution_model,
            out,
            traces,
            csv,
            accounting,
            quiet,
        } => {
            let outputs = Outputs {
                report: out,
                traces,
                csv,
                accounting,
            };
            cmd_simulate(&scenario, seed, policy, execution_model, &outputs, quiet)
        }
        Cmd::Report { paths, csv } => cmd_report(&paths, csv.as_deref()),
    }
}

fn cmd_validate(paths: &[PathBuf]) -> ExitCode {
    let mut ok = true;
    for path in paths {
        match validate_one(path) {
            Ok(()) => println!("{}: OK", path.display()),
            Err(e) => {
                ok = false;
                println!("{}: {e}", path.display());
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    }
}

fn validate_one(path: &Path) -> Result<(), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read: {e}"))?;
    let res = if text.contains("<applicationProfile") {
        parse_application_profile(&text).map(|_| ())
    } else {
        parse_computer_profile(&text).map(|_| ())
    };
    res.map_err(|e| e.to_string())
}

struct Outputs {
    report: PathBuf,
    traces: Option<PathBuf>,
    csv: Option<PathBuf>,
    accounting: Option<PathBuf>,
}

fn cmd_simulate(
    path: &Path,
    seed: Option<u64>,
    policy: Option<Policy>,
    model: Option<ExecutionModel>,
    outputs: &Outputs,
    quiet: bool,
) -> ExitCode {
    let mut scenario = match Scenario::from_path(path) {
        Ok(s) => s,
        Err(e) => return config_error(&e),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(p) = policy {
        scenario.policy = p;
    }
    if let Some(m) = model {
        scenario.execution_model = m;
    }
    let out = match simkernel::run(&scenario) {
        Ok(out) => out,
        Err(e) => return config_error(&e),
    };

    let mut writes = vec![(outputs.report.as_path(), out.report.to_json() + "\n")];
    if let Some(p) = &outputs.traces {
        writes.push((p, out.trace_jsonl()));
    }
    if let Some(p) = &outputs.csv {
        writes.push((p, out.series.clone()));
    }
    if let Some(p) = &outputs.accounting {
        writes.push((p, out.log.to_jsonl()));
    }
    for (p, body) in writes {
        if let Err(e) = write_atomic(p, body.as_bytes()) {
            eprintln!("error: cannot write {}: {e}", p.display());
            return ExitCode::from(EXIT_INVALID);
        }
    }

    if !quiet {
        let m = &out.report.metrics;
        println!(
            "{} [{} / {}] seed {}: jobs {}, on-time {:.1}%, rejects {}, misses {}",
            out.report.name,
            scenario.policy.as_str(),
            scenario.execution_model.as_str(),
            scenario.seed,
            m.jobs_arrived,
            100.0 * m.on_time_fraction,
            m.rejected,
            m.deadline_misses
        );
    }
    ExitCode::SUCCESS
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

/// Writes through a sibling temp file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn load_report(path: &Path) -> Result<RunReport, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read: {e}"))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

type Row = (&'static str, fn(&RunReport) -> String);

const ROWS: &[Row] = &[
    ("policy", |r| r.policy.as_str().into()),
    ("execution_model", |r| r.execution_model.as_str().into()),
    ("seed", |r| r.seed.to_string()),
    ("duration_s", |r| r.duration_s.to_string()),
    ("jobs_arrived", |r| r.metrics.jobs_arrived.to_string()),
    ("admitted", |r| r.metrics.admitted.to_string()),
    ("rejected", |r| r.metrics.rejected.to_string()),
    ("completed", |r| r.metrics.completed.to_string()),
    ("on_time", |r| r.metrics.on_time.to_string()),
    ("deadline_misses", |r| r.metrics.deadline_misses.to_string()),
    ("miss_rate", |r| format!("{:.4}", r.metrics.miss_rate)),
    ("on_time_fraction", |r| format!("{:.4}", r.metrics.on_time_fraction)),
    ("integrity_alerts", |r| r.metrics.integrity_alerts.to_string()),
    ("retries", |r| r.metrics.retries.to_string()),
    ("messages", |r| r.metrics.messages.total.to_string()),
    ("mean_utilization", |r| {
        let n = r.per_node.len().max(1) as f64;
        format!("{:.4}", r.per_node.iter().map(|p| p.utilization).sum::<f64>() / n)
    }),
];

fn cmd_report(paths: &[PathBuf], csv: Option<&Path>) -> ExitCode {
    let mut reports = Vec::new();
    for p in paths {
        match load_report(p) {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("BadReport: {}: {e}", p.display());
                return ExitCode::from(EXIT_INVALID);
            }
        }
    }
    let headers: Vec<String> = paths
        .iter()
        .zip(&reports)
        .map(|(p, r)| {
            if r.name.is_empty() {
                p.display().to_string()
            } else {
                format!("{} ({})", r.name, r.policy.as_str())
            }
        })
        .collect();
    let cells: Vec<Vec<String>> = ROWS
        .iter()
        .map(|(_, f)| reports.iter().map(f).collect())
        .collect();

    let label_w = ROWS.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let col_w: Vec<usize> = (0..reports.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain([headers[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut table = format!("{:<label_w$}", "metric");
    for (h, w) in headers.iter().zip(&col_w) {
        let _ = write!(table, "  {h:>w$}");
    }
    table.push('\n');
    for ((name, _), row) in ROWS.iter().zip(&cells) {
        let _ = write!(table, "{name:<label_w$}");
        for (v, w) in row.iter().zip(&col_w) {
            let _ = write!(table, "  {v:>w$}");
        }
        table.push('\n');
    }
    print!("{table}");

    if let Some(path) = csv {
        let mut out = String::from("metric");
        for h in &headers {
            out.push(',');
            out.push_str(&csv_field(h));
        }
        out.push('\n');
        for ((name, _), row) in ROWS.iter().zip(&cells) {
            out.push_str(name);
            for v in row {
                out.push(',');
                out.push_str(&csv_field(v));
            }
            out.push('\n');
        }
        if let Err(e) = write_atomic(path, out.as_bytes()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_INVALID);
        }
    }
    ExitCode::SUCCESS
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
