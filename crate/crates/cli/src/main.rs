//! `leafwise`: config-driven runs of the spectral, certificate,
//! integrability and leafwise-chart pipelines.
//!
//! Exit codes: 0 when every declared expectation holds, 1 on a verdict
//! mismatch, 2 on input errors.

mod config;
mod plot;
mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::RunConfig;
use run::{num, Outcome, RunError};

const SCHEMA_VERSION: u32 = 1;
const CSV_HEADER: [&str; 6] = ["x", "y", "t", "re_w", "im_w", "residual"];

#[derive(Parser)]
#[command(name = "leafwise", version, about = "Leafwise conformal analysis of maps between 3D Riemannian domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Eigenvalues, eigen-covectors and the conformal covectors per node.
    Analyze(Args),
    /// Conformality certificates for w+, w- and an optional [omega] field.
    Certify(Args),
    /// Integrability of the two conformal plane fields.
    Integrability(Args),
    /// Isothermal charts on the leaves x3 = t of the source metric.
    Isothermal(Args),
    /// Leafwise holomorphy of the map between isothermal charts.
    Holomorphy(Args),
}

#[derive(clap::Args, Clone)]
struct Args {
    /// Run configuration (INI).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; without it the summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Records)]
    format: Format,
    /// Seed for sampled-direction checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of dyadic refinement levels run after the configured grid.
    #[arg(long, default_value_t = 0)]
    refine: usize,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Format {
    /// Node records (JSONL) plus the summary document.
    Records,
    /// Summary document only.
    Summary,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Certify(_) => "certify",
            Command::Integrability(_) => "integrability",
            Command::Isothermal(_) => "isothermal",
            Command::Holomorphy(_) => "holomorphy",
        }
    }

    fn args(&self) -> &Args {
        match self {
            Command::Analyze(a) | Command::Certify(a) | Command::Integrability(a) | Command::Isothermal(a) | Command::Holomorphy(a) => a,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_outputs(dir: &Path, args: &Args, summary: &Value, out: &Outcome) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    if args.format == Format::Records {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("records.jsonl"))?);
        for r in &out.records {
            writeln!(f, "{r}")?;
        }
        f.flush()?;
    }
    if !out.csv.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("leaves.csv"))?;
        w.write_record(CSV_HEADER)?;
        for row in &out.csv {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    for (name, svg) in &out.plots {
        fs::write(dir.join(name), svg)?;
    }
    Ok(())
}

fn execute(cmd: &Command) -> Result<bool, String> {
    let args = cmd.args();
    let path = args.config.as_ref().ok_or("--config is required")?;
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg = RunConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let result = match cmd {
        Command::Analyze(_) => run::run_analyze(&cfg, args.refine),
        Command::Certify(_) => run::run_certify(&cfg, args.refine, args.seed),
        Command::Integrability(_) => run::run_integrability(&cfg, args.refine),
        Command::Isothermal(_) => run::run_isothermal(&cfg, args.refine),
        Command::Holomorphy(_) => run::run_holomorphy(&cfg, args.refine),
    };
    let out = result.map_err(|RunError(e)| format!("{}: {e}", cmd.name()))?;
    let pass = out.checks.iter().all(|c| c.ok);
    let t = &cfg.tolerances;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": cmd.name(),
        "config_hash": format!("sha256:{}", hex(&Sha256::digest(text.as_bytes()))),
        "seed": args.seed,
        "refine": args.refine,
        "tolerances": {
            "spectral_gap_tol": num(t.spectral_gap_tol),
            "cert_tol": num(t.cert_tol),
            "degenerate_tol": num(t.degenerate_tol),
            "k_max": num(t.k_max),
            "kappa": num(cfg.kappa),
            "samples": cfg.samples,
            "beltrami_rel_tol": num(cfg.beltrami.rel_tol),
            "leaf_tol": num(cfg.holomorphy.leaf_tol),
            "conformality_tol": num(cfg.holomorphy.conformality_tol),
        },
        "levels": out.levels,
        "orders": out.orders,
        "result": out.detail,
        "checks": out.checks.iter().map(|c| json!({
            "name": c.name,
            "expected": c.expected,
            "observed": c.observed,
            "ok": c.ok,
        })).collect::<Vec<_>>(),
        "status": if pass { "pass" } else { "mismatch" },
    });
    match &args.out {
        Some(dir) => {
            write_outputs(dir, args, &summary, &out).map_err(|e| format!("cannot write {}: {e}", dir.display()))?;
            for c in &out.checks {
                println!("{} {}: expected {}, observed {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.expected, c.observed);
            }
            println!("{} {}: {}", cmd.name(), if pass { "pass" } else { "mismatch" }, dir.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes")),
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
