use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_traits::ToPrimitive;
use serde::Serialize;

use dilute_saw::experiments::{
    annealed_constant, run_all_verifications, run_bridge_experiment, run_good_spine_experiment,
    run_quenched_estimate, threshold_table, ExperimentConfig, VerifyOptions,
};
use dilute_saw::paths::{count_saw, count_saw_no4};
use dilute_saw::refwalks::{pi1_saw_probability_exact, u_statistics_under, WalkKind, WalkLaw};
use dilute_saw::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Walk {
    /// Uniform self-avoiding walk, classified as a spine.
    Saw,
    Simple,
    Pi1,
    Pi2,
}

#[derive(Debug, Parser)]
#[command(name = "dilute-saw", version, about = "Self-avoiding walks on bond-percolation clusters")]
struct Cli {
    /// Lattice dimension (the largest dimension for `thresholds`).
    #[arg(long, global = true, default_value_t = 3)]
    d: usize,
    /// Path length, or the largest length for `enum` and `quenched`.
    #[arg(long, global = true, default_value_t = 10)]
    n: usize,
    /// Open-edge probability.
    #[arg(long, global = true, default_value_t = 0.5)]
    p: f64,
    #[arg(long, global = true, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, global = true, default_value_t = 100)]
    trials: u64,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every exact oracle; exit status 1 if any case fails.
    Verify,
    /// Exact counts for N = 1..n.
    Enum,
    /// Census statistics of sampled walks.
    Census {
        #[arg(long, value_enum, default_value_t = Walk::Saw)]
        walk: Walk,
    },
    /// Bridge sets and floors over good spines.
    Bridges,
    /// Quenched growth sequences Z_N^{1/N}.
    Quenched,
    /// Expansion evaluators for d = 2..d.
    Thresholds,
}

#[derive(Debug, Serialize)]
struct EnumRow {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    saw: String,
    saw_no4: String,
    pi1_saw_probability: f64,
    annealed_mean: f64,
}

fn emit_rows<T: Serialize>(rows: &[T], format: Format, out: &mut dyn Write) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => emit_json(&rows, out)?,
    }
    Ok(())
}

fn emit_json<T: Serialize + ?Sized>(value: &T, out: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| Error::Serialization(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn config(cli: &Cli) -> ExperimentConfig {
    ExperimentConfig { d: cli.d, n: cli.n, p: cli.p, eps: cli.eps, trials: cli.trials, seed: cli.seed }
}

fn enum_rows(cli: &Cli) -> Result<Vec<EnumRow>> {
    (1..=cli.n)
        .map(|n| {
            let saw = count_saw(cli.d, n)?;
            let annealed_mean = cli.p.powi(n as i32) * saw.to_f64().unwrap_or(f64::INFINITY);
            Ok(EnumRow {
                d: cli.d,
                n,
                saw: saw.to_string(),
                saw_no4: count_saw_no4(cli.d, n)?.to_string(),
                pi1_saw_probability: pi1_saw_probability_exact(cli.d, n)?.to_f64().unwrap_or(f64::NAN),
                annealed_mean,
            })
        })
        .collect()
}

/// Returns whether the command succeeded in the exit-status sense.
fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Verify => {
            let manifest = run_all_verifications(VerifyOptions::default());
            match cli.format {
                Format::Json => emit_json(&manifest, out)?,
                Format::Csv => emit_rows(&manifest.cases, Format::Csv, out)?,
            }
            for case in manifest.failures() {
                eprintln!("FAIL {}: {}", case.name, case.detail);
            }
            Ok(manifest.passed())
        }
        Command::Enum => {
            emit_rows(&enum_rows(cli)?, cli.format, out)?;
            Ok(true)
        }
        Command::Census { walk } => {
            let kind = match walk {
                Walk::Saw => {
                    let report = run_good_spine_experiment(&config(cli))?;
                    match cli.format {
                        Format::Json => emit_json(&report, out)?,
                        Format::Csv => emit_rows(&report.rows, Format::Csv, out)?,
                    }
                    return Ok(true);
                }
                Walk::Simple => WalkKind::Simple,
                Walk::Pi1 => WalkKind::Pi1,
                Walk::Pi2 => WalkKind::Pi2,
            };
            let rows = u_statistics_under(WalkLaw::new(kind, cli.d, cli.n)?, cli.trials, cli.seed)?;
            emit_rows(&rows, cli.format, out)?;
            Ok(true)
        }
        Command::Bridges => {
            let report = run_bridge_experiment(&config(cli))?;
            match cli.format {
                Format::Json => emit_json(&report, out)?,
                Format::Csv => emit_rows(&report.census_rows(), Format::Csv, out)?,
            }
            Ok(true)
        }
        Command::Quenched => {
            let report = run_quenched_estimate(&config(cli))?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            match cli.format {
                Format::Json => emit_json(&report, out)?,
                Format::Csv => emit_rows(&report.rows, Format::Csv, out)?,
            }
            Ok(true)
        }
        Command::Thresholds => {
            let rows = threshold_table(cli.d, cli.eps)?;
            match cli.format {
                Format::Json => {
                    #[derive(Serialize)]
                    struct Thresholds<'a> {
                        eps: f64,
                        annealed_p: f64,
                        annealed: f64,
                        rows: &'a [dilute_saw::experiments::ThresholdRow],
                    }
                    let annealed = annealed_constant(cli.d.max(2), cli.p)?.value;
                    emit_json(&Thresholds { eps: cli.eps, annealed_p: cli.p, annealed, rows: &rows }, out)?
                }
                Format::Csv => emit_rows(&rows, Format::Csv, out)?,
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let result = pool.install(|| -> Result<bool> {
        let mut sink: Box<dyn Write> = match &cli.out {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        let ok = run(&cli, &mut *sink)?;
        sink.flush()?;
        Ok(ok)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
