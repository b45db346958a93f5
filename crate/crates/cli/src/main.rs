use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltc_cli::config::split_overrides;
use ltc_cli::report::{self, render_table, SummaryRow};
use ltc_cli::{runner, CliError, Result, RunConfig};

/// On-the-fly category discovery: train, stream, evaluate.
///
/// Any config key can be overridden as `--<key> <value>`, e.g.
/// `--mkee.epsilon 0.1`.
#[derive(Parser)]
#[command(name = "ltc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset as an embeddings CSV plus the split manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write a checkpoint and training record.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Stream the query set through the trained checkpoint.
    Stream {
        #[command(flatten)]
        common: Common,
    },
    /// Score a stream against its ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Stream CSV; with --truth, bypasses the run directory.
        #[arg(long, requires = "truth")]
        stream: Option<PathBuf>,
        #[arg(long, requires = "stream")]
        truth: Option<PathBuf>,
    },
    /// One full run per value of a config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate every run under a directory (default: output.dir).
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn load(common: &Common, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rows: &[SummaryRow]) {
    print!("{}", render_table(rows));
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load(&common, overrides)?;
            let path = runner::synth(&cfg, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Train { common } => {
            let cfg = load(&common, overrides)?;
            let dir = runner::train(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Stream { common } => {
            let cfg = load(&common, overrides)?;
            let dir = runner::stream(&cfg)?;
            println!("{}", dir.join(runner::STREAM_FILE).display());
        }
        Command::Eval {
            common,
            stream,
            truth,
        } => {
            let rep = match (stream, truth) {
                (Some(s), Some(t)) => report::ReportJson::from(&runner::evaluate_files(&s, &t)?),
                _ => runner::eval(&load(&common, overrides)?)?,
            };
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Sweep {
            common,
            axis,
            values,
            jobs,
        } => {
            let cfg = load(&common, overrides)?;
            let rows = runner::sweep(&cfg, &axis, &values, jobs)?;
            let stem = format!("sweep-{}-s{}-{}", cfg.hash(), cfg.seed, axis);
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
            report::write_table_csv(&cfg.output_dir.join(format!("{stem}.csv")), &rows)?;
            print_rows(&rows);
        }
        Command::Report { common, dir } => {
            let cfg = load(&common, overrides)?;
            let dir = dir.unwrap_or(cfg.output_dir);
            let rows = runner::collect_reports(&dir)?;
            report::write_table_csv(&dir.join("summary.csv"), &rows)?;
            print_rows(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (overrides, rest) = match split_overrides(&args[1..]) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once(args[0].clone()).chain(rest)) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
