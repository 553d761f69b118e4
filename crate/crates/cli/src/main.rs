use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msspeech_cli::{cmd_extract, cmd_glm, cmd_ks, cmd_synth, cmd_train, cmd_validate, CliError, Format, RunConfig};

#[derive(Parser)]
#[command(name = "msspeech", version, about = "Speech-feature extraction, statistics and classification")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format; overrides the configured one.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Primary output file (directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manifest of WAV + annotation files to a feature table.
    Extract { manifest: PathBuf },
    /// Correlate automatic features with a reference table.
    Validate { auto: PathBuf, reference: PathBuf },
    /// Case versus control K-S tests.
    Ks { table: PathBuf },
    /// Logistic regression on the model vector.
    Glm { table: PathBuf },
    /// Cross-validated classifier battery.
    Train { table: PathBuf },
    /// Synthetic cohort with manifest.
    Synth {
        /// Cohort spec (TOML or JSON); defaults apply when omitted.
        spec: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    let ext = match cfg.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let out = |stem: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{stem}.{ext}")));
    match &cli.command {
        Command::Extract { manifest } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("features.csv"));
            let s = cmd_extract(manifest, &cfg, &out)?;
            eprintln!(
                "extracted {}/{} subjects into {} (QC log {})",
                s.n_extracted,
                s.n_rows,
                out.display(),
                s.qc_log.display()
            );
            for (id, why) in &s.excluded {
                eprintln!("excluded {id}: {why}");
            }
        }
        Command::Validate { auto, reference } => {
            cmd_validate(auto, reference, &cfg, &out("validation"))?;
        }
        Command::Ks { table } => {
            cmd_ks(table, &cfg, &out("ks"))?;
        }
        Command::Glm { table } => {
            let rows = cmd_glm(table, &cfg, &out("glm"))?;
            if rows.first().is_some_and(|r| !r.converged) {
                eprintln!("warning: logistic regression did not converge (possible separation)");
            }
        }
        Command::Train { table } => {
            cmd_train(table, &cfg, &out("train"))?;
        }
        Command::Synth { spec } => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("cohort"));
            let manifest = cmd_synth(spec.as_deref(), cli.seed, &dir)?;
            eprintln!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
