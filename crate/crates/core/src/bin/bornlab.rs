use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bornlab::cli::{run, validate, OutputFormat, EXIT_CONFIG};
use clap::Parser;

/// Runs a bornlab scenario file and writes its table.
#[derive(Parser)]
#[command(name = "bornlab", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's output path; `-` writes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's output format.
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Suppresses the summary line and warnings.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let (mut config, warnings) = match validate(&text) {
        Ok(v) => v,
        Err(errors) => {
            for e in errors {
                eprintln!("error: {}: {e}", args.config.display());
            }
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if !args.quiet {
        for w in warnings.iter().filter(|w| !(args.seed.is_some() && w.contains("`seed`"))) {
            eprintln!("warning: {w}");
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(fmt) = args.format.as_deref().and_then(OutputFormat::parse) {
        config.output_format = fmt;
    }
    if let Some(out) = args.out {
        config.output_path = (out.as_os_str() != "-").then_some(out);
    }

    let output = run(&config);
    if !output.artifact.is_empty() {
        let written = match &config.output_path {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    let _ = std::fs::create_dir_all(dir);
                }
                std::fs::write(path, &output.artifact)
            }
            None => std::io::stdout().write_all(&output.artifact),
        };
        if let Err(e) = written {
            // An unwritable output path is a configuration problem.
            eprintln!("error: cannot write artifact: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    if !args.quiet || output.exit_code != 0 {
        // Keep stdout clean when it carries the artifact.
        if config.output_path.is_some() && output.exit_code == 0 {
            println!("{}", output.summary);
        } else {
            eprintln!("{}", output.summary);
        }
    }
    ExitCode::from(output.exit_code as u8)
}
