use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpmtarget::pipeline::{run_until, RunConfig, RunReport, Stage};

#[derive(Parser)]
#[command(
    name = "rpmtarget",
    version,
    about = "Learn and evaluate capacity-constrained message targeting policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the logged panel.
    Simulate(Common),
    /// Simulate, then filter rows and build control covariates.
    Featurize(Common),
    /// Run through the patient split.
    Split(Common),
    /// Run through representation, nuisance and CATE fitting.
    Fit(Common),
    /// Run through validation and the single test evaluation.
    Evaluate(Common),
    /// Run every stage and write figures and slices.
    Report(Common),
    /// Alias of `report`.
    All(Common),
}

fn summarise(report: &RunReport) {
    println!("stages: {}", report.stages.join(" → "));
    if let Some(f) = report.filter {
        println!("rows: {} total, {} kept", f.total, f.kept);
    }
    for c in &report.cells {
        println!(
            "{:<44} ATT@25% {:>8.4} [{:.4}, {:.4}]  baseline {:>8.4}  AUTOC {:>8.4}",
            c.cell,
            c.att_at_25.point,
            c.att_at_25.lo,
            c.att_at_25.hi,
            c.baseline.point,
            c.autoc.point
        );
    }
    if let Some(t) = &report.test {
        println!("test ({}): ATT@25% = {}", t.cell, t.display);
    }
    println!("{} files written", report.files.len() + 1);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = match cli.command {
        Command::Simulate(c) => (Stage::Simulate, c),
        Command::Featurize(c) => (Stage::Featurize, c),
        Command::Split(c) => (Stage::Split, c),
        Command::Fit(c) => (Stage::Fit, c),
        Command::Evaluate(c) => (Stage::Evaluate, c),
        Command::Report(c) | Command::All(c) => (Stage::Report, c),
    };
    let result = RunConfig::load(&common.config).and_then(|mut config| {
        if let Some(dir) = common.output_dir {
            config.output_dir = dir;
        }
        run_until(&config, stage)
    });
    match result {
        Ok(report) => {
            summarise(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
