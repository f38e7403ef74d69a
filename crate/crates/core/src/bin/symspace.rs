use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use symspace::cartan::{good_frame, iwasawa, StructureSummary};
use symspace::lie::build_algebra;
use symspace::suite::{run_suite, ExperimentSpec, Group, VerificationReport};
use symspace::Error;

#[derive(Parser)]
#[command(
    name = "symspace",
    version,
    about = "Numerical laboratory for L¹ pairings on symmetric spaces of non-compact type"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report.json and report.csv.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the Iwasawa structure and good frame of the configured algebra.
    Structure,
    /// Run the whole verification suite (or the configured groups).
    Verify,
    /// Run the splitting sweeps.
    Split,
    /// Run the pairing checks: main ratio family and codimension-one estimates.
    Pairing,
    /// Run the one-dimensional and manifold Hardy checks.
    Hardy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load(cli: &Cli) -> Result<ExperimentSpec, Error> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::from_path(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(o) = &cli.out {
        spec.output = Some(o.clone());
    }
    Ok(spec)
}

fn structure(spec: &ExperimentSpec, format: Format) -> Result<(), Error> {
    let alg = build_algebra(&spec.algebra)?;
    let iw = iwasawa(&alg, None, spec.seed)?;
    let frame = good_frame(&iw, None)?;
    let summary = StructureSummary::new(&alg, &iw, &frame);
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        ),
        Format::Csv => {
            println!("root,values,multiplicity,positive,simple,grading");
            for (i, r) in summary.roots.iter().enumerate() {
                let pos = summary.positive.iter().position(|&k| k == i);
                let values: Vec<String> = r.values.iter().map(|v| format!("{v:e}")).collect();
                println!(
                    "{i},{},{},{},{},{}",
                    values.join(";"),
                    r.multiplicity(),
                    pos.is_some(),
                    summary.simple.contains(&i),
                    pos.map(|k| summary.grading[k].to_string()).unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}

fn print_report(report: &VerificationReport, format: Format) -> Result<(), Error> {
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Csv => print!("{}", report.to_csv()?),
    }
    eprintln!("{} asserted rows, {} failed", report.asserted, report.failed);
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut spec = load(cli)?;
    let only = match cli.command {
        Command::Structure => {
            structure(&spec, cli.format)?;
            return Ok(0);
        }
        Command::Verify => None,
        Command::Split => Some(Group::Splitting),
        Command::Pairing => Some(Group::Pairing),
        Command::Hardy => Some(Group::Hardy),
    };
    if let Some(g) = only {
        spec.groups = Some(vec![g]);
    }
    let report = run_suite(&spec)?;
    print_report(&report, cli.format)?;
    Ok(report.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error {}: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
