use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fairsynth_cli::config::{DatasetKind, PipelineConfig};
use fairsynth_cli::{ingest, pipeline, report};

#[derive(Parser)]
#[command(name = "fairsynth", about = "Private and fairness-aware tabular data synthesis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a raw dataset, printing its schema and size.
    Ingest {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long)]
        csv: PathBuf,
        /// Print the first N encoded rows.
        #[arg(long, default_value_t = 0)]
        peek: usize,
    },
    /// Run the full experiment grid of a config and write summary CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for repeats (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the distortion-bound sensitivity sweep of a config.
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Measure generation wall-clock across sample sizes and attribute sets.
    Timing {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Pretty-print a summary.csv as a metrics-by-cells table.
    Report {
        #[arg(long)]
        summary: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Dataset {
    Adult,
    Compas,
    German,
}

impl From<Dataset> for DatasetKind {
    fn from(d: Dataset) -> Self {
        match d {
            Dataset::Adult => DatasetKind::Adult,
            Dataset::Compas => DatasetKind::Compas,
            Dataset::German => DatasetKind::German,
        }
    }
}

fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load_config(
    path: &Path,
    repeats: Option<usize>,
    output_dir: Option<PathBuf>,
) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(r) = repeats {
        config.repeats = r;
    }
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    config.validate()?;
    Ok(config)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { dataset, csv, peek } => {
            let d = ingest::ingest(dataset.into(), &csv)?;
            println!("rows: {}", d.n_rows());
            println!("domain cells: {}", d.schema().domain_size());
            for (i, attr) in d.schema().attributes().iter().enumerate() {
                println!(
                    "attr {i}: {} ({:?}, {} levels): {}",
                    attr.name,
                    attr.role,
                    attr.levels.len(),
                    attr.levels.join(", ")
                );
            }
            for i in 0..peek.min(d.n_rows()) {
                println!("row {i}: {:?}", d.row(i));
            }
            Ok(true)
        }
        Command::Run { config, repeats, output_dir, jobs } => {
            configure_jobs(jobs)?;
            let config = load_config(&config, repeats, output_dir)?;
            let output = pipeline::run_pipeline(&config)?;
            pipeline::write_outputs(&output, &config.output_dir)?;
            println!(
                "wrote {} and {}",
                config.output_dir.join("summary.csv").display(),
                config.output_dir.join("long.csv").display()
            );
            report_errors(&output)
        }
        Command::Sensitivity { config, repeats, output_dir, jobs } => {
            configure_jobs(jobs)?;
            let config = load_config(&config, repeats, output_dir)?;
            let output = pipeline::run_sensitivity(&config)?;
            pipeline::write_outputs(&output, &config.output_dir)?;
            println!("wrote {}", config.output_dir.join("summary.csv").display());
            report_errors(&output)
        }
        Command::Timing { config, output_dir } => {
            let config = load_config(&config, None, output_dir)?;
            let rows = pipeline::run_timing(&config)?;
            pipeline::write_timing(&rows, &config.output_dir)?;
            for r in &rows {
                println!(
                    "n={} features=[{}]: {:.3} ({:.3}) seconds",
                    r.n, r.features, r.mean_seconds, r.sd_seconds
                );
            }
            Ok(true)
        }
        Command::Report { summary } => {
            print!("{}", report::print_summary(&summary)?);
            Ok(true)
        }
    }
}

fn report_errors(output: &pipeline::ExperimentOutput) -> Result<bool> {
    for cell in &output.cells {
        if cell.n_infeasible > 0 {
            eprintln!(
                "note: cell (epsilon={:?}, fairness={}) had {} infeasible repeat(s)",
                cell.cell.epsilon,
                cell.cell.fairness.label(),
                cell.n_infeasible
            );
        }
    }
    if output.errors.is_empty() {
        return Ok(true);
    }
    eprintln!("{} repeat(s) failed:", output.errors.len());
    for e in &output.errors {
        eprintln!("  {e}");
    }
    Ok(false)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
