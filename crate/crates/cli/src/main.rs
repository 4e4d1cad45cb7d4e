use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histroad::ckmeans::Scope;
use histroad::io::{Overrides, RunConfig, SamplingConfig};
use histroad::pipeline::{self, Command, PipelineError};
use histroad::roi::{RoiOptions, DEFAULT_OOB_LIMIT};
use histroad::synth::{ScenarioFile, SweepGrid};

#[derive(Parser)]
#[command(name = "histroad", version, about = "Detect contemporary roads on georeferenced historical maps")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone, Default)]
struct Tuning {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Clustering scope: sheet or area.
    #[arg(long)]
    scope: Option<Scope>,
    /// Cross-section spacing in metres.
    #[arg(long)]
    csd: Option<f64>,
    /// Cross-section length in metres.
    #[arg(long)]
    csl: Option<f64>,
    #[arg(long = "target-h")]
    target_h: Option<usize>,
    #[arg(long = "target-w")]
    target_w: Option<usize>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            scope: self.scope,
            csd_m: self.csd,
            csl_m: self.csl,
            target_h: self.target_h,
            target_w: self.target_w,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the overlap indicator for every segment and epoch.
    Roi(RunArgs),
    /// Split indicators into historical and recent roads.
    Cluster(RunArgs),
    /// Accuracy against manual labels and built-up-area references.
    Evaluate(RunArgs),
    /// Epoch-to-epoch transitions, length change and indicator histograms.
    Temporal(RunArgs),
    /// Run every stage and write all tables.
    Pipeline(RunArgs),
    /// Render a synthetic study area from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sweep sampling parameters over a synthetic scenario.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with csd_m, csl_m, target_h and target_w lists.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
}

fn read_config_file(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<ScenarioFile, PipelineError> {
    ScenarioFile::from_json(&read_config_file(path)?)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn run_config(args: &RunArgs, command: Command) -> Result<(), PipelineError> {
    let cfg = RunConfig::load(&args.config, &args.tuning.overrides())?;
    let summary = pipeline::run(&cfg, command)?;
    for (epoch, n, invalid) in &summary.epochs {
        let hist = summary
            .historical
            .get(epoch)
            .map_or(String::new(), |h| format!(", {h} historical"));
        println!("epoch {epoch}: {n} segments, {invalid} invalid{hist}");
    }
    println!("wrote {} outputs to {}", summary.outputs.len(), cfg.output.display());
    Ok(())
}

fn run_sweep(scenario: &Path, output: &Path, grid: Option<&Path>, tuning: &Tuning) -> Result<(), PipelineError> {
    let scenario = load_scenario(scenario)?;
    let grid: SweepGrid = match grid {
        Some(p) => toml::from_str(&read_config_file(p)?)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?,
        None => SweepGrid::default(),
    };
    let mut sampling = SamplingConfig::default();
    tuning.overrides().apply_sampling(&mut sampling);
    let params = sampling.params();
    params.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let workers = tuning.workers.unwrap_or(1);
    if workers == 0 {
        return Err(PipelineError::Config("workers must be at least 1".into()));
    }
    let base = RoiOptions {
        params,
        global_seed: tuning.seed.unwrap_or(0),
        oob_limit: DEFAULT_OOB_LIMIT,
    };
    let outputs = pipeline::sweep_fixture(&scenario, &grid, &base, workers, output)?;
    println!("wrote {} outputs to {}", outputs.len(), output.display());
    Ok(())
}

fn dispatch(cmd: &Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::Roi(a) => run_config(a, Command::Roi),
        Cmd::Cluster(a) => run_config(a, Command::Cluster),
        Cmd::Evaluate(a) => run_config(a, Command::Evaluate),
        Cmd::Temporal(a) => run_config(a, Command::Temporal),
        Cmd::Pipeline(a) => run_config(a, Command::Pipeline),
        Cmd::Synth { scenario, output } => {
            let outputs = pipeline::synth_fixture(&load_scenario(scenario)?, output)?;
            println!("wrote {} files to {}", outputs.len(), output.display());
            Ok(())
        }
        Cmd::Sweep {
            scenario,
            output,
            grid,
            tuning,
        } => run_sweep(scenario, output, grid.as_deref(), tuning),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
