//! `ghg`: synthetic panels, cleaning, training, evaluation, prediction,
//! explanation, polishing and provider comparison from one binary.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ghg_core::polish::ShapSpace;

use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit 1.
    Usage(String),
    /// Errors from the pipeline: exit 2 for data and model problems, 1 for
    /// invalid settings.
    Data(ghg_core::Error),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(ghg_core::Error::InvalidConfig(_)) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn report(&self) -> String {
        match self {
            CliError::Usage(m) => format!("error_code=usage {m}"),
            CliError::Data(e) => format!("error_code={} {e}", e.code()),
        }
    }
}

impl From<ghg_core::Error> for CliError {
    fn from(e: ghg_core::Error) -> Self {
        CliError::Data(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ghg", version, about = "Estimate corporate scope 1 and 2 emissions with gradient-boosted trees")]
struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON file with default values for any flag.
    #[arg(long, global = true, env = "GHG_CONFIG")]
    config: Option<PathBuf>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel with known ground truth.
    Synth(SynthArgs),
    /// Remove unexplained jumps and superseded reports from a panel.
    Clean(CleanArgs),
    /// Select hyperparameters by company-wise CV and fit a model.
    Train(TrainArgs),
    /// Run the repeated held-out evaluation protocol.
    Evaluate(EvaluateArgs),
    /// Estimate emissions for every row of a panel.
    Predict(PredictArgs),
    /// Export Shapley attributions, importances and dependence tables.
    Explain(ExplainArgs),
    /// Drop small SHAP-space clusters within sectors.
    Polish(PolishArgs),
    /// Score point-in-time estimates against other providers.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    /// Panel file (CSV, or JSON by extension).
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Corporate actions CSV (company_id, year, amount).
    #[arg(long)]
    actions: Option<PathBuf>,
    /// Country-year table joined onto the panel.
    #[arg(long)]
    regional: Option<PathBuf>,
}

impl Inputs {
    fn apply(&self, s: &mut Settings) {
        s.panel = self.panel.clone();
        s.actions = self.actions.clone();
        s.regional = self.regional.clone();
    }
}

#[derive(Debug, Args)]
struct Protocol {
    /// s1 or s2.
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Share of last-year reporters held out per test set.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// JSON array of hyperparameter points replacing the default grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Use the 18-point grid.
    #[arg(long)]
    quick: bool,
    /// Keep jumps in the reported series.
    #[arg(long)]
    skip_cleaning: bool,
}

impl Protocol {
    fn apply(&self, s: &mut Settings) {
        s.scope = self.scope.clone();
        s.k = self.k;
        s.test_fraction = self.test_fraction;
        s.grid = self.grid.clone();
        s.quick = self.quick.then_some(true);
        s.skip_cleaning = self.skip_cleaning.then_some(true);
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    companies: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the log10 disturbance.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    first_year: Option<i32>,
    #[arg(long)]
    last_year: Option<i32>,
    /// Share of reporters given an unexplained x3 jump.
    #[arg(long)]
    jump_fraction: Option<f64>,
    /// Share of reporters given an acquisition.
    #[arg(long)]
    action_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    protocol: Protocol,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    protocol: Protocol,
    /// Comma-separated test-set seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Panel whose rows are estimated.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    regional: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    inputs: Inputs,
    /// Explain this many evenly spaced rows instead of all.
    #[arg(long)]
    rows: Option<usize>,
    /// Background rows for the attributions.
    #[arg(long)]
    background: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PolishArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    protocol: Protocol,
    /// Model fit on this panel; trained here when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Complete-linkage distance threshold in SHAP units.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// BICS level of the sectors clustered separately.
    #[arg(long)]
    level: Option<usize>,
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
    #[arg(long)]
    background: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also compare held-out metrics before and after polishing.
    #[arg(long)]
    evaluate: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SpaceArg {
    Scalar,
    Full,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    protocol: Protocol,
    /// Provider estimate CSVs (provider, company_id, year, value, point_in_time).
    #[arg(long = "providers", num_args = 1..)]
    providers: Option<Vec<PathBuf>>,
    /// Year whose first-time reporters serve as ground truth.
    #[arg(long)]
    truth_year: Option<i32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Clean(_) => "clean",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::Explain(_) => "explain",
            Command::Polish(_) => "polish",
            Command::Compare(_) => "compare",
        }
    }

    fn flags(&self) -> Settings {
        let mut s = Settings::default();
        match self {
            Command::Synth(a) => {
                s.out = a.out.clone();
                s.companies = a.companies;
                s.seed = a.seed;
                s.noise = a.noise;
                s.first_year = a.first_year;
                s.last_year = a.last_year;
                s.jump_fraction = a.jump_fraction;
                s.action_fraction = a.action_fraction;
            }
            Command::Clean(a) => {
                a.inputs.apply(&mut s);
                s.out = a.out.clone();
            }
            Command::Train(a) => {
                a.inputs.apply(&mut s);
                a.protocol.apply(&mut s);
                s.seed = a.seed;
                s.out = a.out.clone();
            }
            Command::Evaluate(a) => {
                a.inputs.apply(&mut s);
                a.protocol.apply(&mut s);
                s.seeds = a.seeds.clone();
                s.out = a.out.clone();
            }
            Command::Predict(a) => {
                s.model = a.model.clone();
                s.input = a.input.clone();
                s.regional = a.regional.clone();
                s.out = a.out.clone();
            }
            Command::Explain(a) => {
                a.inputs.apply(&mut s);
                s.model = a.model.clone();
                s.rows = a.rows;
                s.background = a.background;
                s.seed = a.seed;
                s.out = a.out.clone();
            }
            Command::Polish(a) => {
                a.inputs.apply(&mut s);
                a.protocol.apply(&mut s);
                s.model = a.model.clone();
                s.threshold = a.threshold;
                s.min_cluster_size = a.min_cluster_size;
                s.level = a.level;
                s.space = a.space.map(|v| match v {
                    SpaceArg::Scalar => ShapSpace::SectorFeatureScalar,
                    SpaceArg::Full => ShapSpace::FullVector,
                });
                s.background = a.background;
                s.seed = a.seed;
                s.evaluate = a.evaluate.then_some(true);
                s.seeds = a.seeds.clone();
                s.out = a.out.clone();
            }
            Command::Compare(a) => {
                a.inputs.apply(&mut s);
                a.protocol.apply(&mut s);
                s.providers = a.providers.clone();
                s.truth_year = a.truth_year;
                s.seed = a.seed;
                s.out = a.out.clone();
            }
        }
        s
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) if !path.as_os_str().is_empty() => Settings::load(path)?,
        _ => Settings::default(),
    };
    let mut flags = cli.command.flags();
    flags.jobs = cli.jobs;
    let settings = file.overlay(&flags);
    let jobs = settings.jobs.unwrap_or(0);
    let name = cli.command.name();
    ghg_core::par::with_jobs(jobs, || commands::dispatch(name, &settings))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error_code=usage {}", e.to_string().trim_end());
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
