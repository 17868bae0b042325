mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repurpose_core::Error;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Parser)]
#[command(
    name = "repurpose",
    version,
    about = "Quantitative evidence for purpose-compatibility assessments of rating data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a dataset; write summary statistics to <out>/stats.json.
    Ingest(IngestArgs),
    /// Genre link matrix (CSV and SVG heatmap) and optional threshold decision.
    Links(LinksArgs),
    /// Sensitive-attribute predictability before and after adding a genre.
    Probe(ProbeArgs),
    /// Reidentification risk of the rating profiles.
    Risk(RiskArgs),
    /// Recommender impact of adding a genre to the catalogue.
    Impact(ImpactArgs),
    /// Feed rating batches through the drift monitor.
    Monitor(MonitorArgs),
    /// Manage assessment records in a registry store.
    #[command(subcommand)]
    Assess(AssessCommand),
    /// Render a decided assessment record as text.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Directory with u.data, u.item, u.user and u.genre.
    Movielens,
    /// Directory with ratings.csv, items.csv and optionally users.csv.
    Generic,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset layout.
    #[arg(long, value_enum, default_value_t = Format::Movielens)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Random seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Genres of the existing purpose, comma separated. Defaults to every
    /// analysis genre except --new-genre.
    #[arg(long, value_delimiter = ',')]
    pub existing_genres: Option<Vec<String>>,
    /// Genre of the new purpose.
    #[arg(long)]
    pub new_genre: String,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Conditional,
    Jaccard,
    Spearman,
}

#[derive(Debug, Args)]
pub struct LinksArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Link measure.
    #[arg(long, value_enum, default_value_t = MeasureArg::Conditional)]
    pub measure: MeasureArg,
    /// Compatibility threshold applied when --new-genre is given.
    #[arg(long, default_value_t = repurpose_core::links::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Genres of the existing purpose, comma separated (with --new-genre).
    #[arg(long, value_delimiter = ',', requires = "new_genre")]
    pub existing_genres: Option<Vec<String>>,
    /// New genre to decide on against each existing genre.
    #[arg(long)]
    pub new_genre: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttributeArg {
    Gender,
    AgeBand,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Attribute to predict.
    #[arg(long, value_enum, default_value_t = AttributeArg::Gender)]
    pub attribute: AttributeArg,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Pairs the adversary knows: a count or "full".
    #[arg(long, default_value = "full")]
    pub known_pairs: String,
    /// Rating tolerance when matching.
    #[arg(long, default_value_t = 0)]
    pub tolerance: u8,
    /// Number of sampled targets.
    #[arg(long, default_value_t = repurpose_core::safeguards::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Known-pair counts for <out>/risk_curve.csv, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub curve: Vec<usize>,
    /// Release a copy with each rating moved by one step with this probability.
    #[arg(long, conflicts_with = "suppress")]
    pub jitter: Option<f64>,
    /// Release a copy with each rating dropped with this probability.
    #[arg(long)]
    pub suppress: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ImpactArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Length of the recommendation lists.
    #[arg(long, default_value_t = repurpose_core::impact::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Fraction of ratings held out for RMSE.
    #[arg(long, default_value_t = repurpose_core::impact::DEFAULT_HOLDOUT)]
    pub holdout: f64,
    /// Neighbours per prediction.
    #[arg(long, default_value_t = repurpose_core::impact::DEFAULT_NEIGHBORS)]
    pub neighbors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    MeanShiftZ,
    Ks,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Rating batch files (ratings.csv layout), in arrival order.
    #[arg(long, num_args = 1.., required = true)]
    pub batches: Vec<PathBuf>,
    /// Significance level after Bonferroni correction.
    #[arg(long, default_value_t = repurpose_core::monitor::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Two-sample test.
    #[arg(long, value_enum, default_value_t = TestArg::MeanShiftZ)]
    pub test: TestArg,
    /// Reference window in batches.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Smaller batches are buffered until enough ratings arrive.
    #[arg(long, default_value_t = repurpose_core::monitor::DEFAULT_MIN_BATCH)]
    pub min_batch: usize,
    /// Registry store; when given, alerts file re-assessment drafts there.
    #[arg(long, requires = "new_genre")]
    pub store: Option<PathBuf>,
    /// Genres of the existing purpose for re-assessment drafts.
    #[arg(long, value_delimiter = ',')]
    pub existing_genres: Option<Vec<String>>,
    /// New genre for re-assessment drafts.
    #[arg(long)]
    pub new_genre: Option<String>,
    /// Length of the recommendation lists in re-assessment drafts.
    #[arg(long, default_value_t = repurpose_core::impact::DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Registry store directory (created if missing).
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AssessCommand {
    /// Open a pending assessment and print its record id.
    Open(OpenArgs),
    /// Attach an evidence file produced by another command.
    Attach(AttachArgs),
    /// Record the assessor's view on one criterion.
    Manual(ManualArgs),
    /// Record the overall decision.
    Decide(DecideArgs),
    /// List records.
    List(StoreArgs),
}

#[derive(Debug, Args)]
pub struct OpenArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Existing purpose id. Omit to use a purpose bound to --existing-genres.
    #[arg(long, conflicts_with = "existing_genres")]
    pub old: Option<String>,
    /// New purpose id. Omit to use a purpose bound to --new-genre.
    #[arg(long, conflicts_with = "new_genre")]
    pub new: Option<String>,
    /// Genres of the existing purpose, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub existing_genres: Option<Vec<String>>,
    /// Genre of the new purpose.
    #[arg(long)]
    pub new_genre: Option<String>,
    /// Name of the person responsible for the decision.
    #[arg(long)]
    pub assessor: String,
}

#[derive(Debug, Args)]
pub struct AttachArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Record id.
    #[arg(long)]
    pub record: String,
    /// Criterion: a, b, c, d, e or the full name (e.g. a_link).
    #[arg(long)]
    pub criterion: String,
    /// Evidence file; its directory must hold the provenance.json written with it.
    #[arg(long)]
    pub artifact: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerdictArg {
    FavorsCompatible,
    FavorsIncompatible,
    Neutral,
}

#[derive(Debug, Args)]
pub struct ManualArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Record id.
    #[arg(long)]
    pub record: String,
    /// Criterion: a, b, c, d, e or the full name (e.g. a_link).
    #[arg(long)]
    pub criterion: String,
    /// Assessor's verdict on this criterion.
    #[arg(long, value_enum)]
    pub verdict: VerdictArg,
    /// Free-text assessment.
    #[arg(long, default_value = "")]
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecisionArg {
    Compatible,
    Incompatible,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Record id.
    #[arg(long)]
    pub record: String,
    /// Overall decision.
    #[arg(long, value_enum)]
    pub decision: DecisionArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Record id.
    #[arg(long)]
    pub record: String,
}

/// Exit code and message prefix for a failure.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::MissingFile(_) | Error::Io(_) => (2, "unreadable path"),
            Error::UnknownGenre(_) => (1, "invalid input"),
            e if e.is_data_error() => (2, "data error"),
            _ => (1, "invalid input"),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return (2, "unreadable path");
    }
    (1, "invalid input")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprint!("usage error: {}", msg.strip_prefix("error: ").unwrap_or(&msg));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, prefix) = classify(&e);
            eprintln!("{prefix}: {e:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn walk(cmd: &clap::Command, path: &str, missing: &mut Vec<String>) {
        if cmd.get_about().is_none() && path != "repurpose" {
            missing.push(path.to_string());
        }
        for arg in cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if id != "help" && id != "version" && arg.get_help().is_none() {
                missing.push(format!("{path} --{id}"));
            }
        }
        for sub in cmd.get_subcommands() {
            walk(sub, &format!("{path} {}", sub.get_name()), missing);
        }
    }

    #[test]
    fn every_command_and_flag_is_documented() {
        let mut missing = Vec::new();
        walk(&Cli::command(), "repurpose", &mut missing);
        assert!(missing.is_empty(), "undocumented: {missing:?}");
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_genre_is_invalid_input() {
        let err = anyhow::Error::from(Error::UnknownGenre("Western".into()));
        assert_eq!(classify(&err), (1, "invalid input"));
        let err = anyhow::Error::from(Error::MissingFile("u.data".into()));
        assert_eq!(classify(&err), (2, "unreadable path"));
    }
}
