use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use compmap_core::bundle::{InputSource, Split};
use compmap_core::composition::ProjectionKind;
use compmap_core::czsl::World;
use compmap_core::intervention::InterventionMode;
use compmap_core::weights::Averaging;
use compmap_core::ErrorKind;

mod commands;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "compmap", version, about = "Linear composition of primitive-concept activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random choice of the run.
    #[arg(long, env = "CMAP_SEED")]
    seed: Option<u64>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bundle.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Load a bundle and check every invariant.
    Validate {
        bundle: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a composition model on the training split.
    Train {
        #[arg(value_enum)]
        trainer: Trainer,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pred")]
        source: Source,
        #[command(flatten)]
        common: Common,
    },
    /// Generalized zero-shot evaluation with a calibration sweep.
    EvalCzsl {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "closed")]
        world: WorldArg,
        #[arg(long, value_parser = parse_mode, default_value = "none")]
        intervene: InterventionMode,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        topk: Vec<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "pred")]
        source: Source,
        /// Also write the curve points as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Episodic n-way k-shot evaluation, or the full-shot classifier.
    EvalFewshot {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = compmap_core::fewshot::DEFAULT_QUERY)]
        q: usize,
        #[arg(long, default_value_t = compmap_core::fewshot::DEFAULT_TASKS)]
        tasks: usize,
        #[arg(long, value_parser = parse_mode, default_value = "none")]
        intervene: InterventionMode,
        /// Inputs the per-task classifiers train on.
        #[arg(long, value_enum, default_value = "pred")]
        train_on: Source,
        /// Train once on the training split and score the test split instead.
        #[arg(long)]
        full_shot: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-metric gap between an oracle report and a learned-model report.
    Delta {
        #[arg(long)]
        oracle_report: PathBuf,
        #[arg(long)]
        pred_report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Weight alignment with the true compositions, plus weight profiles.
    AnalyzeWeights {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Composite to export a profile for; repeatable.
        #[arg(long)]
        composite: Vec<String>,
        #[arg(long, value_enum, default_value = "per-composite")]
        averaging: AveragingArg,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score logistic regression on raw, randomly projected or
    /// jointly projected inputs.
    AblateProjection {
        #[arg(value_enum)]
        kind: KindArg,
        #[arg(long)]
        bundle: PathBuf,
        /// Projection width; defaults to the number of primitives.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, value_enum, default_value = "features")]
        input: AblationInput,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Trainer {
    Logreg,
    Contrastive,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Source {
    Pred,
    Gt,
}

impl From<Source> for InputSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Pred => InputSource::Predicted,
            Source::Gt => InputSource::GroundTruth,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum WorldArg {
    Closed,
    Open,
}

impl From<WorldArg> for World {
    fn from(w: WorldArg) -> Self {
        match w {
            WorldArg::Closed => World::Closed,
            WorldArg::Open => World::Open,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AveragingArg {
    PerComposite,
    Micro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::PerComposite => Averaging::PerComposite,
            AveragingArg::Micro => Averaging::Micro,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum KindArg {
    None,
    Learned,
    Random,
}

impl From<KindArg> for ProjectionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::None => ProjectionKind::None,
            KindArg::Learned => ProjectionKind::Learned,
            KindArg::Random => ProjectionKind::Random,
        }
    }
}

/// Which per-sample matrix the projection ablation reads.
#[derive(ValueEnum, Debug, Clone, Copy, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum AblationInput {
    Features,
    Activations,
}

fn parse_mode(s: &str) -> Result<InterventionMode, String> {
    s.parse().map_err(|e: compmap_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(outcome) => {
            if let Some(path) = outcome.report_path {
                println!("{}", path.display());
            }
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            })
        }
    }
}
