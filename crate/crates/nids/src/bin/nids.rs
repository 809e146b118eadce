//! Command-line surface for the intrusion detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nids::config::ExperimentConfig;
use nids::dataset::DatasetSource;
use nids::pipeline::{
    cmd_evaluate, cmd_ingest, cmd_score, cmd_train, EvalTarget, TrainScope,
};

#[derive(Parser)]
#[command(name = "nids", about = "Attack-specialized intrusion detection on NSL-KDD")]
struct Cli {
    /// Experiment configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's rng seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fast mode: stratified subsample fraction in (0, 1].
    #[arg(long, global = true)]
    fast: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the configured splits and print their class distributions.
    Ingest,
    /// Train detectors and/or the meta-classifier.
    Train {
        #[arg(long)]
        scope: Scope,
    },
    /// Evaluate a trained model on a test split and write report files.
    Evaluate {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long)]
        target: Target,
    },
    /// Score raw NSL-KDD rows (41 fields; labeled 43-field rows accepted).
    Score {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Dos,
    Probe,
    R2l,
    U2r,
    Meta,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    #[value(name = "test_plus")]
    TestPlus,
    #[value(name = "test_21")]
    Test21,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Dos,
    Probe,
    R2l,
    U2r,
    Meta,
}

impl Scope {
    fn to_pipeline(self) -> TrainScope {
        let name = match self {
            Scope::Dos => "dos",
            Scope::Probe => "probe",
            Scope::R2l => "r2l",
            Scope::U2r => "u2r",
            Scope::Meta => "meta",
            Scope::All => "all",
        };
        name.parse().expect("scope names agree")
    }
}

impl Target {
    fn to_pipeline(self) -> EvalTarget {
        let name = match self {
            Target::Dos => "dos",
            Target::Probe => "probe",
            Target::R2l => "r2l",
            Target::U2r => "u2r",
            Target::Meta => "meta",
        };
        name.parse().expect("target names agree")
    }
}

fn load_config(cli: &Cli) -> nids::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| nids::Error::Config("--config is required".to_string()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(fast) = cli.fast {
        config.set("fast.fraction", &fast.to_string())?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> nids::Result<ExitCode> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Ingest => {
            let report = cmd_ingest(&config)?;
            print!("{}", report.text);
            if report.deviations.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Train { scope } => {
            let summary = cmd_train(&config, scope.to_pipeline())?;
            for (stage, seconds) in &summary.stages {
                println!("trained {stage} in {seconds:.3}s");
            }
            println!("manifest: {}", summary.manifest_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { dataset, target } => {
            let source = match dataset {
                Dataset::TestPlus => DatasetSource::TestPlus,
                Dataset::Test21 => DatasetSource::Test21,
            };
            let output = cmd_evaluate(&config, source, target.to_pipeline())?;
            print!("{}", output.report.render_text());
            println!("reports: {}", output.text_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { input } => {
            let summary = cmd_score(&config, input)?;
            for line in &summary.lines {
                println!("{line}");
            }
            for (index, reason) in &summary.malformed {
                eprintln!("row {index}: {reason}");
            }
            if summary.malformed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
