use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use guidesum_cli::stages::{self, ModelKind};
use guidesum_cli::{Profile, RunConfig};

#[derive(Parser)]
#[command(name = "guidesum", version, about = "Terminology-guided summarization with post-editing correction")]
struct Cli {
    /// TOML run config layered over the profile defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Hyperparameter defaults: paper, desk or fixture.
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean the terminology CSV into a lexicon.
    LexiconBuild,
    /// Extract guidance signals for every split.
    GuidanceExtract,
    /// Build swap-corrupted corrector and classifier sets.
    Corrupt,
    /// Train one network and keep its best checkpoint.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
    },
    /// Summarize the evaluation split.
    Decode,
    /// Post-edit decoded summaries.
    Correct,
    /// Score outputs before and after correction.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
    /// Print the resolved config.
    ShowConfig,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = RunConfig::load(cli.profile, cli.config.as_deref())?;
    match cli.command {
        Command::LexiconBuild => {
            let lexicon = stages::lexicon_build(&cfg)?;
            println!("{} terms", lexicon.len());
        }
        Command::GuidanceExtract => stages::guidance_extract(&cfg)?,
        Command::Corrupt => stages::corrupt(&cfg)?,
        Command::Train { model } => stages::train_model(&cfg, model)?,
        Command::Decode => stages::decode(&cfg)?,
        Command::Correct => stages::correct(&cfg)?,
        Command::Evaluate => print!("{}", guidesum::evaluation::render_table(&stages::evaluate(&cfg)?)),
        Command::Pipeline => print!("{}", guidesum::evaluation::render_table(&stages::pipeline(&cfg)?)),
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}
