use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reqgen::pipeline::{self, ExperimentConfig};
use reqgen::Error;

#[derive(Parser)]
#[command(name = "reqgen", version, about = "Keywords-to-requirement generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract keywords, build the vocabulary and write the prepared set.
    Prepare(Common),
    /// Train on the prepared set and write a checkpoint.
    Train(Common),
    /// Generate one requirement from keywords.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated keyword phrases.
        #[arg(long, value_name = "K1,K2,...")]
        keywords: String,
        /// Semantic-element roles (JSON) for syntax-aware ranking.
        #[arg(long, value_name = "PATH")]
        roles: Option<PathBuf>,
    },
    /// Score the checkpoint on the prepared set.
    Evaluate(Common),
    /// k-fold cross-validation.
    Crossval(Common),
    /// Cross-validation over the configured ablation grid.
    Ablate(Common),
}

// Like println!, but a closed stdout (e.g. piping into head) is not a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn load(common: &Common) -> reqgen::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.rng_seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> reqgen::Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let coverage = pipeline::cmd_prepare(&load(&c)?)?;
            out!("{}", serde_json::to_string_pretty(&coverage)?);
        }
        Command::Train(c) => {
            let config = load(&c)?;
            pipeline::cmd_train(&config, |epoch, loss| out!("epoch {epoch:>4}  loss {loss:.6}"))?;
            out!("checkpoint written to {}", config.checkpoint_path().display());
        }
        Command::Generate {
            common,
            keywords,
            roles,
        } => {
            let config = load(&common)?;
            let roles = roles.map(pipeline::load_roles).transpose()?;
            let keywords = pipeline::parse_keywords(&keywords);
            let response = pipeline::cmd_generate(&config, &keywords, roles.as_ref())?;
            out!("{}", response.text);
            out!("{}", serde_json::to_string_pretty(&response)?);
        }
        Command::Evaluate(c) => {
            let report = pipeline::cmd_evaluate(&load(&c)?)?;
            out!("{}", reqgen::metrics::format_table(&[("all".into(), report)]).trim_end());
        }
        Command::Crossval(c) => out!("{}", pipeline::cmd_crossval(&load(&c)?)?.table().trim_end()),
        Command::Ablate(c) => out!("{}", pipeline::cmd_ablate(&load(&c)?)?.table().trim_end()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_)
                | Error::InvalidConfig(_)
                | Error::InvalidPlan(_)
                | Error::InvalidFolds { .. }
                | Error::InvalidReference(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
