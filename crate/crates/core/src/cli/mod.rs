//! The `drstage` command line: `preprocess`, `train`, `eval` and `classify`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::ensemble::Scheme;
use crate::error::Error;

pub use commands::{
    cmd_classify, cmd_eval, cmd_preprocess, cmd_train, eval_report, prepare_image, Skipped,
    MANIFEST_FILE, REPORT_JSON, REPORT_TEXT, SKIPPED_FILE,
};
pub use config::{Overrides, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PERSIST: u8 = 3;
pub const EXIT_DOMAIN: u8 = 4;

/// A failed command and the exit status it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct CommandError {
    pub code: u8,
    #[source]
    pub source: Error,
}

impl CommandError {
    pub fn domain(source: Error) -> Self {
        CommandError {
            code: EXIT_DOMAIN,
            source,
        }
    }
}

impl From<Error> for CommandError {
    fn from(source: Error) -> Self {
        let code = match source {
            Error::Io { .. }
            | Error::MissingRoot(_)
            | Error::MissingClassDir(_)
            | Error::Decode { .. }
            | Error::EmptyDataset
            | Error::Format(_) => EXIT_INPUT,
            _ => EXIT_DOMAIN,
        };
        CommandError { code, source }
    }
}

pub(crate) fn persist(source: Error) -> CommandError {
    CommandError {
        code: EXIT_PERSIST,
        source,
    }
}

pub type CommandResult<T = ()> = std::result::Result<T, CommandError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Cascade,
    Ovo,
}

impl From<ModeArg> for Scheme {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cascade => Scheme::Cascade,
            ModeArg::Ovo => Scheme::Ovo,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "drstage", version, about = "Diabetic-retinopathy staging from fundus photographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root with one sub-directory per stage.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess a raw image tree into a mirrored tree of square images.
    Preprocess,
    /// Train the binary classifiers of one ensemble scheme.
    Train {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Validation tree; defaults to the training tree.
        #[arg(long)]
        val_input: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate an ensemble on a preprocessed tree and write reports.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Stage a single raw fundus image.
    Classify {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> CommandResult {
    let mut over = Overrides {
        seed: cli.seed,
        out: cli.out,
        input: cli.input,
        ..Default::default()
    };
    match &cli.command {
        Command::Preprocess => {}
        Command::Train {
            mode,
            val_input,
            max_epochs,
        } => {
            over.mode = mode.map(Scheme::from);
            over.val_input = val_input.clone();
            over.max_epochs = *max_epochs;
        }
        Command::Eval { manifest } => over.manifest = manifest.clone(),
        Command::Classify { manifest, image } => {
            over.manifest = manifest.clone();
            over.image = image.clone();
        }
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), over)?;
    cfg.validate()?;
    eprintln!("resolved config:\n{}", cfg.to_json());
    match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Eval { .. } => cmd_eval(&cfg),
        Command::Classify { .. } => cmd_classify(&cfg),
    }
}
