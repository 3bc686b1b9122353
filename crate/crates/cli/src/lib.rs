//! The `scl` command line: dataset synthesis, spiral views, augmentation
//! previews, pretraining, probing, fine-tuning, parameter counts and a
//! self-check suite.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, CliConfig, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Core(scl_core::Error),
    Io(std::io::Error),
    /// The self-check suite found failures.
    Verify(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(scl_core::Error::InvalidConfig(_) | scl_core::Error::InvalidSpec(_)) => EXIT_USAGE,
            CliError::Core(_) | CliError::Io(_) => EXIT_DATA,
            CliError::Verify(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
            CliError::Verify(n) => write!(f, "{n} self-checks failed"),
        }
    }
}

impl From<scl_core::Error> for CliError {
    fn from(e: scl_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "scl", version, about = "Spiral contrastive learning on lesion volumes")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dims {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Resnet18,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic lesion set as VOL3 files.
    Synth,
    /// Spiral-transform VOL3 volumes into SPIM views.
    Transform {
        /// A VOL3 file or a directory of them.
        input: PathBuf,
        /// Rotation angles in degrees, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        angles: Option<Vec<f64>>,
        /// Also write a PGM preview of every view.
        #[arg(long)]
        pgm: bool,
        /// Worker threads.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write augmented pairs of one SPIM view.
    Augment {
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        #[arg(long)]
        pgm: bool,
    },
    /// Contrastive pretraining of encoder and projector.
    Pretrain {
        /// Directory written by `synth`.
        data: PathBuf,
    },
    /// Cross-validated linear probe on a frozen encoder.
    Probe {
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross-validated fine-tuning on a fraction of the labels.
    Finetune {
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Exact parameter counts of a backbone in 2D and 3D.
    Params {
        #[arg(long, value_enum, default_value = "resnet18")]
        arch: Arch,
        #[arg(long, value_enum)]
        dims: Dims,
        #[arg(long, default_value_t = 1)]
        in_channels: usize,
    },
    /// Run the built-in oracle and property checks.
    Verify,
}

pub fn resolve_config(common: &Common) -> CliResult<CliConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => CliConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match resolve_config(&cli.common).and_then(|cfg| commands::dispatch(&cli.command, &cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("scl: {e}");
            e.exit_code()
        }
    }
}
