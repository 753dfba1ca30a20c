//! Command-line surface: subcommands, their inputs, and one override flag
//! per configuration key.

use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys, Kind};

#[derive(Parser, Debug, Clone)]
#[command(name = "splatfix", version, about = "Compress synthetic splat scenes and restore their renders in one step")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file; any key can also be set by its flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives the effective `config.toml`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate `synth.scenes` procedural scene bundles.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Perturb a scene, refit it to its clean renders and report the losses.
    FitCheck {
        /// Scene bundle directory; a fresh procedural scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Code a scene at every rate level down to `--level`.
    Compress {
        #[arg(long)]
        scene: PathBuf,
        /// Lowest level to produce; only that level is written when given.
        #[arg(long)]
        level: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Decode a coded scene to PLY, optionally rendering its test views.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        /// Bundle whose test views are rendered and scored against the original.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build the paired clean/degraded dataset from a directory of bundles.
    MakeDataset {
        /// Directory holding `scene_*` bundles, as written by `synth`.
        #[arg(long)]
        scenes: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the base denoiser on the dataset's clean renders.
    PretrainBase {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Distill the one-step restorer from a frozen base.
    TrainRestorer {
        #[arg(long)]
        dataset: PathBuf,
        /// Base checkpoint written by `pretrain-base`.
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Restore images, or the test views of a coded scene.
    Restore {
        /// Restorer checkpoint written by `train-restorer`.
        #[arg(long, required_unless_present = "identity")]
        restorer: Option<PathBuf>,
        /// Use the passthrough restorer instead of a checkpoint.
        #[arg(long, conflicts_with = "restorer")]
        identity: bool,
        /// PNG or `.f32img` inputs; sides must be multiples of 4.
        #[arg(long, required_unless_present = "coded")]
        image: Vec<PathBuf>,
        /// Scene bundle providing the test cameras for `--coded`.
        #[arg(long, requires = "coded")]
        scene: Option<PathBuf>,
        /// Coded scene whose test-view renders are restored.
        #[arg(long, requires = "scene")]
        coded: Option<PathBuf>,
        /// Condition class; the null token when omitted.
        #[arg(long)]
        condition: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Rate-distortion report over the dataset's scenes on held-out views.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// The bundles the dataset was built from.
        #[arg(long)]
        scenes: PathBuf,
        /// Adds restored columns when given.
        #[arg(long)]
        restorer: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Self::Synth { common }
            | Self::FitCheck { common, .. }
            | Self::Compress { common, .. }
            | Self::Decompress { common, .. }
            | Self::MakeDataset { common, .. }
            | Self::PretrainBase { common, .. }
            | Self::TrainRestorer { common, .. }
            | Self::Restore { common, .. }
            | Self::Evaluate { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Synth { .. } => "synth",
            Self::FitCheck { .. } => "fit-check",
            Self::Compress { .. } => "compress",
            Self::Decompress { .. } => "decompress",
            Self::MakeDataset { .. } => "make-dataset",
            Self::PretrainBase { .. } => "pretrain-base",
            Self::TrainRestorer { .. } => "train-restorer",
            Self::Restore { .. } => "restore",
            Self::Evaluate { .. } => "evaluate",
        }
    }
}

fn config_args() -> Vec<Arg> {
    keys()
        .into_iter()
        .map(|k| {
            let value_name = match k.kind {
                Kind::Integer => "INT",
                Kind::Float => "FLOAT",
                Kind::Bool => "BOOL",
                Kind::Text => "TEXT",
            };
            let help = match &k.default {
                Some(d) => format!("Config key `{}` (default {d})", k.path),
                None => format!("Config key `{}` (unset by default)", k.path),
            };
            let mut arg = Arg::new(k.path.clone())
                .long(k.path.clone())
                .value_name(value_name)
                .action(ArgAction::Set)
                .help(help)
                .help_heading("Configuration");
            if k.path == "eval.deterministic_eps" {
                arg = arg.alias("deterministic-eps");
            }
            arg
        })
        .collect()
}

/// The full command with configuration flags on every subcommand.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args(config_args()));
    }
    cmd
}

/// Parsed invocation: the subcommand and its `(key, raw value)` overrides.
pub struct Invocation {
    pub cli: Cli,
    pub overrides: Vec<(String, String)>,
}

pub fn from_matches(matches: &ArgMatches) -> Result<Invocation, clap::Error> {
    let cli = Cli::from_arg_matches(matches)?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("a subcommand is required");
    let overrides = keys()
        .into_iter()
        .filter_map(|k| sub.get_one::<String>(&k.path).map(|v| (k.path.clone(), v.clone())))
        .collect();
    Ok(Invocation { cli, overrides })
}

pub fn parse_from<I, T>(args: I) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    from_matches(&command().try_get_matches_from(args)?)
}
