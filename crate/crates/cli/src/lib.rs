//! The `permalign` command-line tool: argument parsing, configuration,
//! artifact writing and the experiment pipelines behind each subcommand.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use permalign::matching::Method;

use crate::artifacts::OutputDir;
pub use crate::config::{ExperimentConfig, Profile};
pub use crate::error::CliError;

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}, expected wm_coord, wm_sinkhorn, am or ste"))
}

#[derive(Debug, Parser)]
#[command(name = "permalign", version, about = "Permutation alignment and linear mode connectivity experiments for MLPs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment config
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace the configured seeds with this one
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Permutation search: wm_coord, wm_sinkhorn, am or ste
    #[arg(long, global = true, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Singular value threshold for the R metric; repeat for several
    #[arg(long, global = true)]
    pub gamma: Vec<f64>,
    /// Number of interpolation points, endpoints included
    #[arg(long = "lambda-grid", global = true)]
    pub lambda_grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long, value_name = "NNPK")]
    pub a: PathBuf,
    #[arg(long, value_name = "NNPK")]
    pub b: PathBuf,
    /// Permutation JSON applied to B first
    #[arg(long, value_name = "JSON")]
    pub perm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    #[arg(long, value_name = "NNPK")]
    pub model: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed
    Train,
    /// Search a permutation of B that aligns it with A
    Match {
        #[arg(long, value_name = "NNPK")]
        a: PathBuf,
        #[arg(long, value_name = "NNPK")]
        b: PathBuf,
    },
    /// Interpolate A and B and evaluate the result
    Merge {
        #[command(flatten)]
        pair: PairArgs,
        /// Weight of A
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Loss along the line from B to A
    Barrier(PairArgs),
    /// Second-order estimate of the barrier next to the measured one
    Taylor(PairArgs),
    /// Singular-vector alignment between A and B
    RMetric(PairArgs),
    /// Singular values of every layer
    Spectrum(ModelArg),
    /// Mean squared projection of layer inputs on right singular vectors
    InputAlign(ModelArg),
    /// Loss over the plane through three models
    Landscape {
        #[arg(long, value_name = "NNPK")]
        a: PathBuf,
        #[arg(long, value_name = "NNPK")]
        b: PathBuf,
        #[arg(long, value_name = "NNPK")]
        c: PathBuf,
        /// Grid points per axis
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Align B and C to A and compare B and C through A
    ThreeModel {
        #[arg(long, value_name = "NNPK", requires_all = ["b", "c"])]
        a: Option<PathBuf>,
        #[arg(long, value_name = "NNPK", requires_all = ["a", "c"])]
        b: Option<PathBuf>,
        #[arg(long, value_name = "NNPK", requires_all = ["a", "b"])]
        c: Option<PathBuf>,
    },
    /// Spectrum and matching objective of circular convolution kernels
    ConvAnalyze {
        #[arg(long, value_name = "CNVK")]
        kernel: Option<PathBuf>,
        #[arg(long = "kernel-b", value_name = "CNVK")]
        kernel_b: Option<PathBuf>,
    },
    /// Width, weight decay and learning rate grid
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Match { .. } => "match",
            Command::Merge { .. } => "merge",
            Command::Barrier(_) => "barrier",
            Command::Taylor(_) => "taylor",
            Command::RMetric(_) => "r-metric",
            Command::Spectrum(_) => "spectrum",
            Command::InputAlign(_) => "input-align",
            Command::Landscape { .. } => "landscape",
            Command::ThreeModel { .. } => "three-model",
            Command::ConvAnalyze { .. } => "conv-analyze",
            Command::Sweep => "sweep",
        }
    }
}

/// The config file (or profile defaults) with the flags applied.
pub fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path, g.profile, g.method)?,
        None => ExperimentConfig::from_toml("", g.profile, g.method)?,
    };
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if !g.gamma.is_empty() {
        cfg.analysis.gammas = g.gamma.clone();
    }
    if let Some(n) = g.lambda_grid {
        cfg.analysis.lambda_grid = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `command` and writes its manifest. Returns the output directory.
pub fn execute(cfg: &ExperimentConfig, command: &Command) -> Result<PathBuf, CliError> {
    use commands as c;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let o = &mut out;
    match command {
        Command::Train => c::train(cfg, o)?,
        Command::Match { a, b } => c::match_models(cfg, o, a, b)?,
        Command::Merge { pair, lambda } => c::merge(cfg, o, &pair.a, &pair.b, pair.perm.as_deref(), *lambda)?,
        Command::Barrier(p) => c::barrier_cmd(cfg, o, &p.a, &p.b, p.perm.as_deref())?,
        Command::Taylor(p) => c::taylor(cfg, o, &p.a, &p.b, p.perm.as_deref())?,
        Command::RMetric(p) => c::r_metric(cfg, o, &p.a, &p.b, p.perm.as_deref())?,
        Command::Spectrum(m) => c::spectrum_cmd(cfg, o, &m.model)?,
        Command::InputAlign(m) => c::input_align(cfg, o, &m.model)?,
        Command::Landscape { a, b, c: cc, resolution } => c::landscape_cmd(cfg, o, [a, b, cc], *resolution)?,
        Command::ThreeModel { a, b, c: cc } => {
            let given = match (a, b, cc) {
                (Some(a), Some(b), Some(cc)) => Some([a.as_path(), b.as_path(), cc.as_path()]),
                _ => None,
            };
            c::three_model(cfg, o, given)?
        }
        Command::ConvAnalyze { kernel, kernel_b } => c::conv_analyze(cfg, o, kernel.as_deref(), kernel_b.as_deref())?,
        Command::Sweep => c::sweep(cfg, o)?,
    }
    out.finish(command.name(), cfg)
}

fn report(err: &CliError, dir: Option<&Path>) {
    let record = serde_json::json!({ "error": err.record() });
    eprintln!("{record}");
    if let Some(dir) = dir {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            report(&CliError::Usage(e.kind().to_string()), None);
            return 2;
        }
    };
    let cfg = match resolve_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            report(&e, cli.global.out.as_deref());
            return e.exit_code();
        }
    };
    match execute(&cfg, &cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            report(&e, Some(&cfg.output_dir));
            e.exit_code()
        }
    }
}
