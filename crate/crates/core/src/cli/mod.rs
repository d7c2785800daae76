//! The `axiseg` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unreadable or
//! unsupported input, 4 segmenter backend failure, 5 internal invariant
//! breach.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorKind};
pub use config::{BackendSpec, ConfigFlags, MeshFormat, PipelineConfig};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;
pub const EXIT_INVARIANT: u8 = 5;

/// Environment variable holding the log filter (e.g. `info`, `axiseg=debug`).
pub const LOG_ENV: &str = "AXISEG_LOG";

#[derive(Debug, Parser)]
#[command(name = "axiseg", version, about = "Multi-axis ensemble segmentation of 3D scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a DICOM series and write it as an RVOL scan.
    Convert(ConvertArgs),
    /// Generate a synthetic phantom scan and its labels.
    Phantom(PhantomArgs),
    /// Export windowed image/mask PNG pairs for training.
    Slices(SlicesArgs),
    /// Segment a scan along each axis and write the ensemble labels.
    Infer(InferArgs),
    /// Compare a prediction with ground truth.
    Eval(EvalArgs),
    /// Write one surface mesh per class.
    Mesh(MeshArgs),
    /// Load, infer, evaluate (when ground truth is given) and mesh in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory holding one DICOM series.
    #[arg(long)]
    pub input: PathBuf,
    /// Output RVOL path.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    FourChamber,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom description as JSON.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Preset size: one value for a cube or nx,ny,nz.
    #[arg(long, default_value = "64")]
    pub dims: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives scan.rvol, labels.rvol and spec.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SlicesArgs {
    /// Hounsfield scan (RVOL).
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "axial,coronal,sagittal")]
    pub axes: String,
    /// HU window as lo:hi.
    #[arg(long, default_value = "-200:500", allow_hyphen_values = true)]
    pub window: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// DICOM directory or RVOL scan.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ground-truth labels, required by the oracle backend.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output RVOL path for the ensemble labels.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write each single-axis prediction next to the output.
    #[arg(long)]
    pub per_axis: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated class names or indices; defaults to every foreground
    /// class.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, value_enum, default_value_t = MeshFormat::Stl)]
    pub format: MeshFormat,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// DICOM directory or RVOL scan.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ground truth: enables evaluation and feeds the oracle backend.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<MeshFormat>,
    /// Also write each single-axis prediction.
    #[arg(long)]
    pub per_axis: bool,
    /// Skip mesh export.
    #[arg(long)]
    pub no_mesh: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::InputFormat => EXIT_INPUT,
        ErrorKind::Backend => EXIT_BACKEND,
        ErrorKind::Invariant => EXIT_INVARIANT,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("axiseg: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MalformedSeries("x".into())), 3);
        let backend = Error::Backend { message: "x".into(), stderr_tail: String::new() };
        assert_eq!(exit_code(&backend), 4);
        let nested = Error::AtSlice { axis: "axial", index: 3, source: Box::new(backend) };
        assert_eq!(exit_code(&nested), 4);
        assert_eq!(exit_code(&Error::OpenMesh { open_edges: 1, first: (0, 1) }), 5);
    }

    #[test]
    fn negative_window_parses() {
        let cli = Cli::try_parse_from([
            "axiseg", "infer", "--input", "a", "--output", "b", "--window", "-200:500",
        ])
        .unwrap();
        match cli.command {
            Command::Infer(a) => assert_eq!(a.flags.window.as_deref(), Some("-200:500")),
            other => panic!("{other:?}"),
        }
    }
}
