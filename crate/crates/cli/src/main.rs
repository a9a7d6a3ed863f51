//! `elasto` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elasto::dp::{DEFAULT_ALPHA_DP, DEFAULT_NUM_LINES, DEFAULT_SEARCH_RANGE};
use elasto::modes::DEFAULT_NUM_MODES;
use elasto::pipeline::PipelineConfig;
use elasto::refine::{RefineConfig, DEFAULT_STRAIN_WINDOW};
use elasto::select::DEFAULT_WINDOW;
use elasto::sim::DeformationKind;
use elasto::types::NCC_THRESHOLD;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "elasto", version, about = "Sparse-DP PCA elastography pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Simulate a pre/post RF frame pair with its oracle displacement.
    Simulate(SimulateArgs),
    /// Learn principal displacement modes from axial displacement rasters.
    LearnModes(LearnModesArgs),
    /// Estimate displacement (or strain) between two frames.
    Estimate(EstimateArgs),
    /// Label a frame pair with its motion-compensated NCC.
    Label(LabelArgs),
    /// Train the NCC regressor on labelled instances.
    TrainClassifier(TrainArgs),
    /// Pick the best partner for an anchor frame within a window.
    SelectFrames(SelectArgs),
    /// SNR and CNR of a strain raster over two windows.
    Evaluate(EvaluateArgs),
    /// Sweep the number of modes, DP lines or compression on one phantom.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct PipelineArgs {
    /// Number of displacement modes.
    #[arg(long, default_value_t = DEFAULT_NUM_MODES)]
    num_modes: usize,
    /// Number of equidistant RF lines given to the DP.
    #[arg(long, default_value_t = DEFAULT_NUM_LINES)]
    num_lines: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA_DP)]
    alpha_dp: f64,
    /// Axial DP search range in samples; must be below a quarter of the rows.
    #[arg(long, default_value_t = DEFAULT_SEARCH_RANGE)]
    search_range: usize,
    #[arg(long, default_value_t = 5.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
    #[arg(long, default_value_t = 5.0)]
    beta1: f64,
    #[arg(long, default_value_t = 1.0)]
    beta2: f64,
    /// Least-squares strain window in samples (odd).
    #[arg(long, default_value_t = DEFAULT_STRAIN_WINDOW)]
    strain_window: usize,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            num_modes: self.num_modes,
            num_lines: self.num_lines,
            alpha_dp: self.alpha_dp,
            search_range: self.search_range,
            refine: RefineConfig::phantom().with_weights(self.alpha1, self.alpha2, self.beta1, self.beta2),
            strain_window: self.strain_window,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Compression,
    Rotation,
    LateralShift,
    OutOfPlane,
}

impl From<Kind> for DeformationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Compression => DeformationKind::AxialCompression,
            Kind::Rotation => DeformationKind::InPlaneRotation,
            Kind::LateralShift => DeformationKind::LateralShift,
            Kind::OutOfPlane => DeformationKind::OutOfPlane,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    lines: usize,
    #[arg(long, value_enum, default_value_t = Kind::Compression)]
    kind: Kind,
    /// Strain fraction, radians, lines or decorrelation depending on the kind.
    #[arg(long, default_value_t = 0.02)]
    magnitude: f64,
    #[arg(long, default_value_t = 1)]
    inclusions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct LearnModesArgs {
    /// Directory of axial displacement rasters (`*.elas`).
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Instead of reading rasters, simulate this many pairs and learn from
    /// their refined estimates.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    lines: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StageArg {
    Dp,
    Coarse,
    Refined,
    Strain,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    /// Mode directory; required for every stage except `dp`.
    #[arg(long)]
    modes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StageArg::Strain)]
    stage: StageArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct LabelArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    #[arg(long)]
    modes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = NCC_THRESHOLD)]
    ncc_threshold: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// JSON files holding one labelled instance (as written by `label`) or
    /// an array of them.
    #[arg(long, num_args = 1.., required_unless_present = "synthetic", conflicts_with = "synthetic")]
    dataset: Vec<PathBuf>,
    /// Simulate and label this many pairs instead.
    #[arg(long, requires = "modes")]
    synthetic: Option<usize>,
    /// Mode directory used to label synthetic pairs.
    #[arg(long)]
    modes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = NCC_THRESHOLD)]
    ncc_threshold: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    /// Frame rasters in sequence order.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    anchor: usize,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    modes: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    strain: PathBuf,
    /// Target window `row0,row1,col0,col1` (half-open).
    #[arg(long, value_parser = parse_window)]
    target: [usize; 4],
    /// Background window `row0,row1,col0,col1` (half-open).
    #[arg(long, value_parser = parse_window)]
    background: [usize; 4],
    /// Optional reference strain for an RMS error over the whole image.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepParam {
    /// Number of modes: 6, 12, 24.
    N,
    /// Number of DP lines: 2, 5, 10.
    P,
    /// Applied compression: 1%, 3%, 6%.
    Compression,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Mode directory; when absent a basis is learned from a synthetic corpus.
    #[arg(long)]
    modes: Option<PathBuf>,
    /// Size of the synthetic corpus when no modes are given.
    #[arg(long, default_value_t = 60)]
    corpus: usize,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    lines: usize,
    /// Compression of the test pair for the N and p sweeps.
    #[arg(long, default_value_t = 0.02)]
    magnitude: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_window(s: &str) -> Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected four comma-separated integers".to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
