use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "edeblur", version, about = "Deblur video frames with event data when the exposure length is unknown")]
pub struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 is the reproducible mode.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    /// Flat `key = value` file supplying flags not given on the command line.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a procedural test scene as numbered PGM frames.
    Scene(SceneArgs),
    /// Simulate events from a directory of frames.
    SimulateEvents(SimulateArgs),
    /// Synthesize blurred samples for one shutter configuration.
    Synthesize(SynthesizeArgs),
    /// Deblur one sample with the event double integral.
    Edi(EdiArgs),
    /// Train the network.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a directory of predictions.
    Eval(EvalArgs),
    /// Write the per-slot temporal activation of one sample as CSV and SVG.
    PlotActivation(PlotArgs),
    /// Re-run the command recorded in a run.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Bar,
    Pattern,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct SceneArgs {
    #[arg(long, value_enum)]
    pub kind: SceneKind,
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Pixels per frame (bar and pattern scenes).
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFormat {
    Evt1,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Directory of PGM/PPM frames with numeric file names.
    #[arg(long)]
    pub frames: PathBuf,
    /// Contrast threshold in log intensity.
    #[arg(long)]
    pub beta: f64,
    /// Time units between consecutive frames.
    #[arg(long, default_value_t = 1000)]
    pub dt: u64,
    /// Intensity floor before taking logarithms.
    #[arg(long, default_value_t = edeblur_core::physics::DEFAULT_LOG_FLOOR)]
    pub log_floor: f64,
    #[arg(long, value_enum, default_value_t = EventFormat::Evt1)]
    pub format: EventFormat,
    /// Event file; diagnostics go to the same path with `.json` appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub frames: PathBuf,
    /// EVT1 stream simulated from the same frames.
    #[arg(long)]
    pub events: PathBuf,
    /// Exposure frames per shutter period.
    #[arg(long)]
    pub m: usize,
    /// Readout frames per shutter period.
    #[arg(long)]
    pub n: usize,
    /// Jitter the exposure length per period.
    #[arg(long)]
    pub noise: bool,
    #[arg(long, default_value_t = 1000)]
    pub dt: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EdiArgs {
    /// `MANIFEST:INDEX`
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    Default,
    Small,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training manifest; omit together with `--toy`.
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    pub manifest: Option<PathBuf>,
    /// Train on procedurally generated moving-texture samples.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 48)]
    pub crop: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ModelPreset::Default)]
    pub model: ModelPreset,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print progress every this many steps (0 = silent).
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
    pub ckpt: Option<PathBuf>,
    /// Directory of predictions named `NNNN.tnsr` or `NNNN.pgm`/`.ppm` by sample index.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `MANIFEST:INDEX`
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub run: PathBuf,
}
