use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchforge_core::export::OrderAlgorithm;
use sketchforge_core::optimizer::InitKind;
use sketchforge_core::{ColourMode, Compose};

#[derive(Parser, Debug)]
#[command(name = "sketchforge", version, about = "Fit pen strokes to an image and plan them for a plotter")]
pub struct Cli {
    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true, env = "SKETCHFORGE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimise strokes against an image.
    Fit(FitArgs),
    /// Order strokes and write G-code for a pen plotter.
    Plot(PlotArgs),
    /// Rasterise a saved model to PPM and SVG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 2000 points
    PaperPoints,
    /// 1000 straight lines
    PaperLines,
    /// 500 Catmull-Rom splines
    PaperSplines,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Pyramid,
    Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ColourArg {
    Gray,
    Rgb,
}

impl From<ColourArg> for ColourMode {
    fn from(c: ColourArg) -> Self {
        match c {
            ColourArg::Gray => ColourMode::Grayscale,
            ColourArg::Rgb => ColourMode::Rgb,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Grid,
    Saliency,
}

impl From<InitArg> for InitKind {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Random => InitKind::RandomUniform,
            InitArg::Grid => InitKind::Grid,
            InitArg::Saliency => InitKind::Saliency,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Identity,
    #[value(name = "greedy_nn")]
    GreedyNn,
    #[value(name = "greedy_2opt")]
    Greedy2opt,
}

impl From<OrderArg> for OrderAlgorithm {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Identity => OrderAlgorithm::Identity,
            OrderArg::GreedyNn => OrderAlgorithm::GreedyNn,
            OrderArg::Greedy2opt => OrderAlgorithm::Greedy2opt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ComposeArg {
    #[value(name = "darken_min")]
    DarkenMin,
    #[value(name = "soft_over")]
    SoftOver,
}

impl From<ComposeArg> for Compose {
    fn from(c: ComposeArg) -> Self {
        match c {
            ComposeArg::DarkenMin => Compose::DarkenMin,
            ComposeArg::SoftOver => Compose::SoftOver,
        }
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("expected WxH, got '{s}'"));
    Ok((p(a)?, p(b)?))
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = parse_pair::<usize>(s)?;
    if w == 0 || h == 0 {
        return Err(format!("dimensions must be positive, got '{s}'"));
    }
    Ok((w, h))
}

pub fn parse_bed(s: &str) -> Result<(f64, f64), String> {
    let (w, h) = parse_pair::<f64>(s)?;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(format!("bed dimensions must be positive, got '{s}'"));
    }
    Ok((w, h))
}

/// Plotter geometry shared by `fit` (for the SVG), `plot` and `render`.
#[derive(Args, Debug, Clone)]
pub struct BedArgs {
    /// Plotter bed size in millimetres.
    #[arg(long, value_parser = parse_bed, default_value = "200x200")]
    pub bed: (f64, f64),
    /// Blank border kept on every side, in millimetres.
    #[arg(long, default_value_t = 10.0)]
    pub margin: f64,
}

#[derive(Args, Debug, Clone)]
pub struct GcodeArgs {
    #[arg(long, value_enum, default_value = "greedy_2opt")]
    pub order: OrderArg,
    /// Drawing feed rate, mm/min.
    #[arg(long, default_value_t = 1500.0)]
    pub feed_draw: f64,
    /// Travel feed rate, mm/min (used for the time estimate; travel moves are rapids).
    #[arg(long, default_value_t = 3000.0)]
    pub feed_travel: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub pen_up_z: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pen_down_z: f64,
    /// Maximum chord deviation when flattening splines, mm.
    #[arg(long, default_value_t = 0.1)]
    pub flatten_tol: f64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Target image (PNG or binary PPM/PGM).
    #[arg(long, required_unless_present = "manifest")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub lines: Option<usize>,
    #[arg(long)]
    pub splines: Option<usize>,
    /// Primitive budget; explicit counts take precedence.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum, default_value = "mse")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 4)]
    pub pyramid_levels: usize,
    /// Feature encoder: an SKW1 weight file or `random:SEED`.
    #[arg(long, default_value = "random:0")]
    pub encoder: String,
    /// Encoder layers whose activations enter the feature loss.
    #[arg(long, value_delimiter = ',')]
    pub taps: Option<Vec<usize>>,
    /// Weight of an extra pixel MSE term added to the feature loss.
    #[arg(long, default_value_t = 0.0)]
    pub mix_mse: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Working resolution; the target is resampled to it.
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub resolution: (usize, usize),
    #[arg(long, value_enum, default_value = "rgb")]
    pub colour: ColourArg,
    #[arg(long, default_value_t = 8.0)]
    pub sigma_start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_end: f64,
    #[arg(long, value_enum, default_value = "random")]
    pub init: InitArg,
    /// Write a snapshot every N iterations (0 disables).
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Replay a previous run; all other fit options except --out-dir are taken from it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Serial execution throughout.
    #[arg(long)]
    pub deterministic: bool,
    #[command(flatten)]
    pub bed: BedArgs,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Model JSON written by `fit`.
    pub model: PathBuf,
    /// Output G-code path; defaults to the model path with a .gcode extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub bed: BedArgs,
    #[command(flatten)]
    pub gcode: GcodeArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Model JSON written by `fit`.
    pub model: PathBuf,
    /// Output PPM path; the SVG is written next to it. Defaults to `<model>.render.ppm`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render size; defaults to the model canvas.
    #[arg(long, value_parser = parse_size)]
    pub resolution: Option<(usize, usize)>,
    /// Kernel width in pixels at the output resolution; defaults to the model's sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub compose: Option<ComposeArg>,
    #[command(flatten)]
    pub bed: BedArgs,
}
