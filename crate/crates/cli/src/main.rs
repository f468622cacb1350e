//! `plantcat`: per-stage subcommands and a single-shot runner.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use plantcat_core::vegidx::ViKind;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "plantcat", version, about = "Catalog individual crop plants across UAV image time series")]
pub struct Cli {
    /// Pipeline config (TOML). Required by `run`; supplies defaults for the stage commands.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed of the synthetic generator; recorded in run manifests.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic field: rasters, world files, truth and a pipeline config.
    Synth(SynthArgs),
    /// Compute a vegetation index, threshold it and write the plant mask.
    Segment(SegmentArgs),
    /// Fit the growth curve to the cover ratios of several segment runs.
    FitGrowth(FitGrowthArgs),
    /// Detect plant positions in a mask.
    Detect(DetectArgs),
    /// Register the peak layers of all dates into one frame.
    Align(AlignArgs),
    /// Find the seeding lines and flag weeds.
    Lines(LinesArgs),
    /// Cluster, sort and complete the catalog; write all exports.
    Catalog(CatalogArgs),
    /// Cut per-plant image tiles.
    Extract(ExtractArgs),
    /// Score a catalog against ground truth.
    Eval(EvalArgs),
    /// Run every stage from the config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON object overriding fields of the reference layout.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Acquisition date; read from the file name when omitted.
    #[arg(long)]
    pub date: Option<NaiveDate>,
    #[arg(long)]
    pub vi: Option<ViKind>,
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
    #[arg(long)]
    pub cover_cutoff: Option<f64>,
    /// Mask PNG; a world file is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitGrowthArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub stats: Vec<PathBuf>,
    /// Fit the growing branch only.
    #[arg(long)]
    pub ignore_dying: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// Cover ratio of the mask; selects the blur bandwidth.
    #[arg(long)]
    pub cover: f64,
    #[arg(long)]
    pub date: Option<NaiveDate>,
    /// Days since the first acquisition.
    #[arg(long, default_value_t = 0)]
    pub day: i64,
    /// Blur bandwidth bounds in pixels.
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub c_cutoff: Option<f64>,
    /// Minimum distance between plants (m).
    #[arg(long)]
    pub min_distance: Option<f64>,
    #[arg(long)]
    pub min_intensity: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub peaks: Vec<PathBuf>,
    #[arg(long)]
    pub d_register: Option<f64>,
    #[arg(long)]
    pub d_group: Option<f64>,
    /// Outlier weight of the registration.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub transforms: PathBuf,
}

#[derive(Debug, Args)]
pub struct LinesArgs {
    #[arg(long)]
    pub aligned: PathBuf,
    #[arg(long)]
    pub theta_d: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    #[arg(long)]
    pub aligned: PathBuf,
    #[arg(long)]
    pub transforms: PathBuf,
    #[arg(long)]
    pub lines: PathBuf,
    /// Dates without detections that still get indirect positions.
    #[arg(long = "date")]
    pub dates: Vec<NaiveDate>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub min_direct: Option<usize>,
    /// UTM zone of the CRS, e.g. 32N; enables geographic KML.
    #[arg(long)]
    pub utm_zone: Option<String>,
    /// Directory for catalog.json, .csv, .geojson and .kml.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// `DATE=PATH`; defaults to the config inputs.
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// CSV report; a JSON summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err
        .chain()
        .filter_map(|e| e.downcast_ref::<plantcat_core::Error>())
        .any(|e| e.is_config());
    if config {
        EXIT_CONFIG
    } else {
        EXIT_STAGE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
