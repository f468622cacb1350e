//! End-to-end run: segment, detect, align, lines, weed filter, catalog, export.
//!
//! Every intermediate is written under the output directory as JSON, CSV or PNG.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::{build_catalog, extract_date_tiles, save_tiles, to_csv, to_geojson, to_kml, CatalogLayer, CatalogParams, PlantCatalog, UtmZone};
use crate::detect::{detect_layer, BlurSpec, DetectParams, PeakLayer};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_catalog, read_truth, report, EvalSummary};
use crate::geom::Point;
use crate::growth::{fit_growth, FitOptions, GrowthFit};
use crate::lines::{filter_weed, recognize_lines, LineParams, SeedingLines};
use crate::raster::{load_raster, save_mask_png, Acquisition, LoadOptions, Raster};
use crate::register::{align_all, centralize, order_by_cover, AlignParams, CpdOptions, LayerAlignment};
use crate::synth::SynthField;
use crate::vegidx::{compute_vi, segment, SegmentParams, SegmentationResult, ThresholdSource, ViKind, OSAVI_Y};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_file: Option<PathBuf>,
    /// Channel names in file order; inferred from the channel count when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Plant distance along a line (m); scales the distance defaults below.
    pub intra_row: Option<f64>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { intra_row: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub vi: ViKind,
    pub osavi_y: f64,
    pub fixed_threshold: Option<f64>,
    pub cover_cutoff: f64,
    pub otsu_bins: usize,
    pub sparse_cover: f64,
    /// Raw sample value marking nodata on every channel.
    pub nodata: Option<f64>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        let s = SegmentParams::default();
        Self {
            vi: ViKind::Gli,
            osavi_y: OSAVI_Y,
            fixed_threshold: s.fixed_threshold,
            cover_cutoff: s.cover_cutoff,
            otsu_bins: s.otsu_bins,
            sparse_cover: s.sparse_cover,
            nodata: Some(0.0),
        }
    }
}

impl SegmentConfig {
    pub fn params(&self) -> SegmentParams {
        SegmentParams {
            fixed_threshold: self.fixed_threshold,
            cover_cutoff: self.cover_cutoff,
            otsu_bins: self.otsu_bins,
            sparse_cover: self.sparse_cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    /// Blur bandwidth bounds in pixels.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Defaults to the segmentation cover cutoff.
    #[serde(default)]
    pub c_cutoff: Option<f64>,
    /// Minimum peak distance (m); defaults to half the intra-row spacing.
    #[serde(default)]
    pub min_distance: Option<f64>,
    #[serde(default = "default_min_intensity")]
    pub min_intensity: f64,
}

fn default_min_intensity() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Defaults to half the intra-row spacing.
    pub d_register: Option<f64>,
    /// Defaults to a quarter of the intra-row spacing.
    pub d_group: Option<f64>,
    pub w: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let c = CpdOptions::default();
        Self {
            d_register: None,
            d_group: None,
            w: c.w,
            max_iters: c.max_iters,
            tol: c.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinesConfig {
    /// Weed filter band half-width in units of the median line distance.
    pub theta_d: f64,
    #[serde(flatten)]
    pub params: LineParams,
}

impl Default for LinesConfig {
    fn default() -> Self {
        Self {
            theta_d: 0.2,
            params: LineParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    /// Defaults to 0.4 × the intra-row spacing.
    pub d_max: Option<f64>,
    pub min_direct: usize,
    /// UTM zone of the input CRS such as `32N`; enables KML in WGS84.
    pub utm_zone: Option<String>,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            d_max: None,
            min_direct: 2,
            utm_zone: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub enabled: bool,
    /// Tile edge in pixels; must be even.
    pub frame_px: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            frame_px: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// GeoJSON point features with a `date` property.
    pub truth: PathBuf,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    crate::evalkit::TOLERANCE_ROW_CROP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Worker threads; 0 or absent uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Recorded in the manifest; the pipeline itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub segment: SegmentConfig,
    pub detect: DetectConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub lines: LinesConfig,
    #[serde(default)]
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
}

/// Distances after applying the spacing-based defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub min_distance: f64,
    pub d_register: f64,
    pub d_group: f64,
    pub d_max: f64,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Reads a TOML config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve_path(base, &self.output_dir);
        for input in &mut self.inputs {
            input.path = resolve_path(base, &input.path);
            if let Some(w) = &input.world_file {
                input.world_file = Some(resolve_path(base, w));
            }
        }
        if let Some(e) = &mut self.eval {
            e.truth = resolve_path(base, &e.truth);
        }
    }

    pub fn distances(&self) -> Result<Distances> {
        let spacing = self.field.intra_row;
        let pick = |value: Option<f64>, factor: f64, name: &str| {
            value.or(spacing.map(|s| factor * s)).ok_or_else(|| {
                Error::Config(format!("{name} is not set and field.intra_row is missing to derive it"))
            })
        };
        Ok(Distances {
            min_distance: pick(self.detect.min_distance, 0.5, "detect.min_distance")?,
            d_register: pick(self.align.d_register, 0.5, "align.d_register")?,
            d_group: pick(self.align.d_group, 0.25, "align.d_group")?,
            d_max: pick(self.catalog.d_max, 0.4, "catalog.d_max")?,
        })
    }

    pub fn align_params(&self) -> Result<AlignParams> {
        let d = self.distances()?;
        Ok(AlignParams {
            d_register: d.d_register,
            d_group: d.d_group,
            cpd: CpdOptions {
                w: self.align.w,
                max_iters: self.align.max_iters,
                tol: self.align.tol,
                ..CpdOptions::default()
            },
        })
    }

    pub fn blur(&self) -> BlurSpec {
        BlurSpec {
            sigma_min: self.detect.sigma_min,
            sigma_max: self.detect.sigma_max,
            c_cutoff: self.detect.c_cutoff.unwrap_or(self.segment.cover_cutoff),
        }
    }

    pub fn utm_zone(&self) -> Result<Option<UtmZone>> {
        self.catalog.utm_zone.as_deref().map(str::parse).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.inputs.is_empty() {
            return cfg("no inputs configured".into());
        }
        let mut dates: Vec<NaiveDate> = self.inputs.iter().map(|i| i.date).collect();
        dates.sort();
        if dates.windows(2).any(|w| w[0] == w[1]) {
            return cfg("two inputs share the same date".into());
        }
        for input in &self.inputs {
            if !input.path.exists() {
                return cfg(format!("input {} does not exist", input.path.display()));
            }
            if let Some(w) = &input.world_file {
                if !w.exists() {
                    return cfg(format!("world file {} does not exist", w.display()));
                }
            }
        }
        if let Some(e) = &self.eval {
            if !e.truth.exists() {
                return cfg(format!("truth file {} does not exist", e.truth.display()));
            }
            if !(e.tolerance > 0.0) {
                return cfg(format!("eval tolerance must be positive, got {}", e.tolerance));
            }
        }
        self.blur().validate()?;
        let d = self.distances()?;
        if !(d.min_distance > 0.0) {
            return cfg(format!("detect.min_distance must be positive, got {}", d.min_distance));
        }
        if !(d.d_group > 0.0 && d.d_group < d.d_register) {
            return cfg(format!(
                "alignment needs 0 < d_group < d_register, got d_group={} d_register={}",
                d.d_group, d.d_register
            ));
        }
        if !(d.d_max > 0.0) {
            return cfg(format!("catalog.d_max must be positive, got {}", d.d_max));
        }
        if !(self.lines.theta_d > 0.0) {
            return cfg(format!("lines.theta_d must be positive, got {}", self.lines.theta_d));
        }
        if !(self.segment.cover_cutoff > 0.0 && self.segment.cover_cutoff <= 1.0) {
            return cfg(format!("segment.cover_cutoff must lie in (0, 1], got {}", self.segment.cover_cutoff));
        }
        if !(0.0..1.0).contains(&self.align.w) {
            return cfg(format!("align.w must lie in [0, 1), got {}", self.align.w));
        }
        if self.extract.enabled && (self.extract.frame_px == 0 || self.extract.frame_px % 2 != 0) {
            return cfg(format!("extract.frame_px must be even and positive, got {}", self.extract.frame_px));
        }
        self.utm_zone()?;
        Ok(())
    }

    pub fn load_options(&self, input: &InputSpec) -> LoadOptions {
        LoadOptions {
            channels: input.channels.clone(),
            world_file: input.world_file.clone(),
            geo: None,
            nodata: self.segment.nodata,
        }
    }

    /// Acquisitions in input order, days counted from the earliest date.
    pub fn acquisitions(&self) -> Vec<Acquisition> {
        let first = self.inputs.iter().map(|i| i.date).min().expect("validated non-empty");
        self.inputs
            .iter()
            .map(|i| Acquisition {
                date: i.date,
                day: (i.date - first).num_days(),
            })
            .collect()
    }
}

/// Segmentation outcome of one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateSummary {
    pub date: NaiveDate,
    pub day: i64,
    pub input: PathBuf,
    pub cover_ratio: f64,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub usable: bool,
    pub peaks: usize,
    pub sigma: Option<f64>,
}

/// Segments a raster and, if the date is usable, detects peaks.
pub fn segment_and_detect(
    raster: &Raster,
    acquisition: Acquisition,
    cfg: &PipelineConfig,
) -> Result<(SegmentationResult, Option<PeakLayer>)> {
    let vi = compute_vi(raster, cfg.segment.vi, cfg.segment.osavi_y).map_err(|e| e.in_stage("segment", Some(acquisition.date.to_string())))?;
    let seg = segment(&vi, &cfg.segment.params()).map_err(|e| e.in_stage("segment", Some(acquisition.date.to_string())))?;
    if !seg.usable {
        return Ok((seg, None));
    }
    let d = cfg.distances()?;
    let params = DetectParams {
        blur: cfg.blur(),
        min_distance_px: (d.min_distance / raster.geo().pixel_size()).max(1.0),
        min_intensity: cfg.detect.min_intensity,
    };
    let peaks = detect_layer(&seg.mask, raster.width(), raster.height(), raster.geo(), acquisition, seg.cover_ratio, &params)
        .map_err(|e| e.in_stage("detect", Some(acquisition.date.to_string())))?;
    Ok((seg, Some(peaks)))
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Result of a run, mirrored by `manifest.json`.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub catalog: PlantCatalog,
    pub dates: Vec<DateSummary>,
    pub alignments: Vec<(NaiveDate, LayerAlignment)>,
    pub lines: SeedingLines,
    pub growth: Option<GrowthFit>,
    pub evaluation: Option<EvalSummary>,
    /// Per used date in processing order: raw positions rejected as weeds.
    pub weeds: Vec<(NaiveDate, Vec<Point>)>,
    /// Per used date in processing order: all detections and their weed verdict.
    pub detections: Vec<(NaiveDate, Vec<Point>, Vec<bool>)>,
    pub timings: Vec<StageTiming>,
}

struct Timer {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn points_json(points: &[Point]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

fn to_points(v: &[[f64; 2]]) -> Vec<Point> {
    v.iter().map(|&[x, y]| Point::new(x, y)).collect()
}

/// One entry of `aligned.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedLayer {
    pub date: NaiveDate,
    /// Centralized and aligned positions.
    pub positions: Vec<[f64; 2]>,
    /// The same detections in the date's own CRS frame.
    pub raw: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedAlignment {
    pub date: NaiveDate,
    pub alignment: LayerAlignment,
}

/// Contents of `transforms.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub x_mean: [f64; 2],
    /// Used dates, lowest cover first.
    pub order: Vec<NaiveDate>,
    pub layers: Vec<DatedAlignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedMask {
    pub date: NaiveDate,
    pub valid: Vec<bool>,
}

/// Contents of `lines.json`: the seeding lines and the weed verdict per aligned layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinesFile {
    pub alpha_s_deg: f64,
    #[serde(flatten)]
    pub lines: SeedingLines,
    pub theta_d: f64,
    pub weed_mask: Vec<DatedMask>,
}

/// Orders peak layers by cover, centralizes and aligns them.
pub fn align_stage(layers: &[PeakLayer], params: &AlignParams) -> Result<(TransformsFile, Vec<AlignedLayer>)> {
    if layers.is_empty() {
        return Err(Error::InsufficientData("no usable dates".into()));
    }
    let keys: Vec<(f64, NaiveDate)> = layers.iter().map(|p| (p.cover_ratio, p.date)).collect();
    let order: Vec<&PeakLayer> = order_by_cover(&keys).into_iter().map(|i| &layers[i]).collect();
    let raw: Vec<Vec<Point>> = order.iter().map(|p| to_points(&p.positions_crs)).collect();
    let centred = centralize(&raw)?;
    let (aligned, alignments) = align_all(&centred.layers, params)?;
    let transforms = TransformsFile {
        x_mean: [centred.mean.x, centred.mean.y],
        order: order.iter().map(|p| p.date).collect(),
        layers: order
            .iter()
            .zip(alignments)
            .map(|(p, alignment)| DatedAlignment { date: p.date, alignment })
            .collect(),
    };
    let aligned = order
        .iter()
        .zip(&aligned)
        .map(|(p, pts)| AlignedLayer {
            date: p.date,
            positions: points_json(pts),
            raw: p.positions_crs.clone(),
        })
        .collect();
    Ok((transforms, aligned))
}

/// Finds the seeding lines in the pooled aligned points and flags weeds per layer.
pub fn lines_stage(aligned: &[AlignedLayer], params: &LineParams, theta_d: f64) -> Result<LinesFile> {
    let pooled: Vec<Point> = aligned.iter().flat_map(|l| to_points(&l.positions)).collect();
    let lines = recognize_lines(&pooled, params)?;
    let weed_mask = aligned
        .iter()
        .map(|l| {
            let mask = filter_weed(&to_points(&l.positions), &lines, theta_d)?;
            Ok(DatedMask { date: l.date, valid: mask.valid })
        })
        .collect::<Result<_>>()?;
    Ok(LinesFile {
        alpha_s_deg: lines.alpha_s.to_degrees(),
        lines,
        theta_d,
        weed_mask,
    })
}

/// Builds the catalog from the align and lines artifacts. `all_dates` adds
/// dates without detections, which receive indirect positions only.
pub fn catalog_stage(
    aligned: &[AlignedLayer],
    transforms: &TransformsFile,
    lines: &LinesFile,
    all_dates: &[NaiveDate],
    params: &CatalogParams,
) -> Result<PlantCatalog> {
    let mismatch = |what: &str| Err(Error::format("pipeline artifacts", format!("{what} do not match the aligned layers")));
    if transforms.layers.len() != aligned.len() || transforms.layers.iter().zip(aligned).any(|(t, a)| t.date != a.date) {
        return mismatch("transforms");
    }
    if lines.weed_mask.len() != aligned.len()
        || lines.weed_mask.iter().zip(aligned).any(|(m, a)| m.date != a.date || m.valid.len() != a.positions.len())
    {
        return mismatch("weed masks");
    }
    let layers: Vec<CatalogLayer> = aligned
        .iter()
        .zip(&transforms.layers)
        .zip(&lines.weed_mask)
        .map(|((a, t), m)| {
            let keep = |pts: &[[f64; 2]]| -> Vec<Point> {
                pts.iter().zip(&m.valid).filter(|(_, &v)| v).map(|(&[x, y], _)| Point::new(x, y)).collect()
            };
            CatalogLayer {
                date: a.date,
                transform: t.alignment.transform,
                raw: keep(&a.raw),
                aligned: keep(&a.positions),
            }
        })
        .collect();
    let mut dates: Vec<NaiveDate> = all_dates.iter().chain(&transforms.order).copied().collect();
    dates.sort();
    dates.dedup();
    let [x, y] = transforms.x_mean;
    build_catalog(&layers, &dates, Point::new(x, y), &lines.lines, params)
}

/// Runs every stage and writes all artifacts plus `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.jobs.unwrap_or(0))))?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let out = &cfg.output_dir;
    let started = chrono::Utc::now();
    let mut timer = Timer::new();
    let dist = cfg.distances()?;
    for sub in ["masks", "peaks"] {
        mkdir(&out.join(sub))?;
    }

    // Segment and detect, one date at a time per worker.
    let acquisitions = cfg.acquisitions();
    let per_date: Vec<(DateSummary, Option<PeakLayer>)> = cfg
        .inputs
        .par_iter()
        .zip(&acquisitions)
        .map(|(input, &acq)| {
            let date = Some(acq.date.to_string());
            let raster = load_raster(&input.path, &cfg.load_options(input)).map_err(|e| e.in_stage("load", date.clone()))?;
            let (seg, peaks) = segment_and_detect(&raster, acq, cfg)?;
            save_mask_png(&out.join("masks").join(format!("{}.png", acq.date)), &seg.mask, raster.width(), raster.height(), raster.geo())
                .map_err(|e| e.in_stage("segment", date.clone()))?;
            if let Some(p) = &peaks {
                write_json(&out.join("peaks").join(format!("{}.json", acq.date)), p).map_err(|e| e.in_stage("detect", date))?;
            }
            let summary = DateSummary {
                date: acq.date,
                day: acq.day,
                input: input.path.clone(),
                cover_ratio: seg.cover_ratio,
                threshold: seg.threshold,
                threshold_source: seg.threshold_source,
                usable: seg.usable,
                peaks: peaks.as_ref().map_or(0, |p| p.positions_crs.len()),
                sigma: peaks.as_ref().map(|p| p.sigma),
            };
            Ok((summary, peaks))
        })
        .collect::<Result<_>>()?;
    let mut per_date = per_date;
    per_date.sort_by_key(|(s, _)| s.date);
    let summaries: Vec<DateSummary> = per_date.iter().map(|(s, _)| s.clone()).collect();
    write_json(&out.join("dates.json"), &summaries)?;
    timer.lap("segment+detect");

    let series: Vec<(f64, f64)> = summaries.iter().map(|s| (s.day as f64, s.cover_ratio)).collect();
    let growth = match fit_growth(&series, &FitOptions::default()) {
        Ok(fit) => Some(fit),
        Err(e) => {
            log::warn!("growth fit skipped: {e}");
            None
        }
    };
    write_json(&out.join("growth.json"), &json!({"series": series, "fit": growth}))?;
    timer.lap("growth");

    let used: Vec<PeakLayer> = per_date.into_iter().filter_map(|(_, p)| p).collect();
    let (transforms, aligned) = align_stage(&used, &cfg.align_params()?).map_err(|e| e.in_stage("align", None))?;
    write_json(&out.join("transforms.json"), &transforms)?;
    write_json(&out.join("aligned.json"), &aligned)?;
    timer.lap("align");

    let lines = lines_stage(&aligned, &cfg.lines.params, cfg.lines.theta_d).map_err(|e| e.in_stage("lines", None))?;
    write_json(&out.join("lines.json"), &lines)?;
    let mut weeds = Vec::new();
    let mut detections = Vec::new();
    for (layer, mask) in aligned.iter().zip(&lines.weed_mask) {
        let raw = to_points(&layer.raw);
        weeds.push((layer.date, raw.iter().zip(&mask.valid).filter(|(_, &v)| !v).map(|(p, _)| *p).collect::<Vec<_>>()));
        detections.push((layer.date, raw, mask.valid.clone()));
    }
    write_json(
        &out.join("weeds.json"),
        &weeds.iter().map(|(d, p)| json!({"date": d, "positions": points_json(p)})).collect::<Vec<_>>(),
    )?;
    timer.lap("lines");

    let all_dates: Vec<NaiveDate> = summaries.iter().map(|s| s.date).collect();
    let params = CatalogParams {
        d_max: dist.d_max,
        min_direct: cfg.catalog.min_direct,
    };
    let catalog = catalog_stage(&aligned, &transforms, &lines, &all_dates, &params).map_err(|e| e.in_stage("catalog", None))?;
    timer.lap("catalog");

    write_json(&out.join("catalog.json"), &catalog)?;
    write_text(&out.join("catalog.csv"), &to_csv(&catalog)?)?;
    write_json(&out.join("catalog.geojson"), &to_geojson(&catalog))?;
    write_text(&out.join("catalog.kml"), &to_kml(&catalog, cfg.utm_zone()?)?)?;
    timer.lap("export");

    if cfg.extract.enabled {
        let tiles_dir = out.join("tiles");
        for (input, acq) in cfg.inputs.iter().zip(&acquisitions) {
            let date = Some(acq.date.to_string());
            let raster = load_raster(&input.path, &cfg.load_options(input)).map_err(|e| e.in_stage("extract", date.clone()))?;
            let tiles = extract_date_tiles(&catalog, acq.date, &raster, cfg.extract.frame_px).map_err(|e| e.in_stage("extract", date.clone()))?;
            save_tiles(&tiles, &tiles_dir).map_err(|e| e.in_stage("extract", date))?;
        }
        timer.lap("extract");
    }

    let evaluation = match &cfg.eval {
        Some(e) => {
            let truth = read_truth(&e.truth)?;
            let summary = report(&evaluate_catalog(&catalog, &truth, e.tolerance)?).map_err(|err| err.in_stage("eval", None))?;
            write_json(&out.join("eval.json"), &summary)?;
            write_text(&out.join("eval.csv"), &summary.to_csv()?)?;
            timer.lap("eval");
            Some(summary)
        }
        None => None,
    };

    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "started": started.to_rfc3339(),
        "finished": chrono::Utc::now().to_rfc3339(),
        "seed": cfg.seed,
        "config": cfg,
        "distances": dist,
        "dates": summaries,
        "processing_order": transforms.order,
        "plants": catalog.plants.len(),
        "lines": lines.lines.y_star.len(),
        "alpha_s_deg": lines.alpha_s_deg,
        "timings": timer.timings,
    });
    write_json(&out.join("manifest.json"), &manifest)?;

    Ok(PipelineOutput {
        catalog,
        dates: summaries,
        alignments: transforms.layers.into_iter().map(|l| (l.date, l.alignment)).collect(),
        lines: lines.lines,
        growth,
        evaluation,
        weeds,
        detections,
        timings: timer.timings,
    })
}

/// Config for a field written by [`SynthField::write`] into `data_dir`, with
/// paths relative to `data_dir`.
pub fn synth_config(field: &SynthField, output_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: output_dir.to_path_buf(),
        jobs: None,
        seed: field.seed,
        inputs: (0..field.dates.len())
            .map(|k| InputSpec {
                path: PathBuf::from(field.raster_file_name(k)),
                date: field.dates[k].acquisition.date,
                world_file: None,
                channels: Vec::new(),
            })
            .collect(),
        field: FieldConfig {
            intra_row: Some(field.spec.intra_row),
        },
        segment: SegmentConfig::default(),
        detect: DetectConfig {
            sigma_min: 2.0,
            sigma_max: 15.0,
            c_cutoff: None,
            min_distance: None,
            min_intensity: default_min_intensity(),
        },
        // Injected shifts reach 0.5 × intra-row, so the subset radius follows the
        // line distance; dense late layers match only part of the basis.
        align: AlignConfig {
            d_register: Some(0.5 * field.spec.inter_row),
            w: 0.3,
            ..AlignConfig::default()
        },
        lines: LinesConfig::default(),
        catalog: CatalogConfig::default(),
        extract: ExtractConfig::default(),
        eval: Some(EvalConfig {
            truth: PathBuf::from("truth.geojson"),
            tolerance: default_tolerance(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, random_transforms, FieldSpec, TransformBounds};

    fn small_field(seed: u64) -> SynthField {
        let days = vec![0, 14, 28, 42];
        let spec = FieldSpec {
            n_lines: 6,
            plants_per_line: 14,
            width: 700,
            height: 700,
            origin: [1000.0, 2003.5],
            transforms: random_transforms(days.len(), &TransformBounds::default(), seed),
            days,
            ..FieldSpec::reference(seed)
        };
        generate(&spec, seed).unwrap()
    }

    fn write_small(dir: &Path) -> PipelineConfig {
        let field = small_field(11);
        field.write(dir).unwrap();
        let mut cfg = synth_config(&field, Path::new("out"));
        cfg.resolve_paths(dir);
        cfg
    }

    const MINIMAL: &str = r#"
output_dir = "out"
[[inputs]]
path = "a.png"
date = "2024-05-01"
[field]
intra_row = 0.18
[detect]
sigma_min = 2.0
sigma_max = 15.0
"#;

    fn load_str(text: &str) -> Result<PipelineConfig> {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        PipelineConfig::load(&path)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = load_str(MINIMAL).unwrap();
        let d = cfg.distances().unwrap();
        assert!((d.d_register - 0.09).abs() < 1e-12);
        assert!((d.d_group - 0.045).abs() < 1e-12);
        assert!((d.d_max - 0.072).abs() < 1e-12);
        assert_eq!(cfg.lines.params, LineParams::default());
        assert_eq!(cfg.blur().c_cutoff, 0.75);
        assert!(cfg.inputs[0].path.is_absolute());
    }

    #[test]
    fn group_radius_must_be_below_register_radius() {
        let text = format!("{MINIMAL}[align]\nd_register = 0.05\nd_group = 0.05\n");
        assert!(load_str(&text).unwrap_err().is_config());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let missing_spacing = MINIMAL.replace("intra_row = 0.18", "");
        assert!(load_str(&missing_spacing).unwrap_err().is_config());
        let missing_input = MINIMAL.replace("a.png", "b.png");
        assert!(load_str(&missing_input).unwrap_err().is_config());
        let unknown = format!("{MINIMAL}[align]\nradius = 1.0\n");
        assert!(load_str(&unknown).unwrap_err().is_config());
        let bad_zone = format!("{MINIMAL}[catalog]\nutm_zone = \"99Q\"\n");
        assert!(load_str(&bad_zone).unwrap_err().is_config());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small(dir.path());
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn small_field_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small(dir.path());
        let out = run_pipeline(&cfg).unwrap();
        for name in ["manifest.json", "catalog.json", "catalog.csv", "catalog.geojson", "catalog.kml", "lines.json", "transforms.json", "eval.json", "dates.json"] {
            assert!(cfg.output_dir.join(name).exists(), "{name}");
        }
        assert_eq!(out.lines.y_star.len(), 6);
        let n = out.catalog.plants.len();
        assert!((80..=88).contains(&n), "{n} plants");
        for plant in &out.catalog.plants {
            assert_eq!(plant.members.len(), 4);
        }
        let eval = out.evaluation.unwrap();
        assert!(eval.mean_precision > 0.9 && eval.mean_recall > 0.9, "{eval:?}");

        // Rerun into a second directory: identical catalog bytes.
        let mut again = cfg.clone();
        again.output_dir = dir.path().join("out2");
        run_pipeline(&again).unwrap();
        for name in ["catalog.json", "catalog.csv", "catalog.geojson", "transforms.json"] {
            let a = std::fs::read(cfg.output_dir.join(name)).unwrap();
            let b = std::fs::read(again.output_dir.join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
}
