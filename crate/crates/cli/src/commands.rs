use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use plantcat_core::catalog::{extract_date_tiles, save_tiles, to_csv, to_geojson, to_kml, CatalogParams, PlantCatalog, UtmZone};
use plantcat_core::detect::{detect_layer, BlurSpec, DetectParams, PeakLayer};
use plantcat_core::evalkit::{evaluate_catalog, read_truth, report, TOLERANCE_ROW_CROP};
use plantcat_core::growth::{fit_growth, FitOptions};
use plantcat_core::pipeline::{
    align_stage, catalog_stage, lines_stage, read_json, run_pipeline, synth_config, write_json, AlignedLayer, LinesConfig,
    LinesFile, PipelineConfig, SegmentConfig, TransformsFile,
};
use plantcat_core::raster::{load_raster, save_mask_png, Acquisition, LoadOptions};
use plantcat_core::register::{AlignParams, CpdOptions};
use plantcat_core::synth::{generate, random_transforms, FieldSpec, TransformBounds};
use plantcat_core::vegidx::{compute_vi, segment, ThresholdSource, ViKind};
use plantcat_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{AlignArgs, CatalogArgs, Cli, Command, DetectArgs, EvalArgs, ExtractArgs, FitGrowthArgs, LinesArgs, RunArgs, SegmentArgs, SynthArgs};

const DEFAULT_SEED: u64 = 42;

/// Contents of the `segment --stats` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentStats {
    pub date: NaiveDate,
    pub input: PathBuf,
    pub vi_kind: ViKind,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub cover_ratio: f64,
    pub usable: bool,
}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    Error::Config(message.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config_error(format!("{} does not exist", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

/// First `YYYY-MM-DD` in the file name.
fn date_from_name(path: &Path) -> Option<NaiveDate> {
    let name = path.file_name()?.to_str()?;
    (0..name.len().saturating_sub(9))
        .filter(|&i| name.is_char_boundary(i) && name.is_char_boundary(i + 10))
        .find_map(|i| NaiveDate::parse_from_str(&name[i..i + 10], "%Y-%m-%d").ok())
}

fn date_for(date: Option<NaiveDate>, path: &Path) -> Result<NaiveDate> {
    date.or_else(|| date_from_name(path))
        .ok_or_else(|| config_error(format!("no --date given and none in the name of {}", path.display())))
}

struct Defaults {
    config: Option<PipelineConfig>,
}

impl Defaults {
    fn new(cli: &Cli) -> Result<Self> {
        let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
        Ok(Self { config })
    }

    fn segment(&self) -> SegmentConfig {
        self.config.as_ref().map(|c| c.segment.clone()).unwrap_or_default()
    }

    fn lines(&self) -> LinesConfig {
        self.config.as_ref().map(|c| c.lines.clone()).unwrap_or_default()
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_error(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Run(a) => run(cli, a),
        command => {
            let ctx = Defaults::new(cli)?;
            match command {
                Command::Segment(a) => segment_cmd(&ctx, a),
                Command::FitGrowth(a) => fit_growth_cmd(a),
                Command::Detect(a) => detect(&ctx, a),
                Command::Align(a) => align(&ctx, a),
                Command::Lines(a) => lines(&ctx, a),
                Command::Catalog(a) => catalog(&ctx, a),
                Command::Extract(a) => extract(&ctx, a),
                Command::Eval(a) => eval(&ctx, a),
                Command::Synth(_) | Command::Run(_) => unreachable!(),
            }
        }
    }
}

/// Reference layout with the keys of `overrides` replaced. New acquisition days
/// without explicit transforms get fresh random transforms.
fn spec_with_overrides(overrides: &Value, seed: u64) -> Result<FieldSpec> {
    let Value::Object(fields) = overrides else {
        return Err(config_error("field spec must be a JSON object"));
    };
    let mut base = serde_json::to_value(FieldSpec::reference(seed))?;
    let slots = base.as_object_mut().expect("struct serializes to an object");
    for (key, value) in fields {
        if !slots.contains_key(key) {
            return Err(config_error(format!("unknown field spec key `{key}`")));
        }
        slots.insert(key.clone(), value.clone());
    }
    let mut spec: FieldSpec = serde_json::from_value(base).map_err(|e| config_error(format!("field spec: {e}")))?;
    if fields.contains_key("days") && !fields.contains_key("transforms") {
        spec.transforms = random_transforms(spec.days.len(), &TransformBounds::default(), seed);
    }
    Ok(spec)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let spec = match &args.spec {
        Some(path) => {
            require_file(path)?;
            spec_with_overrides(&read_json::<Value>(path)?, seed)?
        }
        None => FieldSpec::reference(seed),
    };
    let field = generate(&spec, seed).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        e => e,
    })?;
    field.write(&args.out)?;
    let config = synth_config(&field, Path::new("run"));
    let toml_path = args.out.join("pipeline.toml");
    std::fs::write(&toml_path, config.to_toml()?).with_context(|| format!("writing {}", toml_path.display()))?;
    println!(
        "{} plants, {} weeds, {} dates written to {}; run with --config {}",
        field.plants.len(),
        field.weeds.len(),
        field.dates.len(),
        args.out.display(),
        toml_path.display()
    );
    Ok(())
}

fn segment_cmd(ctx: &Defaults, args: &SegmentArgs) -> Result<()> {
    require_file(&args.input)?;
    let date = date_for(args.date, &args.input)?;
    let mut seg = ctx.segment();
    if let Some(vi) = args.vi {
        seg.vi = vi;
    }
    if let Some(t) = args.fixed_threshold {
        seg.fixed_threshold = Some(t);
    }
    if let Some(c) = args.cover_cutoff {
        seg.cover_cutoff = c;
    }
    let stage = |e: Error| e.in_stage("segment", Some(date.to_string()));
    let opts = LoadOptions {
        nodata: seg.nodata,
        ..LoadOptions::default()
    };
    let raster = load_raster(&args.input, &opts).map_err(stage)?;
    let vi = compute_vi(&raster, seg.vi, seg.osavi_y).map_err(stage)?;
    let result = segment(&vi, &seg.params()).map_err(stage)?;
    create_parent(&args.out)?;
    save_mask_png(&args.out, &result.mask, raster.width(), raster.height(), raster.geo())?;
    let stats = SegmentStats {
        date,
        input: args.input.clone(),
        vi_kind: seg.vi,
        threshold: result.threshold,
        threshold_source: result.threshold_source,
        cover_ratio: result.cover_ratio,
        usable: result.usable,
    };
    create_parent(&args.stats)?;
    write_json(&args.stats, &stats)?;
    println!(
        "{date}: cover {:.4}, threshold {:.4} ({:?}), {}",
        result.cover_ratio,
        result.threshold,
        result.threshold_source,
        if result.usable { "usable" } else { "not usable" }
    );
    Ok(())
}

fn fit_growth_cmd(args: &FitGrowthArgs) -> Result<()> {
    let mut stats = Vec::with_capacity(args.stats.len());
    for path in &args.stats {
        require_file(path)?;
        stats.push(read_json::<SegmentStats>(path)?);
    }
    stats.sort_by_key(|s| s.date);
    let first = stats[0].date;
    let series: Vec<(f64, f64)> = stats.iter().map(|s| ((s.date - first).num_days() as f64, s.cover_ratio)).collect();
    let opts = FitOptions {
        ignore_dying: args.ignore_dying,
        ..FitOptions::default()
    };
    let fit = fit_growth(&series, &opts).map_err(|e| e.in_stage("growth", None))?;
    create_parent(&args.out)?;
    write_json(&args.out, &json!({"series": series, "fit": fit}))?;
    println!("{:?} branch, residual {:.3e}, g {:.4}", fit.branch, fit.rss, fit.params.g);
    Ok(())
}

fn detect(ctx: &Defaults, args: &DetectArgs) -> Result<()> {
    require_file(&args.mask)?;
    let date = date_for(args.date, &args.mask)?;
    let cfg = ctx.config.as_ref();
    let missing = |flag: &str| config_error(format!("--{flag} is required without a --config"));
    let blur = BlurSpec {
        sigma_min: args.sigma_min.or(cfg.map(|c| c.detect.sigma_min)).ok_or_else(|| missing("sigma-min"))?,
        sigma_max: args.sigma_max.or(cfg.map(|c| c.detect.sigma_max)).ok_or_else(|| missing("sigma-max"))?,
        c_cutoff: args.c_cutoff.unwrap_or_else(|| cfg.map_or(ctx.segment().cover_cutoff, |c| c.blur().c_cutoff)),
    };
    blur.validate()?;
    let min_distance = match args.min_distance {
        Some(d) => d,
        None => cfg.ok_or_else(|| missing("min-distance"))?.distances()?.min_distance,
    };
    let min_intensity = args.min_intensity.or(cfg.map(|c| c.detect.min_intensity)).unwrap_or(0.1);
    let opts = LoadOptions {
        nodata: None,
        ..LoadOptions::default()
    };
    let stage = |e: Error| e.in_stage("detect", Some(date.to_string()));
    let mask_raster = load_raster(&args.mask, &opts).map_err(stage)?;
    let mask: Vec<bool> = mask_raster.plane(0).iter().map(|&v| v > 0.5).collect();
    let params = DetectParams {
        blur,
        min_distance_px: (min_distance / mask_raster.geo().pixel_size()).max(1.0),
        min_intensity,
    };
    let acquisition = Acquisition { date, day: args.day };
    let peaks = detect_layer(&mask, mask_raster.width(), mask_raster.height(), mask_raster.geo(), acquisition, args.cover, &params)
        .map_err(stage)?;
    create_parent(&args.out)?;
    write_json(&args.out, &peaks)?;
    println!("{date}: {} plants at sigma {:.2} px", peaks.positions_crs.len(), peaks.sigma);
    Ok(())
}

fn align(ctx: &Defaults, args: &AlignArgs) -> Result<()> {
    let mut layers = Vec::with_capacity(args.peaks.len());
    for path in &args.peaks {
        require_file(path)?;
        layers.push(read_json::<PeakLayer>(path)?);
    }
    let from_config = ctx.config.as_ref().map(PipelineConfig::align_params).transpose()?;
    let missing = |flag: &str| config_error(format!("--{flag} is required without a --config"));
    let mut cpd = from_config.map_or_else(CpdOptions::default, |p| p.cpd);
    if let Some(w) = args.w {
        cpd.w = w;
    }
    let params = AlignParams {
        d_register: args.d_register.or(from_config.map(|p| p.d_register)).ok_or_else(|| missing("d-register"))?,
        d_group: args.d_group.or(from_config.map(|p| p.d_group)).ok_or_else(|| missing("d-group"))?,
        cpd,
    };
    let (transforms, aligned) = align_stage(&layers, &params).map_err(|e| e.in_stage("align", None))?;
    create_parent(&args.out)?;
    create_parent(&args.transforms)?;
    write_json(&args.out, &aligned)?;
    write_json(&args.transforms, &transforms)?;
    for l in &transforms.layers {
        let t = &l.alignment.transform;
        println!(
            "{}: shift ({:+.4}, {:+.4}) m, rotation {:+.4} deg, scale {:.5}{}",
            l.date,
            t.shift[0],
            t.shift[1],
            t.angle.to_degrees(),
            t.scale,
            l.alignment.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
        );
    }
    Ok(())
}

fn lines(ctx: &Defaults, args: &LinesArgs) -> Result<()> {
    require_file(&args.aligned)?;
    let aligned: Vec<AlignedLayer> = read_json(&args.aligned)?;
    let cfg = ctx.lines();
    let theta_d = args.theta_d.unwrap_or(cfg.theta_d);
    let lines = lines_stage(&aligned, &cfg.params, theta_d).map_err(|e| e.in_stage("lines", None))?;
    create_parent(&args.out)?;
    write_json(&args.out, &lines)?;
    let rejected: usize = lines.weed_mask.iter().map(|m| m.valid.iter().filter(|&&v| !v).count()).sum();
    println!(
        "{} lines at {:.3} deg, spacing {:.3} m; {rejected} detections rejected as weeds",
        lines.lines.y_star.len(),
        lines.alpha_s_deg,
        lines.lines.median_distance
    );
    Ok(())
}

fn catalog(ctx: &Defaults, args: &CatalogArgs) -> Result<()> {
    for path in [&args.aligned, &args.transforms, &args.lines] {
        require_file(path)?;
    }
    let aligned: Vec<AlignedLayer> = read_json(&args.aligned)?;
    let transforms: TransformsFile = read_json(&args.transforms)?;
    let lines: LinesFile = read_json(&args.lines)?;
    let cfg = ctx.config.as_ref();
    let d_max = match args.d_max {
        Some(d) => d,
        None => cfg.ok_or_else(|| config_error("--d-max is required without a --config"))?.distances()?.d_max,
    };
    let params = CatalogParams {
        d_max,
        min_direct: args.min_direct.or(cfg.map(|c| c.catalog.min_direct)).unwrap_or(2),
    };
    let mut dates = args.dates.clone();
    if let Some(c) = cfg {
        dates.extend(c.inputs.iter().map(|i| i.date));
    }
    let zone: Option<UtmZone> = match &args.utm_zone {
        Some(z) => Some(z.parse()?),
        None => cfg.map(|c| c.utm_zone()).transpose()?.flatten(),
    };
    let catalog = catalog_stage(&aligned, &transforms, &lines, &dates, &params).map_err(|e| e.in_stage("catalog", None))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("catalog.json"), &catalog)?;
    std::fs::write(args.out.join("catalog.csv"), to_csv(&catalog)?)?;
    write_json(&args.out.join("catalog.geojson"), &to_geojson(&catalog))?;
    std::fs::write(args.out.join("catalog.kml"), to_kml(&catalog, zone)?)?;
    println!("{} plants over {} dates", catalog.plants.len(), catalog.dates.len());
    Ok(())
}

fn extract(ctx: &Defaults, args: &ExtractArgs) -> Result<()> {
    require_file(&args.catalog)?;
    let catalog: PlantCatalog = read_json(&args.catalog)?;
    let frame = args
        .frame
        .or(ctx.config.as_ref().map(|c| c.extract.frame_px))
        .unwrap_or(128);
    let mut inputs: Vec<(NaiveDate, PathBuf, LoadOptions)> = Vec::new();
    for spec in &args.inputs {
        let (date, path) = spec
            .split_once('=')
            .and_then(|(d, p)| Some((d.parse::<NaiveDate>().ok()?, PathBuf::from(p))))
            .ok_or_else(|| config_error(format!("--input expects DATE=PATH, got `{spec}`")))?;
        inputs.push((date, path, LoadOptions::default()));
    }
    if inputs.is_empty() {
        let cfg = ctx.config.as_ref().ok_or_else(|| config_error("no --input given and no --config"))?;
        inputs.extend(cfg.inputs.iter().map(|i| (i.date, i.path.clone(), cfg.load_options(i))));
    }
    let mut total = 0;
    for (date, path, opts) in &inputs {
        require_file(path)?;
        let stage = |e: Error| e.in_stage("extract", Some(date.to_string()));
        let raster = load_raster(path, opts).map_err(stage)?;
        let tiles = extract_date_tiles(&catalog, *date, &raster, frame).map_err(stage)?;
        total += save_tiles(&tiles, &args.out).map_err(stage)?.len();
    }
    println!("{total} tiles written to {}", args.out.display());
    Ok(())
}

fn eval(ctx: &Defaults, args: &EvalArgs) -> Result<()> {
    require_file(&args.catalog)?;
    require_file(&args.truth)?;
    let catalog: PlantCatalog = read_json(&args.catalog)?;
    let truth = read_truth(&args.truth)?;
    let tolerance = args
        .tolerance
        .or(ctx.config.as_ref().and_then(|c| c.eval.as_ref()).map(|e| e.tolerance))
        .unwrap_or(TOLERANCE_ROW_CROP);
    let summary = report(&evaluate_catalog(&catalog, &truth, tolerance)?).map_err(|e| e.in_stage("eval", None))?;
    create_parent(&args.out)?;
    std::fs::write(&args.out, summary.to_csv()?)?;
    write_json(&args.out.with_extension("json"), &summary)?;
    for r in &summary.reports {
        println!(
            "{}: precision {:.4} recall {:.4}",
            r.date.map_or_else(|| "-".into(), |d| d.to_string()),
            r.precision,
            r.recall
        );
    }
    println!("mean precision {:.4} recall {:.4}", summary.mean_precision, summary.mean_recall);
    Ok(())
}

fn run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let path = cli.config.as_deref().ok_or_else(|| config_error("run needs --config"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let output = run_pipeline(&cfg)?;
    let used = output.dates.iter().filter(|d| d.usable).count();
    println!(
        "{} plants on {} lines; {used} of {} dates usable; artifacts in {}",
        output.catalog.plants.len(),
        output.lines.y_star.len(),
        output.dates.len(),
        cfg.output_dir.display()
    );
    if let Some(e) = &output.evaluation {
        println!("mean precision {:.4} recall {:.4}", e.mean_precision, e.mean_recall);
    }
    Ok(())
}
