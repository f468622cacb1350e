//! Vegetation indices, cover ratios and plant/soil segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViKind {
    Gli,
    Ngrdi,
    Osavi,
}

impl ViKind {
    /// Fixed threshold used for the provisional cover ratio.
    pub fn fixed_threshold(self) -> f64 {
        match self {
            ViKind::Gli => 0.2,
            ViKind::Ngrdi => 0.0,
            ViKind::Osavi => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViKind::Gli => "gli",
            ViKind::Ngrdi => "ngrdi",
            ViKind::Osavi => "osavi",
        }
    }
}

impl std::str::FromStr for ViKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gli" => Ok(ViKind::Gli),
            "ngrdi" => Ok(ViKind::Ngrdi),
            "osavi" => Ok(ViKind::Osavi),
            other => Err(Error::Config(format!("unknown vegetation index `{other}`"))),
        }
    }
}

/// Default soil-adjustment term for OSAVI.
pub const OSAVI_Y: f64 = 0.6;

#[derive(Debug, Clone)]
pub struct ViImage {
    pub kind: ViKind,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub nodata: Vec<bool>,
}

impl ViImage {
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values
            .iter()
            .zip(&self.nodata)
            .filter(|(_, &nd)| !nd)
            .map(|(&v, _)| v)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Per-pixel vegetation index. `y` is only used by OSAVI and must be positive.
pub fn compute_vi(raster: &Raster, kind: ViKind, y: f64) -> Result<ViImage> {
    let n = raster.len();
    let mut values = vec![0.0; n];
    let mut nodata = raster.nodata().to_vec();
    let mut fill = |f: &dyn Fn(usize) -> Option<f64>| {
        for i in 0..n {
            if nodata[i] {
                continue;
            }
            match f(i) {
                Some(v) => values[i] = v,
                None => nodata[i] = true,
            }
        }
    };
    match kind {
        ViKind::Gli => {
            let (r, g, b) = rgb(raster)?;
            fill(&|i| {
                let (r, g, b) = (r[i] as f64, g[i] as f64, b[i] as f64);
                ratio(2.0 * g - r - b, 2.0 * g + r + b)
            });
        }
        ViKind::Ngrdi => {
            let (r, g, _) = rgb(raster)?;
            fill(&|i| {
                let (r, g) = (r[i] as f64, g[i] as f64);
                ratio(g - r, g + r)
            });
        }
        ViKind::Osavi => {
            if !(y > 0.0) {
                return Err(Error::InvalidParameter(format!("OSAVI Y must be positive, got {y}")));
            }
            let nir = raster.require_channel("NIR")?;
            let r = raster.require_channel("R")?;
            fill(&|i| {
                let (nir, r) = (nir[i] as f64, r[i] as f64);
                ratio(nir - r, nir + r + y)
            });
        }
    }
    Ok(ViImage {
        kind,
        width: raster.width(),
        height: raster.height(),
        values,
        nodata,
    })
}

fn rgb(raster: &Raster) -> Result<(&[f32], &[f32], &[f32])> {
    Ok((
        raster.require_channel("R")?,
        raster.require_channel("G")?,
        raster.require_channel("B")?,
    ))
}

/// Fraction of valid pixels with `v >= thresh`; 0 when no pixel is valid.
pub fn cover_ratio(vi: &ViImage, thresh: f64) -> f64 {
    let mut total = 0usize;
    let mut above = 0usize;
    for v in vi.valid_values() {
        total += 1;
        above += (v >= thresh) as usize;
    }
    if total == 0 {
        0.0
    } else {
        above as f64 / total as f64
    }
}

/// Histogram of the valid values over `[min, max]` split into `bins` equal bins.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Option<Self> {
        let (lo, hi) = values
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(lo < hi) || bins == 0 {
            return None;
        }
        let mut counts = vec![0u64; bins];
        let h = Histogram { lo, hi, counts: Vec::new() };
        for v in values {
            counts[h.bin_of(v, bins)] += 1;
        }
        Some(Histogram { counts, ..h })
    }

    fn bin_of(&self, v: f64, bins: usize) -> usize {
        let k = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        (k.max(0.0) as usize).min(bins - 1)
    }

    pub fn bin(&self, v: f64) -> usize {
        self.bin_of(v, self.counts.len())
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * (self.hi - self.lo) / self.counts.len() as f64
    }
}

/// Index of the last bin of the lower class maximizing between-class variance.
/// Ties go to the lowest split.
pub fn otsu_split(hist: &Histogram) -> Option<usize> {
    let total: f64 = hist.counts.iter().map(|&c| c as f64).sum();
    let sum_total: f64 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * hist.center(k))
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..hist.counts.len() - 1 {
        let c = hist.counts[k] as f64;
        w0 += c;
        sum0 += c * hist.center(k);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_total - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.map_or(true, |(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

/// Otsu threshold over a `bins`-bin histogram of the valid values.
///
/// The returned value lies halfway between the largest value of the lower class
/// and the smallest value of the upper class, so `v >= threshold` reproduces the
/// class split exactly.
pub fn otsu_threshold(vi: &ViImage, bins: usize) -> Result<f64> {
    let hist = Histogram::build(vi.valid_values(), bins)
        .ok_or_else(|| Error::Degenerate("Otsu threshold needs at least two distinct values".into()))?;
    let k = otsu_split(&hist)
        .ok_or_else(|| Error::Degenerate("histogram has a single occupied bin".into()))?;
    let mut lower_max = f64::NEG_INFINITY;
    let mut upper_min = f64::INFINITY;
    for v in vi.valid_values() {
        if hist.bin(v) <= k {
            lower_max = lower_max.max(v);
        } else {
            upper_min = upper_min.min(v);
        }
    }
    let mid = lower_max + (upper_min - lower_max) / 2.0;
    Ok(if mid > lower_max { mid } else { upper_min })
}

/// Nearest-rank percentile (`p` in (0, 100]) of the valid values.
pub fn percentile(vi: &ViImage, p: f64) -> Option<f64> {
    let mut vals: Vec<f64> = vi.valid_values().collect();
    if vals.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * vals.len() as f64).ceil().max(1.0) as usize;
    let idx = rank.min(vals.len()) - 1;
    let (_, v, _) = vals.select_nth_unstable_by(idx, f64::total_cmp);
    Some(*v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    Otsu,
    Percentile99,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Overrides the per-index fixed threshold for the provisional cover ratio.
    pub fixed_threshold: Option<f64>,
    /// Cover ratio above which single plants are no longer separable.
    pub cover_cutoff: f64,
    pub otsu_bins: usize,
    /// Provisional cover below which the percentile rule replaces Otsu.
    pub sparse_cover: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            fixed_threshold: None,
            cover_cutoff: 0.75,
            otsu_bins: 256,
            sparse_cover: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub mask: Vec<bool>,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub cover_ratio: f64,
    pub usable: bool,
}

pub fn segment(vi: &ViImage, params: &SegmentParams) -> Result<SegmentationResult> {
    let fixed = params.fixed_threshold.unwrap_or(vi.kind.fixed_threshold());
    let provisional = cover_ratio(vi, fixed);
    let (threshold, threshold_source) = if provisional < params.sparse_cover {
        let t = percentile(vi, 99.0)
            .ok_or_else(|| Error::InsufficientData("no valid pixels to segment".into()))?;
        (t, ThresholdSource::Percentile99)
    } else {
        (otsu_threshold(vi, params.otsu_bins)?, ThresholdSource::Otsu)
    };
    let mask: Vec<bool> = vi
        .values
        .iter()
        .zip(&vi.nodata)
        .map(|(&v, &nd)| !nd && v >= threshold)
        .collect();
    let cover = cover_ratio(vi, threshold);
    Ok(SegmentationResult {
        mask,
        threshold,
        threshold_source,
        cover_ratio: cover,
        usable: cover <= params.cover_cutoff,
    })
}
