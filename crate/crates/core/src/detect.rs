//! Plant-center candidates: adaptive Gaussian blur of the plant mask followed by
//! local-maximum peak finding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Acquisition, GeoTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Cover ratio at which the bandwidth reaches `sigma_max`.
    pub c_cutoff: f64,
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::Config(format!(
                "blur bandwidth needs 0 < sigma_min <= sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.c_cutoff > 0.0) {
            return Err(Error::Config("blur c_cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Bandwidth interpolated linearly in the cover ratio, saturating at `c_cutoff`.
pub fn adaptive_sigma(c: f64, spec: &BlurSpec) -> f64 {
    let frac = (c.max(0.0) / spec.c_cutoff).min(1.0);
    spec.sigma_min + (spec.sigma_max - spec.sigma_min) * frac
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` with the edge sample repeated (`... b a | a b ...`).
pub fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable convolution of a row-major `width`×`height` image with the
/// normalized Gaussian of bandwidth `sigma` pixels, reflecting at the borders.
pub fn gaussian_blur(image: &[f64], width: usize, height: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("blur sigma must be positive, got {sigma}")));
    }
    if image.len() != width * height {
        return Err(Error::InvalidParameter("image shape mismatch".into()));
    }
    if image.is_empty() {
        return Ok(Vec::new());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;

    let mut horiz = vec![0.0; width * height];
    horiz
        .par_chunks_mut(width)
        .zip(image.par_chunks(width))
        .for_each_init(
            || vec![0.0; width + 2 * r as usize],
            |padded, (out, row)| {
                for (j, p) in padded.iter_mut().enumerate() {
                    *p = row[reflect(j as i64 - r, width)];
                }
                for (x, o) in out.iter_mut().enumerate() {
                    *o = kernel
                        .iter()
                        .zip(&padded[x..x + kernel.len()])
                        .map(|(k, v)| k * v)
                        .sum();
                }
            },
        );

    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, orow)| {
        for (k, &w) in kernel.iter().enumerate() {
            let src = reflect(y as i64 + k as i64 - r, height);
            let srow = &horiz[src * width..(src + 1) * width];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += w * s;
            }
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub col: usize,
    pub row: usize,
    pub intensity: f64,
}

/// Local maxima over the 8-neighbourhood with intensity at least `min_intensity`,
/// thinned greedily in descending intensity so that accepted peaks are at least
/// `min_distance` pixels apart. Equal intensities are visited in (row, col) order.
pub fn find_peaks(
    image: &[f64],
    width: usize,
    height: usize,
    min_distance: f64,
    min_intensity: f64,
) -> Result<Vec<Peak>> {
    if !(min_distance >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "min_distance must be at least 1 px, got {min_distance}"
        )));
    }
    if image.len() != width * height {
        return Err(Error::InvalidParameter("image shape mismatch".into()));
    }
    let mut candidates: Vec<Peak> = (0..height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let r0 = row.saturating_sub(1);
            let r1 = (row + 1).min(height - 1);
            (0..width).filter_map(move |col| {
                let v = image[row * width + col];
                if !(v >= min_intensity) {
                    return None;
                }
                let c0 = col.saturating_sub(1);
                let c1 = (col + 1).min(width - 1);
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        if image[rr * width + cc] > v {
                            return None;
                        }
                    }
                }
                Some(Peak {
                    col,
                    row,
                    intensity: v,
                })
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.intensity
            .total_cmp(&a.intensity)
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });

    // Accepted peaks bucketed on a grid of min_distance cells.
    let cell = min_distance;
    let gw = (width as f64 / cell).floor() as usize + 1;
    let gh = (height as f64 / cell).floor() as usize + 1;
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); gw * gh];
    let mut accepted: Vec<Peak> = Vec::new();
    let md2 = min_distance * min_distance;
    for p in candidates {
        let gx = (p.col as f64 / cell) as usize;
        let gy = (p.row as f64 / cell) as usize;
        let mut clear = true;
        'scan: for yy in gy.saturating_sub(1)..=(gy + 1).min(gh - 1) {
            for xx in gx.saturating_sub(1)..=(gx + 1).min(gw - 1) {
                for &i in &grid[yy * gw + xx] {
                    let q = &accepted[i as usize];
                    let dx = q.col as f64 - p.col as f64;
                    let dy = q.row as f64 - p.row as f64;
                    if dx * dx + dy * dy < md2 {
                        clear = false;
                        break 'scan;
                    }
                }
            }
        }
        if clear {
            grid[gy * gw + gx].push(accepted.len() as u32);
            accepted.push(p);
        }
    }
    Ok(accepted)
}

/// Detected plant positions of one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakLayer {
    pub date: chrono::NaiveDate,
    pub day: i64,
    pub cover_ratio: f64,
    pub sigma: f64,
    pub positions_px: Vec<[usize; 2]>,
    pub positions_crs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub blur: BlurSpec,
    pub min_distance_px: f64,
    pub min_intensity: f64,
}

/// Blurs a plant mask with the cover-adapted bandwidth and converts peaks to CRS coordinates.
pub fn detect_layer(
    mask: &[bool],
    width: usize,
    height: usize,
    geo: &GeoTransform,
    acquisition: Acquisition,
    cover_ratio: f64,
    params: &DetectParams,
) -> Result<PeakLayer> {
    params.blur.validate()?;
    let sigma = adaptive_sigma(cover_ratio, &params.blur);
    let image: Vec<f64> = mask.iter().map(|&m| m as u8 as f64).collect();
    let blurred = gaussian_blur(&image, width, height, sigma)?;
    let peaks = find_peaks(&blurred, width, height, params.min_distance_px, params.min_intensity)?;
    let positions_px: Vec<[usize; 2]> = peaks.iter().map(|p| [p.col, p.row]).collect();
    let positions_crs = positions_px
        .iter()
        .map(|&[c, r]| {
            let (x, y) = geo.px_to_crs(c as f64, r as f64);
            [x, y]
        })
        .collect();
    Ok(PeakLayer {
        date: acquisition.date,
        day: acquisition.day,
        cover_ratio,
        sigma,
        positions_px,
        positions_crs,
    })
}
