//! Seeding-line recognition on the union of aligned plant positions, and the
//! distance-to-line weed filter.
//!
//! Angles are line directions measured counter-clockwise from the x axis and
//! reported in (−90°, 90°]. A line at angle φ satisfies `d = −x·sin φ + y·cos φ`,
//! which is also its y coordinate after rotating the plane by −φ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineParams {
    /// Raster bin width in CRS units.
    pub bin_width: f64,
    /// Histogram bins for the node angles.
    pub n_b: usize,
    /// Neighbouring bins kept around the modal bin.
    pub n_plus: usize,
    /// Angles sampled per Hough scan.
    pub angle_steps: usize,
    /// Node threshold relative to the accumulator maximum.
    pub node_fraction: f64,
    /// Nodes suppress weaker ones within this angle (degrees)...
    pub node_angle_window_deg: f64,
    /// ...and this many distance bins.
    pub node_distance_window: f64,
    /// Nesting stops once the angle interval is narrower than this (degrees).
    pub min_interval_deg: f64,
    /// Refine the nested Hough angle by least squares.
    pub refine_angle: bool,
    /// Scan window; defaults to a quarter of the Hough line distance.
    pub lambda: Option<f64>,
    /// Scan step; defaults to λ/64.
    pub rho: Option<f64>,
    /// Count-profile peaks below this fraction of the highest peak are ignored.
    pub peak_rel_height: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            bin_width: 0.02,
            n_b: 18,
            n_plus: 1,
            angle_steps: 180,
            node_fraction: 0.5,
            node_angle_window_deg: 10.0,
            node_distance_window: 9.0,
            min_interval_deg: 0.01,
            refine_angle: true,
            lambda: None,
            rho: None,
            peak_rel_height: 0.1,
        }
    }
}

/// Binary occupancy image of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    /// CRS coordinates of the lower corner of pixel (0, 0).
    pub x0: f64,
    pub y0: f64,
    pub bin: f64,
    pub pixels: Vec<bool>,
}

impl BinaryImage {
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Set pixel coordinates relative to the image centre.
    fn set_pixels(&self) -> Vec<(f64, f64)> {
        let (cx, cy) = ((self.width - 1) as f64 / 2.0, (self.height - 1) as f64 / 2.0);
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| ((i % self.width) as f64 - cx, (i / self.width) as f64 - cy))
            .collect()
    }
}

/// 2D histogram of `points` with `bin` wide cells, thresholded at one count.
/// Column and row grow with x and y.
pub fn rasterize_points(points: &[Point], bin: f64) -> Result<BinaryImage> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no points to rasterize".into()));
    }
    if !(bin > 0.0) {
        return Err(Error::InvalidParameter(format!("bin width must be positive, got {bin}")));
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    // A relative nudge keeps exact multiples of the bin width from rounding down.
    let cell = |v: f64, v0: f64| ((v - v0) / bin * (1.0 + 1e-12) + 1e-9).floor() as usize;
    let width = cell(hi.x, lo.x) + 1;
    let height = cell(hi.y, lo.y) + 1;
    let mut pixels = vec![false; width * height];
    for p in points {
        pixels[cell(p.y, lo.y) * width + cell(p.x, lo.x)] = true;
    }
    Ok(BinaryImage {
        width,
        height,
        x0: lo.x,
        y0: lo.y,
        bin,
        pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughNode {
    /// Line direction in radians.
    pub angle: f64,
    /// Signed distance in pixels.
    pub d: f64,
    pub votes: u32,
}

/// Angles sampled at the centres of `steps` equal sub-intervals of `[lo, hi]`.
pub fn scan_angles(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let step = (hi - lo) / steps as f64;
    (0..steps).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

/// Hough transform over the given angles with unit distance bins, taking the
/// image centre as origin.
///
/// Candidates are local maxima of the accumulator over the 8-neighbourhood with
/// at least `node_fraction` of the global maximum and at least two votes. A
/// plateau of equal maximal cells forms one candidate placed at its mean angle
/// and distance. Candidates are then accepted by descending votes unless an
/// accepted node lies within the angle and distance windows.
pub fn hough_lines(img: &BinaryImage, angles: &[f64], params: &LineParams) -> Vec<HoughNode> {
    let pixels = img.set_pixels();
    if pixels.len() < 2 || angles.is_empty() {
        return Vec::new();
    }
    let reach = ((img.width * img.width + img.height * img.height) as f64).sqrt().ceil() as i64 / 2 + 2;
    let nd = (2 * reach + 1) as usize;
    let na = angles.len();
    let mut acc = vec![0u32; na * nd];
    for (a, &phi) in angles.iter().enumerate() {
        let (s, c) = phi.sin_cos();
        let row = &mut acc[a * nd..(a + 1) * nd];
        for &(x, y) in &pixels {
            let d = (-x * s + y * c).round() as i64 + reach;
            row[d as usize] += 1;
        }
    }
    let max = *acc.iter().max().unwrap_or(&0);
    let threshold = ((params.node_fraction * max as f64).ceil() as u32).max(2);

    let at = |a: i64, d: i64| -> Option<u32> {
        (a >= 0 && a < na as i64 && d >= 0 && d < nd as i64).then(|| acc[a as usize * nd + d as usize])
    };
    let mut visited = vec![false; na * nd];
    // (angle index, distance index, votes) of each plateau candidate.
    let mut candidates: Vec<(f64, f64, u32)> = Vec::new();
    let mut stack = Vec::new();
    for a in 0..na as i64 {
        for d in 0..nd as i64 {
            let v = acc[a as usize * nd + d as usize];
            if v < threshold || visited[a as usize * nd + d as usize] {
                continue;
            }
            // Flood the plateau of equal values; it is a node if nothing around it is higher.
            let mut cells = Vec::new();
            let mut is_max = true;
            stack.push((a, d));
            visited[a as usize * nd + d as usize] = true;
            while let Some((ca, cd)) = stack.pop() {
                cells.push((ca, cd));
                for da in -1..=1 {
                    for dd in -1..=1 {
                        let (na_, nd_) = (ca + da, cd + dd);
                        match at(na_, nd_) {
                            Some(u) if u > v => is_max = false,
                            Some(u) if u == v => {
                                let k = na_ as usize * nd + nd_ as usize;
                                if !visited[k] {
                                    visited[k] = true;
                                    stack.push((na_, nd_));
                                }
                            }
                            _ => {}
                        }
                    }
                }
            }
            if is_max {
                let n = cells.len() as f64;
                let ca = cells.iter().map(|&(ca, _)| ca as f64).sum::<f64>() / n;
                let cd = cells.iter().map(|&(_, cd)| cd as f64).sum::<f64>() / n;
                candidates.push((ca, cd, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.total_cmp(&b.0)).then(a.1.total_cmp(&b.1)));
    let step = if na > 1 { angles[1] - angles[0] } else { 0.0 };
    let angle_window = params.node_angle_window_deg.to_radians();
    let mut kept: Vec<(f64, f64, u32)> = Vec::new();
    for c in candidates {
        let suppressed = kept.iter().any(|k| {
            (k.0 - c.0).abs() * step <= angle_window && (k.1 - c.1).abs() <= params.node_distance_window
        });
        if !suppressed {
            kept.push(c);
        }
    }
    kept.into_iter()
        .map(|(ca, cd, votes)| HoughNode {
            angle: angles[0] + ca * step,
            d: cd - reach as f64,
            votes,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    /// Common line direction in radians.
    pub alpha: f64,
    /// Nodes of the final scan.
    pub nodes: Vec<HoughNode>,
    pub scans: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonAngle {
    /// Refined common line direction in radians.
    pub alpha: f64,
    /// Nested Hough estimate before refinement.
    pub hough: AngleEstimate,
    /// Median node spacing in CRS units, if at least two lines were found.
    pub hough_distance: Option<f64>,
}

/// Common line angle by nested Hough scans.
///
/// Each scan histograms its node angles into `n_b` bins and narrows the
/// interval to the modal bin and `n_plus` neighbours on each side. Nesting
/// stops when the interval is narrower than `min_interval_deg`, when all
/// nodes share one angle and the scan step is already that fine, or when the
/// modal bin no longer holds half of the nodes (the bins have become finer
/// than the scatter of the node angles). The estimate is the mean node angle
/// of the last scan.
pub fn nested_hough_angle(img: &BinaryImage, params: &LineParams) -> Result<AngleEstimate> {
    if params.n_b == 0 || params.angle_steps == 0 {
        return Err(Error::InvalidParameter("n_b and angle_steps must be positive".into()));
    }
    let min_width = params.min_interval_deg.to_radians();
    let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let mut scans = 0;
    loop {
        scans += 1;
        let nodes = hough_lines(img, &scan_angles(lo, hi, params.angle_steps), params);
        if nodes.is_empty() {
            return Err(Error::Degenerate("no Hough nodes found".into()));
        }
        let mu = nodes.iter().map(|n| n.angle).sum::<f64>() / nodes.len() as f64;
        let width = hi - lo;
        let step = width / params.angle_steps as f64;
        let bw = width / params.n_b as f64;
        let mut hist = vec![0usize; params.n_b];
        for n in &nodes {
            let k = (((n.angle - lo) / bw).floor().max(0.0) as usize).min(params.n_b - 1);
            hist[k] += 1;
        }
        let (mode, mode_count) = hist
            .iter()
            .enumerate()
            .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best });
        let all_equal = nodes.iter().all(|n| n.angle == mu);
        let spread_out = 2 * mode_count < nodes.len();
        if width < min_width || (all_equal && step <= min_width) || (spread_out && scans > 1) || scans > 64 {
            return Ok(AngleEstimate {
                alpha: normalize_angle(mu),
                nodes,
                scans,
            });
        }
        let first = mode.saturating_sub(params.n_plus);
        let last = (mode + params.n_plus).min(params.n_b - 1);
        let new_lo = lo + first as f64 * bw;
        hi = lo + (last + 1) as f64 * bw;
        lo = new_lo;
    }
}

/// Common line angle of a point set: nested Hough scans on the rasterized
/// points, then a least-squares refinement over the points near the Hough lines.
pub fn find_common_angle(points: &[Point], params: &LineParams) -> Result<CommonAngle> {
    let img = rasterize_points(points, params.bin_width)?;
    let hough = nested_hough_angle(&img, params)?;
    let hough_distance = hough_median_distance(&hough.nodes, 3.0).map(|d| d * params.bin_width);
    if !params.refine_angle {
        return Ok(CommonAngle {
            alpha: hough.alpha,
            hough,
            hough_distance,
        });
    }
    // Node distances are measured from the image centre in pixels.
    let centre = Point::new(
        img.x0 + img.width as f64 / 2.0 * img.bin,
        img.y0 + img.height as f64 / 2.0 * img.bin,
    );
    let c_rot = geom::rotate(&centre, -hough.alpha).y;
    let offsets: Vec<f64> = hough.nodes.iter().map(|n| c_rot + n.d * img.bin).collect();
    let band = match hough_distance {
        Some(d) => 0.125 * d,
        None => 0.5 * params.node_distance_window * img.bin,
    };
    let alpha = refine_angle(points, hough.alpha, &offsets, band, 3);
    Ok(CommonAngle {
        alpha: normalize_angle(alpha),
        hough,
        hough_distance,
    })
}

/// Pooled within-line least-squares slope of the points within `band` of the
/// given line offsets, applied as a rotation correction. Offsets are y values
/// in the frame rotated by −`alpha` and are re-estimated every iteration.
pub fn refine_angle(points: &[Point], alpha: f64, offsets: &[f64], band: f64, iterations: usize) -> f64 {
    let mut alpha = alpha;
    let mut offsets = offsets.to_vec();
    offsets.sort_by(f64::total_cmp);
    for _ in 0..iterations {
        let n_lines = offsets.len();
        if n_lines == 0 {
            break;
        }
        // Per line: count, Σx, Σy, Σxx, Σxy.
        let mut acc = vec![[0.0f64; 5]; n_lines];
        for p in points {
            let q = geom::rotate(p, -alpha);
            let k = offsets.partition_point(|&o| o < q.y);
            let nearest = [k.wrapping_sub(1), k]
                .into_iter()
                .filter(|&i| i < n_lines)
                .min_by(|&a, &b| (q.y - offsets[a]).abs().total_cmp(&(q.y - offsets[b]).abs()));
            if let Some(i) = nearest {
                if (q.y - offsets[i]).abs() <= band {
                    let a = &mut acc[i];
                    a[0] += 1.0;
                    a[1] += q.x;
                    a[2] += q.y;
                    a[3] += q.x * q.x;
                    a[4] += q.x * q.y;
                }
            }
        }
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for a in &acc {
            if a[0] >= 2.0 {
                sxy += a[4] - a[1] * a[2] / a[0];
                sxx += a[3] - a[1] * a[1] / a[0];
            }
        }
        if !(sxx > 0.0) {
            break;
        }
        let delta = (sxy / sxx).atan();
        alpha += delta;
        offsets = acc
            .iter()
            .zip(&offsets)
            .map(|(a, &o)| {
                if a[0] > 0.0 {
                    // Line centre moved into the new frame.
                    geom::rotate(&Point::new(a[1] / a[0], a[2] / a[0]), -delta).y
                } else {
                    o
                }
            })
            .collect();
        offsets.sort_by(f64::total_cmp);
        if delta.abs() < 1e-9 {
            break;
        }
    }
    alpha
}

/// Maps an angle in radians into (−π/2, π/2].
pub fn normalize_angle(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut r = a.rem_euclid(pi);
    if r > pi / 2.0 {
        r -= pi;
    }
    r
}

/// Median spacing of the node distances, after merging nodes closer than `merge` px.
pub fn hough_median_distance(nodes: &[HoughNode], merge: f64) -> Option<f64> {
    let mut d: Vec<f64> = nodes.iter().map(|n| n.d).collect();
    d.sort_by(f64::total_cmp);
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for v in d {
        match groups.last_mut() {
            Some(g) if v - g[g.len() - 1] < merge => g.push(v),
            _ => groups.push(vec![v]),
        }
    }
    let centers: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let diffs: Vec<f64> = centers.windows(2).map(|w| w[1] - w[0]).collect();
    median(&diffs)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Window counts `σ_i = #{y : y_i − λ/2 ≤ y < y_i + λ/2}` for
/// `y_i = min(y) − λ + i·ρ` while `y_i < max(y) + λ`.
pub fn window_profile(ys: &[f64], lambda: f64, rho: f64) -> (f64, Vec<u32>) {
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let start = sorted[0] - lambda;
    let end = sorted[sorted.len() - 1] + lambda;
    let mut counts = Vec::new();
    let (mut lo_idx, mut hi_idx) = (0usize, 0usize);
    let mut i = 0usize;
    loop {
        let y = start + i as f64 * rho;
        if y >= end {
            break;
        }
        let (a, b) = (y - lambda / 2.0, y + lambda / 2.0);
        while lo_idx < sorted.len() && sorted[lo_idx] < a {
            lo_idx += 1;
        }
        hi_idx = hi_idx.max(lo_idx);
        while hi_idx < sorted.len() && sorted[hi_idx] < b {
            hi_idx += 1;
        }
        counts.push((hi_idx - lo_idx) as u32);
        i += 1;
    }
    (start, counts)
}

/// Peak positions (fractional indices) of a count profile: midpoints of plateaus
/// higher than both neighbours, at least `rel_height` of the highest peak,
/// thinned greedily by height so that peaks are at least `min_sep` indices apart.
pub fn profile_peaks(profile: &[u32], min_sep: f64, rel_height: f64) -> Vec<f64> {
    let mut peaks: Vec<(f64, u32)> = Vec::new();
    let n = profile.len();
    let mut i = 0;
    while i < n {
        let v = profile[i];
        let mut j = i;
        while j + 1 < n && profile[j + 1] == v {
            j += 1;
        }
        let left_lower = i == 0 || profile[i - 1] < v;
        let right_lower = j + 1 == n || profile[j + 1] < v;
        if v > 0 && left_lower && right_lower {
            peaks.push(((i + j) as f64 / 2.0, v));
        }
        i = j + 1;
    }
    let top = peaks.iter().map(|p| p.1).max().unwrap_or(0);
    let floor = rel_height * top as f64;
    let mut order: Vec<(f64, u32)> = peaks.into_iter().filter(|p| p.1 as f64 >= floor).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let mut kept: Vec<f64> = Vec::new();
    for (pos, _) in order {
        if kept.iter().all(|&k| (k - pos).abs() >= min_sep) {
            kept.push(pos);
        }
    }
    kept.sort_by(f64::total_cmp);
    kept
}

/// Line positions from a sliding-window count over the rotated y coordinates.
/// Each profile peak is recentred on the mean of the points in its window.
pub fn scan_line_positions(
    rotated_y: &[f64],
    lambda: f64,
    rho: f64,
    min_separation: f64,
    rel_height: f64,
) -> Result<Vec<f64>> {
    if !(lambda > rho && rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "line scan needs λ > ρ > 0, got λ={lambda} ρ={rho}"
        )));
    }
    if rotated_y.is_empty() {
        return Err(Error::InsufficientData("no points to scan".into()));
    }
    let (start, profile) = window_profile(rotated_y, lambda, rho);
    let peaks = profile_peaks(&profile, min_separation / rho, rel_height);
    if peaks.is_empty() {
        return Err(Error::Degenerate("window scan found no line".into()));
    }
    let mut sorted = rotated_y.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(peaks
        .into_iter()
        .map(|p| recentre(&sorted, start + rho * p, lambda, 2))
        .collect())
}

/// Moves `y` to the mean of the sorted values inside its window.
fn recentre(sorted: &[f64], mut y: f64, lambda: f64, iterations: usize) -> f64 {
    for _ in 0..iterations {
        let a = sorted.partition_point(|&v| v < y - lambda / 2.0);
        let b = sorted.partition_point(|&v| v < y + lambda / 2.0);
        if b == a {
            break;
        }
        y = sorted[a..b].iter().sum::<f64>() / (b - a) as f64;
    }
    y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedingLines {
    /// Common line direction in radians.
    pub alpha_s: f64,
    /// Line positions in the rotated frame, strictly increasing.
    pub y_star: Vec<f64>,
    /// Median spacing of `y_star`.
    pub median_distance: f64,
    /// Line spacing estimated from the Hough nodes.
    pub hough_distance: f64,
}

impl SeedingLines {
    /// Coordinates in the frame where the lines are parallel to the x axis.
    pub fn to_line_frame(&self, p: &Point) -> Point {
        geom::rotate(p, -self.alpha_s)
    }

    /// Index of and distance to the nearest line (lowest index on ties).
    pub fn nearest_line(&self, rotated_y: f64) -> (usize, f64) {
        let k = self.y_star.partition_point(|&y| y < rotated_y);
        let mut best = (usize::MAX, f64::INFINITY);
        for i in [k.wrapping_sub(1), k] {
            if let Some(&y) = self.y_star.get(i) {
                let d = (rotated_y - y).abs();
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
        }
        best
    }
}

/// Full line recognition on centralized, aligned points.
pub fn recognize_lines(points: &[Point], params: &LineParams) -> Result<SeedingLines> {
    let angle = find_common_angle(points, params)?;
    let hough_distance = angle.hough_distance.ok_or_else(|| {
        Error::Degenerate("fewer than two seeding lines in the Hough scan".into())
    })?;
    let lambda = params.lambda.unwrap_or(0.25 * hough_distance);
    let rho = params.rho.unwrap_or(lambda / 64.0);
    let ys: Vec<f64> = points
        .iter()
        .map(|p| geom::rotate(p, -angle.alpha).y)
        .collect();
    let y_star = scan_line_positions(&ys, lambda, rho, 0.5 * hough_distance, params.peak_rel_height)?;
    let diffs: Vec<f64> = y_star.windows(2).map(|w| w[1] - w[0]).collect();
    let median_distance = median(&diffs).unwrap_or(hough_distance);
    Ok(SeedingLines {
        alpha_s: angle.alpha,
        y_star,
        median_distance,
        hough_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedMask {
    pub distance: Vec<f64>,
    pub valid: Vec<bool>,
    pub theta_d: f64,
}

/// Flags points within `theta_d · d̃` (inclusive) of their nearest seeding line.
pub fn filter_weed(points: &[Point], lines: &SeedingLines, theta_d: f64) -> Result<WeedMask> {
    if lines.y_star.is_empty() {
        return Err(Error::InsufficientData("no seeding lines".into()));
    }
    let limit = theta_d * lines.median_distance;
    let distance: Vec<f64> = points
        .iter()
        .map(|p| lines.nearest_line(lines.to_line_frame(p).y).1)
        .collect();
    let valid = distance.iter().map(|&d| d <= limit).collect();
    Ok(WeedMask {
        distance,
        valid,
        theta_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = uniform(rng).max(1e-300);
        let u2 = uniform(rng);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Plants on `n_lines` parallel rows, rotated by `angle_deg` about the origin.
    fn field(
        n_lines: usize,
        per_line: usize,
        inter: f64,
        intra: f64,
        angle_deg: f64,
        jitter: f64,
        seed: u64,
    ) -> (Vec<Point>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y0 = -(n_lines as f64 - 1.0) * inter / 2.0;
        let x0 = -(per_line as f64 - 1.0) * intra / 2.0;
        let mut pts = Vec::new();
        let lines: Vec<f64> = (0..n_lines).map(|i| y0 + i as f64 * inter).collect();
        for &y in &lines {
            let phase = uniform(&mut rng) * intra;
            for j in 0..per_line {
                let p = point(
                    x0 + j as f64 * intra + phase + jitter * normal(&mut rng),
                    y + jitter * normal(&mut rng),
                );
                pts.push(geom::rotate(&p, angle_deg.to_radians()));
            }
        }
        (pts, lines)
    }

    #[test]
    fn rasterize_basics() {
        let img = rasterize_points(&[point(3.0, 4.0)], 0.02).unwrap();
        assert_eq!(img.count(), 1);
        let img = rasterize_points(&[point(0.0, 0.0), point(10.0 * 0.02, 0.0)], 0.02).unwrap();
        assert_eq!(img.width, 11);
        assert!(img.pixels[0] && img.pixels[10]);
        let img = rasterize_points(&[point(1.0, 1.0), point(1.0, 1.0)], 0.02).unwrap();
        assert_eq!(img.count(), 1);
    }

    fn line_image(angle_deg: f64, offsets: &[f64]) -> BinaryImage {
        let mut pts = Vec::new();
        for &off in offsets {
            for i in 0..50 {
                let p = point(i as f64 * 2.0, off);
                pts.push(geom::rotate(&p, angle_deg.to_radians()));
            }
        }
        rasterize_points(&pts, 1.0).unwrap()
    }

    #[test]
    fn hough_single_line() {
        let img = line_image(30.0, &[0.0]);
        let angles = scan_angles(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 180);
        let nodes = hough_lines(&img, &angles, &LineParams::default());
        assert_eq!(nodes.len(), 1);
        assert!((nodes[0].angle.to_degrees() - 30.0).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn hough_parallel_lines() {
        let img = line_image(0.0, &[0.0, 20.0]);
        let angles = scan_angles(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 180);
        let nodes = hough_lines(&img, &angles, &LineParams::default());
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0].angle, nodes[1].angle);
        assert!(((nodes[0].d - nodes[1].d).abs() - 20.0).abs() <= 1.0);
    }

    #[test]
    fn hough_single_pixel_has_no_node() {
        let img = rasterize_points(&[point(0.0, 0.0)], 1.0).unwrap();
        let angles = scan_angles(-1.5, 1.5, 180);
        assert!(hough_lines(&img, &angles, &LineParams::default()).is_empty());
    }

    fn recovered_angle(angle: f64, outliers: f64, seed: u64) -> f64 {
        let (mut pts, _) = field(12, 40, 0.48, 0.18, angle, 0.01, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let n_out = (outliers * pts.len() as f64) as usize;
        for _ in 0..n_out {
            pts.push(point(8.0 * (uniform(&mut rng) - 0.5), 8.0 * (uniform(&mut rng) - 0.5)));
        }
        find_common_angle(&pts, &LineParams::default()).unwrap().alpha.to_degrees()
    }

    #[test]
    fn common_angle_examples() {
        assert!((recovered_angle(-14.0, 0.0, 1) + 14.0).abs() < 0.05);
        assert!(recovered_angle(0.0, 0.0, 2).abs() < 0.05);
        assert!((recovered_angle(7.3, 0.05, 3) - 7.3).abs() < 0.1);
    }

    #[test]
    fn single_line_scan() {
        let ys = vec![2.5; 40];
        let (lambda, rho) = (0.12, 0.12 / 64.0);
        let y = scan_line_positions(&ys, lambda, rho, 0.24, 0.1).unwrap();
        assert_eq!(y.len(), 1);
        assert!((y[0] - 2.5).abs() <= rho);
    }

    #[test]
    fn two_lines_48cm_apart() {
        let (pts, truth) = field(2, 60, 0.48, 0.18, 0.0, 0.01, 5);
        let ys: Vec<f64> = pts.iter().map(|p| p.y).collect();
        let y = scan_line_positions(&ys, 0.12, 0.12 / 64.0, 0.24, 0.1).unwrap();
        assert_eq!(y.len(), 2);
        assert!(((y[1] - y[0]) - 0.48).abs() <= 0.01);
        assert!((y[0] - truth[0]).abs() <= 0.01);
    }

    #[test]
    fn twenty_nine_lines() {
        let (pts, truth) = field(29, 40, 0.48, 0.18, 3.0, 0.01, 9);
        let lines = recognize_lines(&pts, &LineParams::default()).unwrap();
        assert_eq!(lines.y_star.len(), 29);
        for (a, b) in lines.y_star.iter().zip(&truth) {
            assert!((a - b).abs() < 0.01, "{a} vs {b}");
        }
        assert!(lines.y_star.windows(2).all(|w| w[1] > w[0]));
        assert!((lines.median_distance - 0.48).abs() < 0.01);
    }

    #[test]
    fn profile_plateau_midpoints() {
        let prof = [0, 1, 3, 3, 3, 1, 0, 2, 2, 0];
        assert_eq!(profile_peaks(&prof, 1.0, 0.0), vec![3.0, 7.5]);
        // Separation keeps the higher peak.
        assert_eq!(profile_peaks(&prof, 5.0, 0.0), vec![3.0]);
        // Relative height drops the small one.
        assert_eq!(profile_peaks(&prof, 1.0, 0.8), vec![3.0]);
    }

    fn sample_lines() -> SeedingLines {
        SeedingLines {
            alpha_s: 0.0,
            y_star: vec![0.0, 0.5, 1.0],
            median_distance: 0.5,
            hough_distance: 0.5,
        }
    }

    #[test]
    fn weed_filter_examples() {
        let lines = sample_lines();
        let m = filter_weed(
            &[point(3.0, 0.5), point(1.0, 0.5 + 0.3 * 0.5), point(0.0, 1.0 - 0.1)],
            &lines,
            0.2,
        )
        .unwrap();
        assert_eq!(m.distance[0], 0.0);
        assert_eq!(m.valid, vec![true, false, true]);

        // The boundary is inclusive.
        let on_edge = point(0.0, 0.625);
        let m = filter_weed(&[on_edge], &lines, 0.25).unwrap();
        assert_eq!(m.distance[0], 0.25 * 0.5);
        assert!(m.valid[0]);
    }

    proptest! {
        #[test]
        fn weed_filter_matches_band_membership(
            pts in prop::collection::vec((-5.0f64..5.0, -1.0f64..3.0), 1..100),
            angle in -1.5f64..1.5,
            theta in 0.05f64..0.5,
        ) {
            let lines = SeedingLines { alpha_s: angle, ..sample_lines() };
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| point(x, y)).collect();
            let m = filter_weed(&pts, &lines, theta).unwrap();
            let limit = theta * lines.median_distance;
            for (i, p) in pts.iter().enumerate() {
                let (s, c) = angle.sin_cos();
                let y = -p.x * s + p.y * c;
                let inside = lines.y_star.iter().any(|&l| (y - l).abs() <= limit);
                prop_assert_eq!(m.valid[i], inside);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn angle_is_rotation_equivariant(beta in -170.0f64..170.0, seed in 0u64..1000) {
            let (base, _) = field(10, 30, 0.48, 0.18, 5.0, 0.01, seed);
            let params = LineParams::default();
            let a0 = find_common_angle(&base, &params).unwrap().alpha;
            let moved: Vec<Point> = base.iter().map(|p| geom::rotate(p, beta.to_radians())).collect();
            let a = find_common_angle(&moved, &params).unwrap().alpha;
            let diff = normalize_angle(a - a0 - beta.to_radians()).to_degrees();
            prop_assert!(diff.abs() < 0.1, "beta {}: diff {}", beta, diff);
        }
    }
}
