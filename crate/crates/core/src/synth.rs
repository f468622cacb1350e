//! Synthetic row-crop fields with known plant positions.
//!
//! Random numbers come from ChaCha8 (`seed_from_u64(seed)`): stream 0 draws the
//! layout and visibility, stream `k + 1` the pixel noise of date `k`. A uniform
//! variate is `(next_u64 >> 11) · 2⁻⁵³`; normals use the cosine branch of
//! Box–Muller.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::evalkit::DatedPoints;
use crate::geom::{self, NearestIndex, Point};
use crate::growth::GrowthParams;
use crate::pipeline::write_json;
use crate::raster::{save_raster, Acquisition, GeoTransform, Raster, SampleDepth};
use crate::register::RigidTransform;

const SOIL: [f32; 4] = [0.50, 0.37, 0.28, 0.30];
const PLANT: [f32; 4] = [0.20, 0.50, 0.15, 0.60];
/// Weed radius relative to the crop radius of the same date.
pub const WEED_RADIUS_FACTOR: f64 = 0.6;
/// Pixel stride of the cover sample grid.
const COVER_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub n_lines: usize,
    pub plants_per_line: usize,
    /// Distance between lines (m).
    pub inter_row: f64,
    /// Distance between plants along a line (m).
    pub intra_row: f64,
    /// Line direction in degrees, counter-clockwise from the x axis.
    pub line_angle_deg: f64,
    /// Standard deviation of the plant position noise (m).
    pub jitter: f64,
    /// Weeds per crop plant.
    pub weed_density: f64,
    /// Minimum weed distance from the nearest line, in units of `inter_row`.
    pub weed_clearance: f64,
    /// Probability that a plant is missing from a date.
    pub dropout: f64,
    pub growth: GrowthParams,
    pub start_date: NaiveDate,
    /// Acquisition days after `start_date`, ascending.
    pub days: Vec<i64>,
    /// Per-date transform about the field centre; empty means identity everywhere.
    pub transforms: Vec<RigidTransform>,
    /// Pixel size (m).
    pub px_size: f64,
    pub width: usize,
    pub height: usize,
    /// CRS position of the top-left image corner.
    pub origin: [f64; 2],
    /// Standard deviation of the reflectance noise.
    pub noise: f64,
    /// Adds a fourth NIR channel.
    pub nir: bool,
}

/// Bounds for random injected transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformBounds {
    pub max_shift: f64,
    pub max_rotation_deg: f64,
    pub max_scale_deviation: f64,
}

impl Default for TransformBounds {
    fn default() -> Self {
        Self {
            max_shift: 0.10,
            max_rotation_deg: 0.5,
            max_scale_deviation: 0.005,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `n` random transforms within `bounds`; the first is the identity.
pub fn random_transforms(n: usize, bounds: &TransformBounds, seed: u64) -> Vec<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..n)
        .map(|k| {
            let shift = bounds.max_shift * uniform(&mut rng);
            let dir = std::f64::consts::TAU * uniform(&mut rng);
            let angle = (2.0 * uniform(&mut rng) - 1.0) * bounds.max_rotation_deg.to_radians();
            let scale = 1.0 + (2.0 * uniform(&mut rng) - 1.0) * bounds.max_scale_deviation;
            if k == 0 {
                RigidTransform::IDENTITY
            } else {
                RigidTransform::new(scale, angle, [shift * dir.cos(), shift * dir.sin()])
            }
        })
        .collect()
}

impl FieldSpec {
    /// Sugar-beet-like field: 30 lines of 50 plants at 48/18 cm, ten dates over 70 days.
    pub fn reference(seed: u64) -> Self {
        let days = vec![0, 7, 14, 21, 28, 35, 42, 49, 56, 70];
        Self {
            n_lines: 30,
            plants_per_line: 50,
            inter_row: 0.48,
            intra_row: 0.18,
            line_angle_deg: 1.5,
            jitter: 0.01,
            weed_density: 0.05,
            weed_clearance: 0.3,
            dropout: 0.1,
            growth: GrowthParams::growing(0.95, 0.12, 48.0),
            start_date: NaiveDate::from_ymd_opt(2024, 5, 1).unwrap(),
            transforms: random_transforms(days.len(), &TransformBounds::default(), seed),
            days,
            px_size: 0.005,
            width: 2000,
            height: 3000,
            origin: [500_000.0, 5_500_015.0],
            noise: 0.015,
            nir: false,
        }
    }

    pub fn n_dates(&self) -> usize {
        self.days.len()
    }

    pub fn geo(&self) -> GeoTransform {
        GeoTransform::new(
            self.origin[0] + 0.5 * self.px_size,
            self.origin[1] - 0.5 * self.px_size,
            self.px_size,
            -self.px_size,
        )
    }

    /// Centre of the image in CRS coordinates; also the centre of the field.
    pub fn centre(&self) -> Point {
        Point::new(
            self.origin[0] + 0.5 * self.width as f64 * self.px_size,
            self.origin[1] - 0.5 * self.height as f64 * self.px_size,
        )
    }

    pub fn transform(&self, k: usize) -> RigidTransform {
        self.transforms.get(k).copied().unwrap_or_default()
    }

    pub fn acquisition(&self, k: usize) -> Acquisition {
        Acquisition {
            date: self.start_date + Duration::days(self.days[k]),
            day: self.days[k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_lines == 0 || self.plants_per_line == 0 {
            return bad("field needs at least one line and one plant".into());
        }
        if !(self.inter_row > 0.0 && self.intra_row > 0.0) {
            return bad(format!("spacings must be positive, got {} and {}", self.inter_row, self.intra_row));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.jitter >= 0.0 && self.noise >= 0.0 && self.weed_density >= 0.0) {
            return bad("jitter, noise and weed density must be non-negative".into());
        }
        if self.weed_density > 0.0 && !(0.0..0.5).contains(&self.weed_clearance) {
            return bad(format!("weed clearance must lie in [0, 0.5), got {}", self.weed_clearance));
        }
        if self.days.is_empty() || self.days.windows(2).any(|w| w[0] >= w[1]) {
            return bad("days must be non-empty and strictly ascending".into());
        }
        if !self.transforms.is_empty() && self.transforms.len() != self.days.len() {
            return bad(format!("{} transforms for {} dates", self.transforms.len(), self.days.len()));
        }
        if self.transforms.iter().any(|t| !(t.scale > 0.0)) {
            return bad("transform scales must be positive".into());
        }
        if !(self.px_size > 0.0) || self.width == 0 || self.height == 0 {
            return bad("raster size and pixel size must be positive".into());
        }
        Ok(())
    }
}

/// Geometry of one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDate {
    pub acquisition: Acquisition,
    /// Injected transform about the field centre.
    pub transform: RigidTransform,
    pub target_cover: f64,
    /// Crop disk radius in the field frame (m).
    pub radius: f64,
    /// Per plant: rendered on this date.
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SynthField {
    pub spec: FieldSpec,
    pub seed: u64,
    /// Plant centres in the field frame, line-major.
    pub plants: Vec<Point>,
    pub line_of: Vec<usize>,
    pub weeds: Vec<Point>,
    pub dates: Vec<SynthDate>,
}

fn line_frame(spec: &FieldSpec) -> impl Fn(f64, f64) -> Point {
    let centre = spec.centre();
    let angle = spec.line_angle_deg.to_radians();
    move |u, v| centre + geom::rotate(&Point::new(u, v), angle)
}

/// Lays out plants and weeds and fixes the per-date radius and visibility.
pub fn generate(spec: &FieldSpec, seed: u64) -> Result<SynthField> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_crs = line_frame(spec);
    let half_lines = (spec.n_lines as f64 - 1.0) / 2.0;
    let half_plants = (spec.plants_per_line as f64 - 1.0) / 2.0;

    let mut plants = Vec::with_capacity(spec.n_lines * spec.plants_per_line);
    let mut line_of = Vec::with_capacity(plants.capacity());
    for i in 0..spec.n_lines {
        let stagger = (uniform(&mut rng) - 0.5) * spec.intra_row;
        let v0 = (i as f64 - half_lines) * spec.inter_row;
        for j in 0..spec.plants_per_line {
            let u = (j as f64 - half_plants) * spec.intra_row + stagger + spec.jitter * normal(&mut rng);
            let v = v0 + spec.jitter * normal(&mut rng);
            plants.push(to_crs(u, v));
            line_of.push(i);
        }
    }

    let n_weeds = (spec.weed_density * plants.len() as f64).round() as usize;
    let (u_max, v_max) = (
        (half_plants + 0.5) * spec.intra_row,
        (half_lines + 0.5) * spec.inter_row,
    );
    let clearance = spec.weed_clearance * spec.inter_row;
    let mut weeds = Vec::with_capacity(n_weeds);
    while weeds.len() < n_weeds {
        let u = (2.0 * uniform(&mut rng) - 1.0) * u_max;
        let v = (2.0 * uniform(&mut rng) - 1.0) * v_max;
        let nearest_line = ((v / spec.inter_row + half_lines).round()).clamp(0.0, 2.0 * half_lines);
        if (v - (nearest_line - half_lines) * spec.inter_row).abs() >= clearance {
            weeds.push(to_crs(u, v));
        }
    }

    let visible: Vec<Vec<bool>> = (0..spec.n_dates())
        .map(|_| plants.iter().map(|_| uniform(&mut rng) >= spec.dropout).collect())
        .collect();

    let mut field = SynthField {
        spec: spec.clone(),
        seed,
        plants,
        line_of,
        weeds,
        dates: Vec::new(),
    };
    field.check_extent()?;
    let dates = visible
        .into_par_iter()
        .enumerate()
        .map(|(k, vis)| {
            let target = spec.growth.eval(spec.days[k] as f64).clamp(0.0, 1.0);
            let radius = field.radius_for_cover(k, &vis, target);
            SynthDate {
                acquisition: spec.acquisition(k),
                transform: spec.transform(k),
                target_cover: target,
                radius,
                visible: vis,
            }
        })
        .collect();
    field.dates = dates;
    Ok(field)
}

impl SynthField {
    fn to_raw(&self, k: usize, p: &Point) -> Point {
        let c = self.spec.centre();
        self.spec.transform(k).apply(&(p - c)) + c
    }

    fn check_extent(&self) -> Result<()> {
        let geo = self.spec.geo();
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        for k in 0..self.spec.n_dates() {
            for p in self.plants.iter().chain(&self.weeds) {
                let q = self.to_raw(k, p);
                let (col, row) = geo.crs_to_px(q.x, q.y);
                if !(col >= 0.0 && row >= 0.0 && col <= w - 1.0 && row <= h - 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "raster of {}x{} px too small for the field layout",
                        self.spec.width, self.spec.height
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest radius whose disks cover a `target` fraction of the cover
    /// sample grid. Weeds count with their reduced radius.
    fn radius_for_cover(&self, k: usize, visible: &[bool], target: f64) -> f64 {
        let plants: Vec<Point> = self.plants.iter().zip(visible).filter(|(_, &v)| v).map(|(p, _)| *p).collect();
        let plant_index = NearestIndex::new(&plants);
        let weed_index = NearestIndex::new(&self.weeds);
        let geo = self.spec.geo();
        let centre = self.spec.centre();
        let t = self.spec.transform(k);
        let mut dist = Vec::new();
        for row in (COVER_STRIDE / 2..self.spec.height).step_by(COVER_STRIDE) {
            for col in (COVER_STRIDE / 2..self.spec.width).step_by(COVER_STRIDE) {
                let (x, y) = geo.px_to_crs(col as f64, row as f64);
                let q = t.apply_inverse(&(Point::new(x, y) - centre)) + centre;
                let dp = plant_index.nearest(&q).map_or(f64::INFINITY, |(_, d)| d);
                let dw = weed_index.nearest(&q).map_or(f64::INFINITY, |(_, d)| d / WEED_RADIUS_FACTOR);
                dist.push(dp.min(dw));
            }
        }
        let n = (target * dist.len() as f64).round() as usize;
        if n == 0 {
            return 0.0;
        }
        let (_, r, _) = dist.select_nth_unstable_by(n - 1, f64::total_cmp);
        *r
    }

    /// Ground truth of date `k` in that date's image frame: every plant shown
    /// on this or an earlier date.
    pub fn truth(&self, k: usize) -> Vec<Point> {
        self.truth_ids(k).iter().map(|&i| self.to_raw(k, &self.plants[i])).collect()
    }

    /// Plant indices behind [`SynthField::truth`].
    pub fn truth_ids(&self, k: usize) -> Vec<usize> {
        (0..self.plants.len())
            .filter(|&i| self.dates[..=k].iter().any(|d| d.visible[i]))
            .collect()
    }

    pub fn truth_layers(&self) -> Vec<DatedPoints> {
        (0..self.dates.len())
            .map(|k| DatedPoints {
                date: self.dates[k].acquisition.date,
                points: self.truth(k),
            })
            .collect()
    }

    /// Weed centres in the image frame of date `k`.
    pub fn weeds_raw(&self, k: usize) -> Vec<Point> {
        self.weeds.iter().map(|p| self.to_raw(k, p)).collect()
    }

    /// Transform that maps date `k`'s positions, centralized by `x_mean`, onto
    /// the centralized field frame.
    pub fn expected_alignment(&self, k: usize, x_mean: Point) -> RigidTransform {
        let c = self.spec.centre();
        let to_field = RigidTransform::new(1.0, 0.0, [x_mean.x - c.x, x_mean.y - c.y]);
        let back = RigidTransform::new(1.0, 0.0, [c.x - x_mean.x, c.y - x_mean.y]);
        back.compose(&self.spec.transform(k).inverse().compose(&to_field))
    }

    /// Renders the RGB(+NIR) image of date `k`.
    pub fn render(&self, k: usize) -> Result<Raster> {
        let spec = &self.spec;
        let date = &self.dates[k];
        let (w, h) = (spec.width, spec.height);
        let geo = spec.geo();
        let scale = date.transform.scale;
        let mut mask = vec![false; w * h];
        let plants = self.plants.iter().zip(&date.visible).filter(|(_, &v)| v).map(|(p, _)| (p, date.radius));
        let weeds = self.weeds.iter().map(|p| (p, WEED_RADIUS_FACTOR * date.radius));
        for (p, r) in plants.chain(weeds) {
            let r = r * scale;
            if r <= 0.0 {
                continue;
            }
            let q = self.to_raw(k, p);
            let (col, row) = geo.crs_to_px(q.x, q.y);
            let rp = r / spec.px_size;
            let c0 = (col - rp).floor().max(0.0) as usize;
            let c1 = ((col + rp).ceil() as usize).min(w - 1);
            let r0 = (row - rp).floor().max(0.0) as usize;
            let r1 = ((row + rp).ceil() as usize).min(h - 1);
            for yy in r0..=r1 {
                for xx in c0..=c1 {
                    let (x, y) = geo.px_to_crs(xx as f64, yy as f64);
                    if (x - q.x).hypot(y - q.y) <= r {
                        mask[yy * w + xx] = true;
                    }
                }
            }
        }

        let n_channels = if spec.nir { 4 } else { 3 };
        let mut planes = vec![vec![0f32; w * h]; n_channels];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64 + 1);
        let depth = SampleDepth::U8;
        for (i, &m) in mask.iter().enumerate() {
            let base = if m { &PLANT } else { &SOIL };
            for (c, plane) in planes.iter_mut().enumerate() {
                let v = base[c] as f64 + spec.noise * normal(&mut rng);
                plane[i] = depth.normalize(depth.quantize(v as f32) as f64);
            }
        }
        let names = ["R", "G", "B", "NIR"][..n_channels].iter().map(|s| s.to_string()).collect();
        let mut raster = Raster::new(names, w, h, planes, geo, depth)?;
        raster.acquisition = Some(date.acquisition);
        Ok(raster)
    }

    pub fn raster_file_name(&self, k: usize) -> String {
        format!("date_{}.png", self.dates[k].acquisition.date)
    }

    /// Writes rasters with world files, `truth.geojson`, `weeds.geojson`,
    /// `injected_transforms.json` and `field.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rasters: Vec<PathBuf> = (0..self.dates.len())
            .into_par_iter()
            .map(|k| {
                let path = dir.join(self.raster_file_name(k));
                save_raster(&path, &self.render(k)?)?;
                Ok(path)
            })
            .collect::<Result<_>>()?;

        let mut truth = Vec::new();
        let mut weeds = Vec::new();
        for (k, d) in self.dates.iter().enumerate() {
            let date = d.acquisition.date.to_string();
            for (id, p) in self.truth_ids(k).into_iter().zip(self.truth(k)) {
                truth.push(point_feature(&p, json!({"id": id, "line": self.line_of[id], "date": date})));
            }
            for (id, p) in self.weeds_raw(k).iter().enumerate() {
                weeds.push(point_feature(p, json!({"id": id, "date": date})));
            }
        }
        let transforms: Vec<_> = self
            .dates
            .iter()
            .map(|d| json!({"date": d.acquisition.date.to_string(), "day": d.acquisition.day, "transform": d.transform}))
            .collect();
        let centre = self.spec.centre();
        let field = json!({
            "seed": self.seed,
            "spec": self.spec,
            "centre": [centre.x, centre.y],
            "dates": self.dates.iter().enumerate().map(|(k, d)| json!({
                "date": d.acquisition.date.to_string(),
                "day": d.acquisition.day,
                "file": self.raster_file_name(k),
                "target_cover": d.target_cover,
                "radius": d.radius,
            })).collect::<Vec<_>>(),
        });
        write_json(&dir.join("truth.geojson"), &json!({"type": "FeatureCollection", "features": truth}))?;
        write_json(&dir.join("weeds.geojson"), &json!({"type": "FeatureCollection", "features": weeds}))?;
        write_json(
            &dir.join("injected_transforms.json"),
            &json!({"centre": [centre.x, centre.y], "transforms": transforms}),
        )?;
        write_json(&dir.join("field.json"), &field)?;
        Ok(rasters)
    }
}

fn point_feature(p: &Point, properties: serde_json::Value) -> serde_json::Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
        "properties": properties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vegidx::{compute_vi, segment, SegmentParams, ViKind};

    fn small(seed: u64) -> FieldSpec {
        let days = vec![0, 20, 40];
        FieldSpec {
            n_lines: 4,
            plants_per_line: 10,
            width: 500,
            height: 500,
            origin: [1000.0, 2002.5],
            transforms: random_transforms(days.len(), &TransformBounds::default(), seed),
            days,
            ..FieldSpec::reference(seed)
        }
    }

    fn exact(mut spec: FieldSpec) -> FieldSpec {
        spec.jitter = 0.0;
        spec.dropout = 0.0;
        spec.weed_density = 0.0;
        spec.transforms.clear();
        spec
    }

    #[test]
    fn exact_layout_is_a_grid() {
        let spec = exact(FieldSpec {
            line_angle_deg: 0.0,
            ..small(1)
        });
        let f = generate(&spec, 1).unwrap();
        let truth = f.truth(0);
        assert_eq!(truth.len(), 40);
        for line in 0..4 {
            let row = &truth[line * 10..(line + 1) * 10];
            let v = (line as f64 - 1.5) * 0.48;
            for (j, p) in row.iter().enumerate() {
                assert!((p.y - (spec.centre().y + v)).abs() < 1e-9);
                if j > 0 {
                    assert!((p.x - row[j - 1].x - 0.18).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn nearest_neighbour_distances_match_spacing() {
        let f = generate(&exact(small(2)), 2).unwrap();
        let truth = f.truth(0);
        let index = NearestIndex::new(&truth);
        let mut near = Vec::new();
        for (i, p) in truth.iter().enumerate() {
            index.within(p, 0.6, &mut near);
            let d = near
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (truth[j] - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((d - 0.18).abs() < 1e-9, "{d}");
            // Closest plant of another line sits at least one inter-row spacing away.
            let other = near
                .iter()
                .filter(|&&j| f.line_of[j] != f.line_of[i])
                .map(|&j| (truth[j] - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(other >= 0.48 - 1e-9);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = small(3);
        let a = generate(&spec, 3).unwrap();
        let b = generate(&spec, 3).unwrap();
        assert_eq!(a.plants, b.plants);
        assert_eq!(a.dates, b.dates);
        assert_eq!(a.render(1).unwrap().plane(1), b.render(1).unwrap().plane(1));
        let c = generate(&spec, 4).unwrap();
        assert_ne!(a.plants, c.plants);
    }

    #[test]
    fn cover_tracks_growth_curve() {
        let spec = small(5);
        let f = generate(&spec, 5).unwrap();
        for k in 0..spec.n_dates() {
            let vi = compute_vi(&f.render(k).unwrap(), ViKind::Gli, 0.0).unwrap();
            let seg = segment(&vi, &SegmentParams::default()).unwrap();
            let target = spec.growth.eval(spec.days[k] as f64);
            assert!((seg.cover_ratio - target).abs() <= 0.05, "date {k}: {} vs {target}", seg.cover_ratio);
        }
    }

    #[test]
    fn truth_accumulates_first_appearances() {
        let mut spec = small(6);
        spec.dropout = 0.5;
        let f = generate(&spec, 6).unwrap();
        let first: Vec<usize> = f.truth_ids(0);
        assert_eq!(first.len(), f.dates[0].visible.iter().filter(|&&v| v).count());
        let later = f.truth_ids(2);
        assert!(first.iter().all(|i| later.contains(i)));
        assert!(later.len() > first.len());
    }

    #[test]
    fn weeds_keep_clear_of_lines() {
        let mut spec = small(7);
        spec.weed_density = 1.0;
        let f = generate(&spec, 7).unwrap();
        assert_eq!(f.weeds.len(), 40);
        let angle = spec.line_angle_deg.to_radians();
        for w in &f.weeds {
            let v = geom::rotate(&(w - spec.centre()), -angle).y;
            let off = (0..4).map(|i| (v - (i as f64 - 1.5) * 0.48).abs()).fold(f64::INFINITY, f64::min);
            assert!(off >= 0.3 * 0.48);
        }
    }

    #[test]
    fn expected_alignment_undoes_injection() {
        let spec = small(8);
        let f = generate(&spec, 8).unwrap();
        let x_mean = Point::new(1001.3, 2001.1);
        for k in 0..spec.n_dates() {
            let t = f.expected_alignment(k, x_mean);
            for (raw, id) in f.truth(k).iter().zip(f.truth_ids(k)) {
                let aligned = t.apply(&(raw - x_mean));
                assert!((aligned - (f.plants[id] - x_mean)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn layout_must_fit() {
        let spec = FieldSpec {
            width: 100,
            ..small(9)
        };
        assert!(matches!(generate(&spec, 9), Err(Error::InvalidParameter(_))));
        let spec = FieldSpec {
            dropout: 1.0,
            ..small(9)
        };
        assert!(generate(&spec, 9).is_err());
    }

    #[test]
    fn files_are_written() {
        let f = generate(&small(10), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = f.write(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for name in ["truth.geojson", "weeds.geojson", "injected_transforms.json", "field.json"] {
            assert!(dir.path().join(name).exists());
        }
        let truth: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.geojson")).unwrap()).unwrap();
        let layers = crate::evalkit::truth_from_geojson(&truth).unwrap();
        assert_eq!(layers, f.truth_layers());
        let loaded = crate::raster::load_raster(&paths[1], &Default::default()).unwrap();
        assert_eq!(loaded.plane(0), f.render(1).unwrap().plane(0));
    }
}
