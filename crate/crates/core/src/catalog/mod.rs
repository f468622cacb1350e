//! Plant identities across dates: clustering of aligned detections, label
//! sorting along the seeding lines and completion of missing dates.

mod cluster;
mod export;
mod tiles;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::lines::SeedingLines;
use crate::register::RigidTransform;

pub use cluster::{cluster_layers, Clustering};
pub use export::{to_csv, to_geojson, to_kml, UtmZone};
pub use tiles::{extract_date_tiles, extract_tiles, save_tiles, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberKind {
    /// Found by peak detection.
    Direct,
    /// Reconstructed from the cluster centroid.
    Indirect,
}

/// Position of a plant on one date, in that date's own (unaligned) CRS frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub date: NaiveDate,
    pub x: f64,
    pub y: f64,
    pub kind: MemberKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantCluster {
    pub id: usize,
    pub line_id: usize,
    /// Mean of the aligned direct members, in CRS coordinates.
    pub centroid_xy: [f64; 2],
    /// Sorted by date.
    pub members: Vec<Member>,
}

impl PlantCluster {
    pub fn direct_count(&self) -> usize {
        self.members.iter().filter(|m| m.kind == MemberKind::Direct).count()
    }

    pub fn member(&self, date: NaiveDate) -> Option<&Member> {
        self.members.iter().find(|m| m.date == date)
    }

    /// Date of the earliest direct member.
    pub fn first_direct(&self) -> Option<NaiveDate> {
        self.members
            .iter()
            .filter(|m| m.kind == MemberKind::Direct)
            .map(|m| m.date)
            .min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatedTransform {
    pub date: NaiveDate,
    pub transform: RigidTransform,
}

/// Cluster label per detected point of one date; `-1` marks discarded points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedLabels {
    pub date: NaiveDate,
    pub labels: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantCatalog {
    pub plants: Vec<PlantCluster>,
    /// All acquisition dates, ascending.
    pub dates: Vec<NaiveDate>,
    /// Dates whose detections were used.
    pub used_dates: Vec<NaiveDate>,
    /// Alignment of every used date (raw centralized frame to aligned frame).
    pub transforms: Vec<DatedTransform>,
    pub alpha_s: f64,
    pub x_mean: [f64; 2],
    pub lines: SeedingLines,
    pub point_labels: Vec<DatedLabels>,
}

impl PlantCatalog {
    /// Transform of `date`, identity for dates without one.
    pub fn transform(&self, date: NaiveDate) -> RigidTransform {
        self.transforms
            .iter()
            .find(|t| t.date == date)
            .map_or(RigidTransform::IDENTITY, |t| t.transform)
    }

    pub fn x_mean(&self) -> Point {
        Point::new(self.x_mean[0], self.x_mean[1])
    }

    /// Positions scored for `date`, skipping indirect members dated before the
    /// plant's first direct detection.
    pub fn scored_positions(&self, date: NaiveDate) -> Vec<Point> {
        self.plants
            .iter()
            .filter_map(|p| {
                let m = p.member(date)?;
                let leading = m.kind == MemberKind::Indirect && p.first_direct().is_none_or(|f| date < f);
                (!leading).then(|| Point::new(m.x, m.y))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogParams {
    /// Maximum point to centroid distance when clustering.
    pub d_max: f64,
    /// Clusters with fewer direct members are dropped.
    pub min_direct: usize,
}

/// Weed-filtered detections of one used date.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogLayer {
    pub date: NaiveDate,
    pub transform: RigidTransform,
    /// Positions in the date's own CRS frame.
    pub raw: Vec<Point>,
    /// The same positions centralized and aligned.
    pub aligned: Vec<Point>,
}

/// Clusters the layers (given in processing order), drops sparse clusters,
/// sorts labels along the seeding lines and completes every date.
pub fn build_catalog(
    layers: &[CatalogLayer],
    all_dates: &[NaiveDate],
    x_mean: Point,
    lines: &SeedingLines,
    params: &CatalogParams,
) -> Result<PlantCatalog> {
    if !(params.d_max > 0.0) {
        return Err(Error::Config(format!("d_max must be positive, got {}", params.d_max)));
    }
    for l in layers {
        if l.raw.len() != l.aligned.len() {
            return Err(Error::InvalidParameter(format!(
                "layer {}: {} raw but {} aligned points",
                l.date,
                l.raw.len(),
                l.aligned.len()
            )));
        }
        if !all_dates.contains(&l.date) {
            return Err(Error::InvalidParameter(format!("layer date {} is not an acquisition date", l.date)));
        }
    }
    let aligned: Vec<Vec<Point>> = layers.iter().map(|l| l.aligned.clone()).collect();
    let clustering = cluster_layers(&aligned, params.d_max);

    let mut drafts: Vec<PlantCluster> = clustering
        .centroids
        .iter()
        .map(|c| PlantCluster {
            id: 0,
            line_id: 0,
            centroid_xy: [c.x + x_mean.x, c.y + x_mean.y],
            members: Vec::new(),
        })
        .collect();
    for (layer, labels) in layers.iter().zip(&clustering.labels) {
        for (p, &l) in layer.raw.iter().zip(labels) {
            if l >= 0 {
                drafts[l as usize].members.push(Member {
                    date: layer.date,
                    x: p.x,
                    y: p.y,
                    kind: MemberKind::Direct,
                });
            }
        }
    }

    // Old cluster index of every kept draft, in draft order.
    let kept: Vec<usize> = (0..drafts.len())
        .filter(|&i| clustering.sizes[i] >= params.min_direct)
        .collect();
    let kept_drafts: Vec<PlantCluster> = kept.iter().map(|&i| drafts[i].clone()).collect();
    let (plants, order) = sort_labels(kept_drafts, lines, x_mean);

    let mut new_id = vec![-1i64; clustering.centroids.len()];
    for (new, &old_kept) in order.iter().enumerate() {
        new_id[kept[old_kept]] = new as i64;
    }
    let point_labels = layers
        .iter()
        .zip(&clustering.labels)
        .map(|(layer, labels)| DatedLabels {
            date: layer.date,
            labels: labels
                .iter()
                .map(|&l| if l >= 0 { new_id[l as usize] } else { -1 })
                .collect(),
        })
        .collect();

    let mut dates = all_dates.to_vec();
    dates.sort();
    dates.dedup();
    let mut used_dates: Vec<NaiveDate> = layers.iter().map(|l| l.date).collect();
    used_dates.sort();
    let mut transforms: Vec<DatedTransform> = layers
        .iter()
        .map(|l| DatedTransform {
            date: l.date,
            transform: l.transform,
        })
        .collect();
    transforms.sort_by_key(|t| t.date);

    let mut catalog = PlantCatalog {
        plants,
        dates,
        used_dates,
        transforms,
        alpha_s: lines.alpha_s,
        x_mean: [x_mean.x, x_mean.y],
        lines: lines.clone(),
        point_labels,
    };
    complete_indirect(&mut catalog);
    Ok(catalog)
}

/// Assigns each cluster its nearest seeding line and renumbers the clusters by
/// (line, position along the line, position across the line, input order).
/// Returns the sorted clusters and, for each, its index in the input.
pub fn sort_labels(
    clusters: Vec<PlantCluster>,
    lines: &SeedingLines,
    x_mean: Point,
) -> (Vec<PlantCluster>, Vec<usize>) {
    let keys: Vec<(usize, f64, f64)> = clusters
        .iter()
        .map(|c| {
            let zeta = Point::new(c.centroid_xy[0], c.centroid_xy[1]) - x_mean;
            let q = lines.to_line_frame(&zeta);
            let (line, _) = lines.nearest_line(q.y);
            (line, q.x, q.y)
        })
        .collect();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (keys[a], keys[b]);
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(a.cmp(&b))
    });
    let mut slots: Vec<Option<PlantCluster>> = clusters.into_iter().map(Some).collect();
    let sorted = order
        .iter()
        .enumerate()
        .map(|(id, &i)| {
            let mut c = slots[i].take().expect("permutation");
            c.id = id;
            c.line_id = keys[i].0;
            c
        })
        .collect();
    (sorted, order)
}

/// Adds an indirect member for every date a plant lacks, at the centroid
/// mapped back into that date's frame: `R(t)⁻¹(ζ) + x_mean`.
pub fn complete_indirect(catalog: &mut PlantCatalog) {
    let x_mean = catalog.x_mean();
    let transforms: Vec<(NaiveDate, RigidTransform)> =
        catalog.dates.iter().map(|&d| (d, catalog.transform(d))).collect();
    for plant in &mut catalog.plants {
        let zeta = Point::new(plant.centroid_xy[0], plant.centroid_xy[1]) - x_mean;
        for &(date, t) in &transforms {
            if plant.member(date).is_none() {
                let p = t.apply_inverse(&zeta) + x_mean;
                plant.members.push(Member {
                    date,
                    x: p.x,
                    y: p.y,
                    kind: MemberKind::Indirect,
                });
            }
        }
        plant.members.sort_by_key(|m| m.date);
    }
}
