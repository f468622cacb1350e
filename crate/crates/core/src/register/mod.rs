//! Rigid alignment of per-date plant position clouds.

mod cpd;

use serde::{Deserialize, Serialize};

use crate::catalog::cluster_layers;
use crate::error::{Error, Result};
use crate::geom::{self, NearestIndex, Point};

pub use cpd::{negative_log_likelihood, rigid_cpd, CpdOptions, CpdResult};

/// `x' = S·Rot(α)·x + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub scale: f64,
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
    pub shift: [f64; 2],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        angle: 0.0,
        shift: [0.0, 0.0],
    };

    pub fn new(scale: f64, angle: f64, shift: [f64; 2]) -> Self {
        Self { scale, angle, shift }
    }

    pub fn apply(&self, p: &Point) -> Point {
        geom::rotate(p, self.angle) * self.scale + Point::new(self.shift[0], self.shift[1])
    }

    /// `x = (1/S)·Rot(−α)·(x' − B)`.
    pub fn apply_inverse(&self, p: &Point) -> Point {
        geom::rotate(&(p - Point::new(self.shift[0], self.shift[1])), -self.angle) / self.scale
    }

    pub fn inverse(&self) -> Self {
        let b = geom::rotate(&Point::new(self.shift[0], self.shift[1]), -self.angle) / self.scale;
        Self {
            scale: 1.0 / self.scale,
            angle: -self.angle,
            shift: [-b.x, -b.y],
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let b = self.apply(&Point::new(other.shift[0], other.shift[1]));
        Self {
            scale: self.scale * other.scale,
            angle: self.angle + other.angle,
            shift: [b.x, b.y],
        }
    }
}

/// Per-date clouds shifted by the mean of the per-date means.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedClouds {
    pub layers: Vec<Vec<Point>>,
    pub mean: Point,
}

pub fn centralize(layers: &[Vec<Point>]) -> Result<CentralizedClouds> {
    let means: Vec<Point> = layers.iter().filter_map(|l| geom::mean(l)).collect();
    let mean = geom::mean(&means)
        .ok_or_else(|| Error::InsufficientData("every point layer is empty".into()))?;
    Ok(CentralizedClouds {
        layers: layers
            .iter()
            .map(|l| l.iter().map(|p| p - mean).collect())
            .collect(),
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub d_register: f64,
    pub d_group: f64,
    pub cpd: CpdOptions,
}

/// Outcome of registering one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub transform: RigidTransform,
    /// False when the layer could not be registered and the identity was used.
    pub registered: bool,
    pub converged: bool,
    pub iterations: usize,
    pub basis_points: usize,
    pub floating_points: usize,
    pub note: Option<String>,
}

impl LayerAlignment {
    fn identity(note: Option<String>, basis_points: usize, floating_points: usize) -> Self {
        Self {
            transform: RigidTransform::IDENTITY,
            registered: note.is_none(),
            converged: true,
            iterations: 0,
            basis_points,
            floating_points,
            note,
        }
    }
}

/// Processing order: ascending cover ratio, ties by the secondary key (the date).
pub fn order_by_cover<K: Ord>(keys: &[(f64, K)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].0.total_cmp(&keys[b].0).then(keys[a].1.cmp(&keys[b].1)));
    idx
}

fn near_subset(points: &[Point], other: &NearestIndex, d: f64) -> Vec<Point> {
    points
        .iter()
        .filter(|p| other.nearest(p).is_some_and(|(_, dist)| dist <= d))
        .copied()
        .collect()
}

/// Aligns centralized layers given in processing order (lowest cover first).
///
/// The first layer is the initial basis. Every following layer is registered
/// against the running set of group centroids using only the points of both sets
/// whose nearest neighbour in the other set is within `d_register`; the whole
/// layer is then transformed and merged into the centroid set with radius `d_group`.
pub fn align_all(
    layers: &[Vec<Point>],
    params: &AlignParams,
) -> Result<(Vec<Vec<Point>>, Vec<LayerAlignment>)> {
    if !(params.d_group > 0.0 && params.d_group < params.d_register) {
        return Err(Error::Config(format!(
            "alignment needs 0 < d_group < d_register, got d_group={} d_register={}",
            params.d_group, params.d_register
        )));
    }
    let Some(first) = layers.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let mut aligned = vec![first.clone()];
    let mut results = vec![LayerAlignment::identity(None, first.len(), first.len())];
    let mut comb = first.clone();

    for (k, layer) in layers.iter().enumerate().skip(1) {
        let comb_index = NearestIndex::new(&comb);
        let layer_index = NearestIndex::new(layer);
        let floating = near_subset(layer, &comb_index, params.d_register);
        let basis = near_subset(&comb, &layer_index, params.d_register);

        let result = if basis.len() < 3 || floating.len() < 3 {
            let note = format!(
                "layer {k}: only {} basis and {} floating points within d_register",
                basis.len(),
                floating.len()
            );
            log::warn!("{note}; using identity transform");
            LayerAlignment::identity(Some(note), basis.len(), floating.len())
        } else {
            match rigid_cpd(&basis, &floating, &params.cpd) {
                Ok(r) => {
                    if !r.converged {
                        log::warn!("layer {k}: registration stopped after {} iterations", r.iterations);
                    }
                    LayerAlignment {
                        transform: r.transform,
                        registered: true,
                        converged: r.converged,
                        iterations: r.iterations,
                        basis_points: basis.len(),
                        floating_points: floating.len(),
                        note: None,
                    }
                }
                Err(e) => {
                    let note = format!("layer {k}: {e}");
                    log::warn!("{note}; using identity transform");
                    LayerAlignment::identity(Some(note), basis.len(), floating.len())
                }
            }
        };

        let moved: Vec<Point> = layer.iter().map(|p| result.transform.apply(p)).collect();
        comb = cluster_layers(&[comb, moved.clone()], params.d_group).centroids;
        aligned.push(moved);
        results.push(result);
    }
    Ok((aligned, results))
}
