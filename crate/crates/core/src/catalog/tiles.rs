//! Per-plant image tiles.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{MemberKind, PlantCatalog};
use crate::error::{Error, Result};
use crate::raster::{save_raster, Raster};

#[derive(Debug, Clone)]
pub struct Tile {
    pub plant_id: usize,
    pub date: NaiveDate,
    pub kind: MemberKind,
    pub raster: Raster,
}

impl Tile {
    pub fn file_name(&self) -> String {
        let kind = match self.kind {
            MemberKind::Direct => "direct",
            MemberKind::Indirect => "indirect",
        };
        format!("plant{:05}_{}_{kind}.png", self.plant_id, self.date)
    }
}

fn check_frame(frame_px: usize) -> Result<()> {
    if frame_px == 0 || frame_px % 2 != 0 {
        return Err(Error::Config(format!("tile frame must be even and positive, got {frame_px}")));
    }
    Ok(())
}

/// `frame_px`×`frame_px` crops centred on every member position. Dates without
/// a raster are skipped with a warning.
pub fn extract_tiles(catalog: &PlantCatalog, rasters: &[(NaiveDate, &Raster)], frame_px: usize) -> Result<Vec<Tile>> {
    check_frame(frame_px)?;
    for &date in &catalog.dates {
        if !rasters.iter().any(|(d, _)| *d == date) {
            log::warn!("no raster for {date}; skipping its tiles");
        }
    }
    let mut tiles = Vec::new();
    for &(date, raster) in rasters {
        tiles.extend(extract_date_tiles(catalog, date, raster, frame_px)?);
    }
    Ok(tiles)
}

/// Tiles of every plant on one date.
pub fn extract_date_tiles(catalog: &PlantCatalog, date: NaiveDate, raster: &Raster, frame_px: usize) -> Result<Vec<Tile>> {
    check_frame(frame_px)?;
    Ok(catalog
        .plants
        .par_iter()
        .filter_map(|p| {
            let m = p.member(date)?;
            let (col, row) = raster.geo().crs_to_px(m.x, m.y);
            Some(Tile {
                plant_id: p.id,
                date,
                kind: m.kind,
                raster: raster.crop_centered(col.round() as i64, row.round() as i64, frame_px),
            })
        })
        .collect())
}

/// Writes every tile as PNG plus world file into `dir`; returns the paths.
pub fn save_tiles(tiles: &[Tile], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tiles
        .par_iter()
        .map(|t| {
            let path = dir.join(t.file_name());
            save_raster(&path, &t.raster)?;
            Ok(path)
        })
        .collect()
}
