//! Georeferenced multi-channel rasters.
//!
//! Samples are held as planar `f32` reflectances in `[0, 1]`: integer inputs are
//! divided by their type maximum at load time. Pixels whose raw samples equal the
//! nodata sentinel on every channel are masked and skipped by all statistics.

mod geo;
mod io;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geo::{world_file_candidates, world_file_path, GeoTransform};
pub use io::{load_raster, save_mask_png, save_raster, LoadOptions};

/// Storage depth of the source samples; used to write integer data back unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleDepth {
    U8,
    U16,
}

impl SampleDepth {
    pub fn max_value(self) -> f32 {
        match self {
            SampleDepth::U8 => u8::MAX as f32,
            SampleDepth::U16 => u16::MAX as f32,
        }
    }

    /// Normalized value of a raw integer sample.
    pub fn normalize(self, raw: f64) -> f32 {
        raw as f32 / self.max_value()
    }

    pub fn quantize(self, value: f32) -> u16 {
        (value.clamp(0.0, 1.0) * self.max_value()).round() as u16
    }
}

/// Calendar date of an acquisition plus whole days since the first acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Acquisition {
    pub date: NaiveDate,
    pub day: i64,
}

#[derive(Debug, Clone)]
pub struct Raster {
    channels: Vec<String>,
    planes: Vec<Vec<f32>>,
    width: usize,
    height: usize,
    nodata: Vec<bool>,
    geo: GeoTransform,
    depth: SampleDepth,
    pub acquisition: Option<Acquisition>,
}

impl Raster {
    /// Builds a raster from planar, row-major channel data.
    pub fn new(
        channels: Vec<String>,
        width: usize,
        height: usize,
        planes: Vec<Vec<f32>>,
        geo: GeoTransform,
        depth: SampleDepth,
    ) -> Result<Self> {
        if channels.len() != planes.len() {
            return Err(Error::ChannelMismatch {
                expected: channels.len(),
                found: planes.len(),
            });
        }
        if channels.is_empty() {
            return Err(Error::InvalidParameter("raster needs at least one channel".into()));
        }
        if let Some(p) = planes.iter().find(|p| p.len() != width * height) {
            return Err(Error::InvalidParameter(format!(
                "channel plane has {} samples, expected {}x{}",
                p.len(),
                width,
                height
            )));
        }
        geo.validate()?;
        Ok(Self {
            channels,
            planes,
            width,
            height,
            nodata: vec![false; width * height],
            geo,
            depth,
            acquisition: None,
        })
    }

    /// Masks pixels whose raw samples equal `sentinel` on every channel.
    pub fn mask_sentinel(&mut self, sentinel: f64) {
        let value = self.depth.normalize(sentinel);
        for (i, flag) in self.nodata.iter_mut().enumerate() {
            *flag = self.planes.iter().all(|p| p[i] == value);
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn depth(&self) -> SampleDepth {
        self.depth
    }

    pub fn nodata(&self) -> &[bool] {
        &self.nodata
    }

    pub fn set_nodata(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::InvalidParameter("nodata mask shape mismatch".into()));
        }
        self.nodata = mask;
        Ok(())
    }

    pub fn plane(&self, index: usize) -> &[f32] {
        &self.planes[index]
    }

    /// Channel plane by case-insensitive name.
    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        self.channels
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .map(|i| self.planes[i].as_slice())
    }

    pub fn require_channel(&self, name: &str) -> Result<&[f32]> {
        self.channel(name)
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    /// `size`×`size` window whose center pixel is (`center_col`, `center_row`),
    /// i.e. covering columns `center_col - size/2 .. center_col + size/2`.
    /// Parts outside the raster are filled with zeros and flagged nodata.
    pub fn crop_centered(&self, center_col: i64, center_row: i64, size: usize) -> Raster {
        let half = (size / 2) as i64;
        let col0 = center_col - half;
        let row0 = center_row - half;
        let mut planes = vec![vec![0.0f32; size * size]; self.planes.len()];
        let mut nodata = vec![true; size * size];
        for r in 0..size {
            let sr = row0 + r as i64;
            if sr < 0 || sr >= self.height as i64 {
                continue;
            }
            for c in 0..size {
                let sc = col0 + c as i64;
                if sc < 0 || sc >= self.width as i64 {
                    continue;
                }
                let src = sr as usize * self.width + sc as usize;
                let dst = r * size + c;
                for (out, plane) in planes.iter_mut().zip(&self.planes) {
                    out[dst] = plane[src];
                }
                nodata[dst] = self.nodata[src];
            }
        }
        let (ox, oy) = self.geo.px_to_crs(col0 as f64, row0 as f64);
        let geo = GeoTransform {
            origin_x: ox,
            origin_y: oy,
            ..self.geo
        };
        Raster {
            channels: self.channels.clone(),
            planes,
            width: size,
            height: size,
            nodata,
            geo,
            depth: self.depth,
            acquisition: self.acquisition,
        }
    }
}
