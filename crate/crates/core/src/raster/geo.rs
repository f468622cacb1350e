//! Six-parameter affine geotransform and ESRI world files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map from pixel (col, row) to a planar metric CRS.
///
/// ```text
/// x = origin_x + col * px_w   + row * rot_xy
/// y = origin_y + col * rot_yx + row * px_h
/// ```
///
/// The origin is the CRS position of the *center* of pixel (0, 0), as in world files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub px_w: f64,
    pub px_h: f64,
    pub rot_xy: f64,
    pub rot_yx: f64,
}

impl GeoTransform {
    /// North-up transform without rotation terms.
    pub fn new(origin_x: f64, origin_y: f64, px_w: f64, px_h: f64) -> Self {
        Self {
            origin_x,
            origin_y,
            px_w,
            px_h,
            rot_xy: 0.0,
            rot_yx: 0.0,
        }
    }

    /// One pixel per CRS unit, pixel (0, 0) at the CRS origin.
    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.px_w * self.px_h - self.rot_xy * self.rot_yx
    }

    /// Geometric-mean pixel edge length in CRS units.
    pub fn pixel_size(&self) -> f64 {
        self.det().abs().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.origin_x,
            self.origin_y,
            self.px_w,
            self.px_h,
            self.rot_xy,
            self.rot_yx,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "geotransform has non-finite terms".into(),
            ));
        }
        if self.det() == 0.0 {
            return Err(Error::InvalidParameter(
                "geotransform linear part is singular".into(),
            ));
        }
        Ok(())
    }

    pub fn px_to_crs(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.px_w + row * self.rot_xy,
            self.origin_y + col * self.rot_yx + row * self.px_h,
        )
    }

    pub fn crs_to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.origin_x;
        let dy = y - self.origin_y;
        let det = self.det();
        (
            (self.px_h * dx - self.rot_xy * dy) / det,
            (self.px_w * dy - self.rot_yx * dx) / det,
        )
    }

    /// Parses the six-line world file text (A, D, B, E, C, F).
    pub fn parse_world_file(text: &str) -> std::result::Result<Self, String> {
        let values: Vec<f64> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| format!("bad number `{l}`: {e}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        if values.len() != 6 {
            return Err(format!("expected 6 values, found {}", values.len()));
        }
        let geo = Self {
            px_w: values[0],
            rot_yx: values[1],
            rot_xy: values[2],
            px_h: values[3],
            origin_x: values[4],
            origin_y: values[5],
        };
        geo.validate().map_err(|e| e.to_string())?;
        Ok(geo)
    }

    /// World file text; values are written so that parsing returns identical bits.
    pub fn to_world_file(&self) -> String {
        format!(
            "{:?}\n{:?}\n{:?}\n{:?}\n{:?}\n{:?}\n",
            self.px_w, self.rot_yx, self.rot_xy, self.px_h, self.origin_x, self.origin_y
        )
    }

    pub fn read_world_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_world_file(&text).map_err(|message| Error::WorldFile {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write_world_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_world_file()).map_err(|e| Error::io(path, e))
    }
}

/// Candidate world-file paths for an image, in lookup order (`.pgw`, `.pngw`, `.wld` for PNG).
pub fn world_file_candidates(image: &Path) -> Vec<PathBuf> {
    let ext = image
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let mut out = Vec::new();
    if ext.len() >= 2 {
        let first = &ext[..1];
        let last = &ext[ext.len() - 1..];
        out.push(image.with_extension(format!("{first}{last}w")));
    }
    if !ext.is_empty() {
        out.push(image.with_extension(format!("{ext}w")));
    }
    out.push(image.with_extension("wld"));
    out
}

/// Conventional world-file path written next to an image.
pub fn world_file_path(image: &Path) -> PathBuf {
    world_file_candidates(image).swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_maps_pixels_to_themselves() {
        let g = GeoTransform::identity();
        assert_eq!(g.px_to_crs(10.0, 20.0), (10.0, 20.0));
        assert_eq!(g.crs_to_px(10.0, 20.0), (10.0, 20.0));
    }

    #[test]
    fn north_up_affine_arithmetic() {
        let g = GeoTransform::new(100.0, 200.0, 0.5, -0.5);
        assert_eq!(g.px_to_crs(2.0, 2.0), (101.0, 199.0));
        let (c, r) = g.crs_to_px(101.0, 199.0);
        assert!((c - 2.0).abs() < 1e-9 && (r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn parses_four_millimetre_world_file() {
        let g = GeoTransform::parse_world_file("0.004\n0\n0\n-0.004\n500000.0\n5712000.0\n").unwrap();
        assert_eq!(g.px_w, 0.004);
        assert_eq!(g.px_h, -0.004);
        assert_eq!(g.origin_x, 500000.0);
        assert_eq!(g.origin_y, 5712000.0);
        let again = GeoTransform::parse_world_file(&g.to_world_file()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn world_file_rejects_wrong_line_count_and_singular() {
        assert!(GeoTransform::parse_world_file("1\n0\n0\n1\n0\n").is_err());
        assert!(GeoTransform::parse_world_file("0\n0\n0\n0\n0\n0\n").is_err());
        assert!(GeoTransform::parse_world_file("1\nx\n0\n1\n0\n0\n").is_err());
    }

    #[test]
    fn world_file_names() {
        let c = world_file_candidates(Path::new("a/b.png"));
        assert_eq!(c[0], PathBuf::from("a/b.pgw"));
        assert_eq!(c[1], PathBuf::from("a/b.pngw"));
        assert_eq!(c[2], PathBuf::from("a/b.wld"));
        assert_eq!(world_file_path(Path::new("x.tif")), PathBuf::from("x.tfw"));
    }

    /// Scaled, rotated and mildly sheared pixel grids with moderate origins.
    fn arb_geo() -> impl Strategy<Value = GeoTransform> {
        (
            -1e4f64..1e4,
            -1e4f64..1e4,
            0.01f64..2.0,
            0.01f64..2.0,
            -std::f64::consts::PI..std::f64::consts::PI,
            -0.2f64..0.2,
            any::<bool>(),
        )
            .prop_map(|(ox, oy, sx, sy, theta, shear, flip)| {
                // Rotation times the upper-triangular [[sx, shear·sy], [0, sy]].
                let (s, c) = theta.sin_cos();
                let sy = if flip { -sy } else { sy };
                GeoTransform {
                    origin_x: ox,
                    origin_y: oy,
                    px_w: c * sx,
                    rot_xy: (c * shear - s) * sy,
                    rot_yx: s * sx,
                    px_h: (s * shear + c) * sy,
                }
            })
            .prop_filter("non-singular", |g| g.det().abs() > 1e-6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn pixel_round_trip(g in arb_geo(), col in -5000.0f64..5000.0, row in -5000.0f64..5000.0) {
            let (x, y) = g.px_to_crs(col, row);
            let (c, r) = g.crs_to_px(x, y);
            prop_assert!((c - col).abs() <= 1e-9, "{} vs {}", c, col);
            prop_assert!((r - row).abs() <= 1e-9, "{} vs {}", r, row);
        }

        #[test]
        fn world_file_text_round_trip_is_bit_exact(g in arb_geo()) {
            let back = GeoTransform::parse_world_file(&g.to_world_file()).unwrap();
            prop_assert_eq!(g, back);
        }
    }
}
