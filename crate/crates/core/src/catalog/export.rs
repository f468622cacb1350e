//! CSV, GeoJSON and KML views of a catalog.

use std::fmt::Write as _;

use serde_json::{json, Value};

use super::{MemberKind, PlantCatalog};
use crate::error::{Error, Result};

/// UTM zone of the catalog CRS, needed to write KML in WGS84.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UtmZone {
    pub number: u8,
    pub north: bool,
}

impl UtmZone {
    /// Longitude and latitude in degrees.
    pub fn to_lon_lat(&self, easting: f64, northing: f64) -> Result<(f64, f64)> {
        let letter = if self.north { 'N' } else { 'M' };
        let (lat, lon) = utm::wsg84_utm_to_lat_lon(easting, northing, self.number, letter)
            .map_err(|e| Error::InvalidParameter(format!("UTM conversion of ({easting}, {northing}): {e:?}")))?;
        Ok((lon, lat))
    }
}

impl std::str::FromStr for UtmZone {
    type Err = Error;

    /// Parses zones like `32N` or `33s`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("invalid UTM zone `{s}`, expected e.g. 32N"));
        let (num, hemi) = s.split_at(s.len().checked_sub(1).ok_or_else(bad)?);
        let number: u8 = num.parse().map_err(|_| bad())?;
        let north = match hemi {
            "N" | "n" => true,
            "S" | "s" => false,
            _ => return Err(bad()),
        };
        if !(1..=60).contains(&number) {
            return Err(bad());
        }
        Ok(Self { number, north })
    }
}

fn kind_name(kind: MemberKind) -> &'static str {
    match kind {
        MemberKind::Direct => "direct",
        MemberKind::Indirect => "indirect",
    }
}

/// One row per plant and date: `plant_id,line_id,date,kind,x,y`.
pub fn to_csv(catalog: &PlantCatalog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("csv", e);
    w.write_record(["plant_id", "line_id", "date", "kind", "x", "y"])
        .map_err(csv_err)?;
    for p in &catalog.plants {
        for m in &p.members {
            w.write_record([
                p.id.to_string(),
                p.line_id.to_string(),
                m.date.to_string(),
                kind_name(m.kind).to_string(),
                m.x.to_string(),
                m.y.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// FeatureCollection with one point feature per plant and date.
pub fn to_geojson(catalog: &PlantCatalog) -> Value {
    let features: Vec<Value> = catalog
        .plants
        .iter()
        .flat_map(|p| {
            p.members.iter().map(move |m| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [m.x, m.y]},
                    "properties": {
                        "id": p.id,
                        "line": p.line_id,
                        "date": m.date.to_string(),
                        "kind": kind_name(m.kind),
                    }
                })
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// One placemark per plant at its centroid. Without a zone the CRS
/// coordinates are written unchanged.
pub fn to_kml(catalog: &PlantCatalog, zone: Option<UtmZone>) -> Result<String> {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<kml xmlns=\"http://www.opengis.net/kml/2.2\">\n<Document>\n<name>plant catalog</name>\n");
    for p in &catalog.plants {
        let [x, y] = p.centroid_xy;
        let (lon, lat) = match zone {
            Some(z) => z.to_lon_lat(x, y)?,
            None => (x, y),
        };
        let _ = write!(
            out,
            "<Placemark>\n<name>{}</name>\n<ExtendedData>\n\
             <Data name=\"line\"><value>{}</value></Data>\n\
             <Data name=\"direct\"><value>{}</value></Data>\n\
             </ExtendedData>\n<Point><coordinates>{lon},{lat}</coordinates></Point>\n</Placemark>\n",
            p.id,
            p.line_id,
            p.direct_count(),
        );
    }
    out.push_str("</Document>\n</kml>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{Member, PlantCluster};
    use super::*;
    use crate::lines::SeedingLines;
    use chrono::NaiveDate;

    fn sample() -> PlantCatalog {
        let d = NaiveDate::from_ymd_opt(2024, 6, 1).unwrap();
        PlantCatalog {
            plants: vec![PlantCluster {
                id: 0,
                line_id: 2,
                centroid_xy: [500000.0, 5500000.0],
                members: vec![Member {
                    date: d,
                    x: 500000.5,
                    y: 5500000.25,
                    kind: MemberKind::Indirect,
                }],
            }],
            dates: vec![d],
            used_dates: vec![d],
            transforms: vec![],
            alpha_s: 0.0,
            x_mean: [0.0, 0.0],
            lines: SeedingLines {
                alpha_s: 0.0,
                y_star: vec![0.0],
                median_distance: 1.0,
                hough_distance: 1.0,
            },
            point_labels: vec![],
        }
    }

    #[test]
    fn csv_rows() {
        let text = to_csv(&sample()).unwrap();
        assert_eq!(text, "plant_id,line_id,date,kind,x,y\n0,2,2024-06-01,indirect,500000.5,5500000.25\n");
    }

    #[test]
    fn geojson_features() {
        let v = to_geojson(&sample());
        let f = &v["features"][0];
        assert_eq!(f["properties"]["kind"], "indirect");
        assert_eq!(f["properties"]["line"], 2);
        assert_eq!(f["geometry"]["coordinates"][1], 5500000.25);
    }

    #[test]
    fn kml_in_wgs84() {
        // Easting 500 km lies on the central meridian of the zone (9°E for 32N).
        let kml = to_kml(&sample(), Some("32N".parse().unwrap())).unwrap();
        let coords = kml.split("<coordinates>").nth(1).unwrap().split("</coordinates>").next().unwrap();
        let (lon, lat) = coords.split_once(',').unwrap();
        let (lon, lat): (f64, f64) = (lon.parse().unwrap(), lat.parse().unwrap());
        assert!((lon - 9.0).abs() < 1e-9);
        assert!(lat > 49.0 && lat < 50.0);
        assert!(kml.contains("<name>0</name>"));
    }

    #[test]
    fn zone_parsing() {
        assert_eq!("33s".parse::<UtmZone>().unwrap(), UtmZone { number: 33, north: false });
        assert!("61N".parse::<UtmZone>().unwrap_err().is_config());
        assert!("N".parse::<UtmZone>().is_err());
    }
}
