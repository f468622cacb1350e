//! Precision and recall of detected plant positions against ground truth.
//!
//! Every detection is assigned to its nearest true position. A true position
//! with at least one assignment inside the tolerance counts one true positive
//! and its remaining assignments count as false positives; a true position
//! without such an assignment is a false negative and all its assignments are
//! false positives.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::PlantCatalog;
use crate::error::{Error, Result};
use crate::geom::{NearestIndex, Point};

/// Tolerance radius used for the row-crop preset (metres).
pub const TOLERANCE_ROW_CROP: f64 = 0.08;
/// Tolerance radius for large plants, roughly one plant radius (metres).
pub const TOLERANCE_LARGE_PLANT: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub detection: usize,
    pub truth: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub date: Option<NaiveDate>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub tolerance: f64,
    /// Closest in-tolerance detection of every true positive.
    pub pairs: Vec<MatchedPair>,
}

pub fn evaluate(detections: &[Point], truth: &[Point], tolerance: f64) -> Result<EvalReport> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("no ground-truth positions".into()));
    }
    let index = NearestIndex::new(truth);
    // Closest in-tolerance assignment and assignment count per true position.
    let mut best: Vec<Option<(usize, f64)>> = vec![None; truth.len()];
    let mut assigned = vec![0usize; truth.len()];
    for (i, d) in detections.iter().enumerate() {
        let (t, dist) = index.nearest(d).expect("truth is not empty");
        assigned[t] += 1;
        if dist <= tolerance && best[t].is_none_or(|(_, b)| dist < b) {
            best[t] = Some((i, dist));
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut pairs = Vec::new();
    for t in 0..truth.len() {
        match best[t] {
            Some((i, dist)) => {
                tp += 1;
                fp += assigned[t] - 1;
                pairs.push(MatchedPair {
                    detection: i,
                    truth: t,
                    distance: dist,
                });
            }
            None => {
                fn_ += 1;
                fp += assigned[t];
            }
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    Ok(EvalReport {
        date: None,
        tp,
        fp,
        fn_,
        precision,
        recall: tp as f64 / truth.len() as f64,
        tolerance,
        pairs,
    })
}

/// Ground truth of one date.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedPoints {
    pub date: NaiveDate,
    pub points: Vec<Point>,
}

/// Scores the catalog on every date with ground truth, skipping leading
/// indirect detections.
pub fn evaluate_catalog(catalog: &PlantCatalog, truth: &[DatedPoints], tolerance: f64) -> Result<Vec<EvalReport>> {
    truth
        .iter()
        .filter(|t| catalog.dates.contains(&t.date))
        .map(|t| {
            let mut r = evaluate(&catalog.scored_positions(t.date), &t.points, tolerance)?;
            r.date = Some(t.date);
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
    /// Mean of the per-date values.
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn report(reports: &[EvalReport]) -> Result<EvalSummary> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no evaluation reports".into()));
    }
    let n = reports.len() as f64;
    Ok(EvalSummary {
        reports: reports.to_vec(),
        mean_precision: reports.iter().map(|r| r.precision).sum::<f64>() / n,
        mean_recall: reports.iter().map(|r| r.recall).sum::<f64>() / n,
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
    })
}

impl EvalSummary {
    /// One row per date: `date,tp,fp,fn,precision,recall,tolerance`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::format("csv", e);
        w.write_record(["date", "tp", "fp", "fn", "precision", "recall", "tolerance"])
            .map_err(err)?;
        for r in &self.reports {
            w.write_record([
                r.date.map(|d| d.to_string()).unwrap_or_default(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.tolerance.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("csv", e))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Precision against recall, one point per date, ready for plotting.
    pub fn plot_series(&self) -> Value {
        let points: Vec<Value> = self
            .reports
            .iter()
            .map(|r| {
                json!({
                    "date": r.date.map(|d| d.to_string()),
                    "recall": r.recall,
                    "precision": r.precision,
                })
            })
            .collect();
        json!({"x": "recall", "y": "precision", "points": points})
    }
}

/// FeatureCollection of point features with a `date` property.
pub fn truth_to_geojson(truth: &[DatedPoints]) -> Value {
    let features: Vec<Value> = truth
        .iter()
        .flat_map(|t| {
            t.points.iter().enumerate().map(move |(i, p)| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
                    "properties": {"id": i, "date": t.date.to_string()},
                })
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Reads a truth GeoJSON file.
pub fn read_truth(path: &std::path::Path) -> Result<Vec<DatedPoints>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format("truth GeoJSON", e))?;
    truth_from_geojson(&value)
}

/// Reads point features with a `date` property, grouped by ascending date.
pub fn truth_from_geojson(value: &Value) -> Result<Vec<DatedPoints>> {
    let bad = |m: &str| Error::format("truth GeoJSON", m);
    let features = value["features"].as_array().ok_or_else(|| bad("missing features array"))?;
    let mut by_date: std::collections::BTreeMap<NaiveDate, Vec<Point>> = Default::default();
    for f in features {
        let c = &f["geometry"]["coordinates"];
        let (x, y) = match (c[0].as_f64(), c[1].as_f64()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(bad("feature without point coordinates")),
        };
        let date: NaiveDate = f["properties"]["date"]
            .as_str()
            .ok_or_else(|| bad("feature without date"))?
            .parse()
            .map_err(|e| Error::format("truth GeoJSON", e))?;
        by_date.entry(date).or_default().push(Point::new(x, y));
    }
    Ok(by_date
        .into_iter()
        .map(|(date, points)| DatedPoints { date, points })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use proptest::prelude::*;

    #[test]
    fn perfect_detections() {
        let truth = vec![point(0.0, 0.0), point(1.0, 0.0), point(0.0, 1.0)];
        let r = evaluate(&truth, &truth, 0.08).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (3, 0, 0));
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
    }

    #[test]
    fn one_displaced_detection() {
        let truth: Vec<Point> = (0..10).map(|i| point(i as f64, 0.0)).collect();
        let mut det: Vec<Point> = (0..9).map(|i| point(i as f64 + 0.01, 0.0)).collect();
        det.push(point(9.0, 0.16));
        let r = evaluate(&det, &truth, 0.08).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (9, 1, 1));
        assert!((r.precision - 0.9).abs() < 1e-12 && (r.recall - 0.9).abs() < 1e-12);
    }

    #[test]
    fn double_detection() {
        let r = evaluate(&[point(0.01, 0.0), point(-0.02, 0.0)], &[point(0.0, 0.0)], 0.08).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert_eq!(r.pairs[0].detection, 0);
    }

    #[test]
    fn empty_truth_is_an_error() {
        assert!(evaluate(&[point(0.0, 0.0)], &[], 0.08).is_err());
        assert!(evaluate(&[], &[point(0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn summary_averages_dates() {
        let mk = |p: f64, r: f64| EvalReport {
            date: None,
            tp: 1,
            fp: 0,
            fn_: 0,
            precision: p,
            recall: r,
            tolerance: 0.08,
            pairs: vec![],
        };
        let one = report(&[mk(0.9, 0.8)]).unwrap();
        assert_eq!((one.mean_precision, one.mean_recall), (0.9, 0.8));
        let two = report(&[mk(0.9, 0.8), mk(0.7, 1.0)]).unwrap();
        assert!((two.mean_precision - 0.8).abs() < 1e-12 && (two.mean_recall - 0.9).abs() < 1e-12);
        assert!(report(&[]).is_err());
        assert!(two.to_csv().unwrap().starts_with("date,tp,fp,fn,precision,recall,tolerance\n"));
        assert_eq!(two.plot_series()["points"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn truth_geojson_round_trip() {
        let d1 = NaiveDate::from_ymd_opt(2024, 5, 1).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2024, 5, 8).unwrap();
        let truth = vec![
            DatedPoints { date: d1, points: vec![point(1.5, 2.25)] },
            DatedPoints { date: d2, points: vec![point(1.5, 2.25), point(3.0, -1.0)] },
        ];
        assert_eq!(truth_from_geojson(&truth_to_geojson(&truth)).unwrap(), truth);
    }

    /// Counts with a quadratic scan and no shared code.
    fn brute_force(det: &[Point], truth: &[Point], tol: f64) -> (usize, usize, usize) {
        let mut owners: Vec<Vec<f64>> = vec![Vec::new(); truth.len()];
        for d in det {
            let mut best = 0;
            for t in 1..truth.len() {
                if (d - truth[t]).norm() < (d - truth[best]).norm() {
                    best = t;
                }
            }
            owners[best].push((d - truth[best]).norm());
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for o in owners {
            if o.iter().any(|&x| x <= tol) {
                tp += 1;
                fp += o.len() - 1;
            } else {
                fn_ += 1;
                fp += o.len();
            }
        }
        (tp, fp, fn_)
    }

    fn pts() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 0..40)
            .prop_map(|v| v.into_iter().map(|(x, y)| point(x, y)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_brute_force(det in pts(), truth in pts(), tol in 0.01f64..0.5) {
            prop_assume!(!truth.is_empty());
            let r = evaluate(&det, &truth, tol).unwrap();
            prop_assert_eq!((r.tp, r.fp, r.fn_), brute_force(&det, &truth, tol));
            prop_assert_eq!(r.tp + r.fn_, truth.len());
            prop_assert_eq!(r.tp + r.fp, det.len());
        }

        #[test]
        fn detection_order_does_not_matter(det in pts(), truth in pts(), tol in 0.01f64..0.5, seed in 0usize..1000) {
            prop_assume!(!truth.is_empty() && !det.is_empty());
            let r = evaluate(&det, &truth, tol).unwrap();
            let mut shuffled = det.clone();
            shuffled.rotate_left(seed % det.len());
            let s = evaluate(&shuffled, &truth, tol).unwrap();
            prop_assert_eq!((r.tp, r.fp, r.fn_), (s.tp, s.fp, s.fn_));
        }
    }
}
