//! Planar point helpers and a uniform-grid nearest-neighbour index.
//!
//! All neighbour queries break distance ties toward the lower point index so
//! that clustering and matching are reproducible.

use nalgebra::Vector2;

/// A position in a planar metric frame (or in pixels, where noted).
pub type Point = Vector2<f64>;

pub fn point(x: f64, y: f64) -> Point {
    Point::new(x, y)
}

/// Arithmetic mean of a non-empty point slice.
pub fn mean(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Point::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// Rotates `p` counter-clockwise by `angle` radians about the origin.
pub fn rotate(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Bucket grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<Point>,
    origin: Point,
    cell: f64,
    cols: i64,
    rows: i64,
    cell_start: Vec<u32>,
    items: Vec<u32>,
}

impl NearestIndex {
    pub fn new(points: &[Point]) -> Self {
        let n = points.len();
        if n == 0 {
            return Self {
                points: Vec::new(),
                origin: Point::zeros(),
                cell: 1.0,
                cols: 0,
                rows: 0,
                cell_start: vec![0],
                items: Vec::new(),
            };
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let area = ext.x * ext.y;
        let mut cell = if area > 0.0 {
            (area / n as f64).sqrt()
        } else {
            ext.x.max(ext.y) / n as f64
        };
        if !(cell.is_finite() && cell > 0.0) {
            cell = 1.0;
        }
        let cols = ((ext.x / cell).floor() as i64 + 1).max(1);
        let rows = ((ext.y / cell).floor() as i64 + 1).max(1);
        let ncell = (cols * rows) as usize;

        let cell_of = |p: &Point| -> usize {
            let c = (((p.x - lo.x) / cell).floor() as i64).clamp(0, cols - 1);
            let r = (((p.y - lo.y) / cell).floor() as i64).clamp(0, rows - 1);
            (r * cols + c) as usize
        };
        let mut counts = vec![0u32; ncell + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let cell_start = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; n];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            cols,
            rows,
            cell_start,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn cell_coords(&self, q: &Point) -> (i64, i64) {
        let c = ((q.x - self.origin.x) / self.cell).floor();
        let r = ((q.y - self.origin.y) / self.cell).floor();
        // Far-away queries are clamped; the ring search below still terminates correctly.
        let lim = 1e15;
        (c.clamp(-lim, lim) as i64, r.clamp(-lim, lim) as i64)
    }

    fn bucket(&self, c: i64, r: i64) -> &[u32] {
        let idx = (r * self.cols + c) as usize;
        &self.items[self.cell_start[idx] as usize..self.cell_start[idx + 1] as usize]
    }

    /// Index and distance of the nearest indexed point; ties go to the lower index.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (qc, qr) = self.cell_coords(q);
        // Chebyshev ring distance from the query cell to the farthest grid cell.
        let max_ring = [
            (qc - 0).abs(),
            (qc - (self.cols - 1)).abs(),
            (qr - 0).abs(),
            (qr - (self.rows - 1)).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        // First ring that can contain grid cells.
        let dc = if qc < 0 {
            -qc
        } else if qc >= self.cols {
            qc - self.cols + 1
        } else {
            0
        };
        let dr = if qr < 0 {
            -qr
        } else if qr >= self.rows {
            qr - self.rows + 1
        } else {
            0
        };
        let first_ring = dc.max(dr);

        let mut best: Option<(usize, f64)> = None;
        let consider = |i: u32, best: &mut Option<(usize, f64)>| {
            let d = (self.points[i as usize] - q).norm();
            match best {
                Some((bi, bd)) if d > *bd || (d == *bd && (i as usize) > *bi) => {}
                _ => *best = Some((i as usize, d)),
            }
        };
        for ring in first_ring..=max_ring {
            if let Some((_, bd)) = best {
                // Every cell in this ring is at least (ring - 1) cells away.
                if bd < (ring - 1) as f64 * self.cell {
                    break;
                }
            }
            let c0 = (qc - ring).max(0);
            let c1 = (qc + ring).min(self.cols - 1);
            let r0 = (qr - ring).max(0);
            let r1 = (qr + ring).min(self.rows - 1);
            for r in r0..=r1 {
                let on_edge_row = (r - qr).abs() == ring;
                if on_edge_row {
                    for c in c0..=c1 {
                        for &i in self.bucket(c, r) {
                            consider(i, &mut best);
                        }
                    }
                } else {
                    for c in [qc - ring, qc + ring] {
                        if c >= 0 && c < self.cols {
                            for &i in self.bucket(c, r) {
                                consider(i, &mut best);
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// Indices of all points within `radius` (inclusive) of `q`, in ascending index order.
    pub fn within(&self, q: &Point, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.points.is_empty() || radius < 0.0 {
            return;
        }
        let lo = self.cell_coords(&(q - Point::new(radius, radius)));
        let hi = self.cell_coords(&(q + Point::new(radius, radius)));
        let c0 = lo.0.max(0);
        let r0 = lo.1.max(0);
        let c1 = hi.0.min(self.cols - 1);
        let r1 = hi.1.min(self.rows - 1);
        if c0 > c1 || r0 > r1 {
            return;
        }
        let r2 = radius * radius;
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in self.bucket(c, r) {
                    if (self.points[i as usize] - q).norm_squared() <= r2 {
                        out.push(i as usize);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}
