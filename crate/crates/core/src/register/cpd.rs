//! Rigid coherent point drift in the plane.
//!
//! The floating points are the centroids of an isotropic Gaussian mixture with
//! a uniform outlier component of weight `w`; EM alternates responsibilities
//! and a closed-form similarity update.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};
use crate::geom::{NearestIndex, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdOptions {
    /// Outlier weight in `[0, 1)`.
    pub w: f64,
    pub max_iters: usize,
    /// Convergence threshold on the change of σ².
    pub tol: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Record the negative log-likelihood after every iteration (dense, slow).
    #[serde(skip)]
    pub record_objective: bool,
}

impl Default for CpdOptions {
    fn default() -> Self {
        Self {
            w: 0.1,
            max_iters: 500,
            tol: 1e-8,
            scale_min: 0.9,
            scale_max: 1.1,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdResult {
    /// Maps floating points onto the basis.
    pub transform: RigidTransform,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every iteration when requested.
    pub objective: Vec<f64>,
}

const D: f64 = 2.0;
/// Kernel values below exp(-50) are dropped from the E-step.
const CUTOFF_EXPONENT: f64 = 50.0;
const SIGMA2_FLOOR: f64 = 1e-12;

fn outlier_term(sigma2: f64, w: f64, m: usize, n: usize) -> f64 {
    2.0 * std::f64::consts::PI * sigma2 * w / (1.0 - w) * m as f64 / n as f64
}

/// Negative log-likelihood of `basis` under the mixture centred on the transformed
/// `floating` points, evaluated densely.
pub fn negative_log_likelihood(
    basis: &[Point],
    floating: &[Point],
    t: &RigidTransform,
    sigma2: f64,
    w: f64,
) -> f64 {
    let (n, m) = (basis.len(), floating.len());
    let c = outlier_term(sigma2, w, m, n);
    let moved: Vec<Point> = floating.iter().map(|y| t.apply(y)).collect();
    let norm = (1.0 - w) / (m as f64 * 2.0 * std::f64::consts::PI * sigma2);
    basis
        .iter()
        .map(|x| {
            let s: f64 = moved
                .iter()
                .map(|ty| (-(x - ty).norm_squared() / (2.0 * sigma2)).exp())
                .sum();
            -(norm * (s + c)).ln()
        })
        .sum()
}

fn check_spread(points: &[Point], what: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{what} has {} points, need at least 3", points.len())));
    }
    let mean = crate::geom::mean(points).expect("non-empty");
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::Degenerate(format!("{what} points are collinear")));
    }
    Ok(())
}

/// Responsibility-weighted sufficient statistics of one E-step.
struct Moments {
    np: f64,
    mu_x: Vector2<f64>,
    mu_y: Vector2<f64>,
    a: Matrix2<f64>,
    x_px: f64,
    y_py: f64,
}

struct Estep<'a> {
    basis: &'a [Point],
    floating: &'a [Point],
    index: NearestIndex,
    extent2: f64,
    // Scratch buffers reused across iterations.
    den: Vec<f64>,
    pair_offsets: Vec<usize>,
    pairs: Vec<(u32, f64)>,
    hits: Vec<usize>,
}

impl<'a> Estep<'a> {
    fn new(basis: &'a [Point], floating: &'a [Point]) -> Self {
        let (mut lo, mut hi) = (basis[0], basis[0]);
        for p in basis {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Self {
            basis,
            floating,
            index: NearestIndex::new(basis),
            extent2: (hi - lo).norm_squared(),
            den: vec![0.0; basis.len()],
            pair_offsets: Vec::with_capacity(floating.len() + 1),
            pairs: Vec::new(),
            hits: Vec::new(),
        }
    }

    fn run(&mut self, t: &RigidTransform, sigma2: f64, w: f64) -> Moments {
        let (n, m) = (self.basis.len(), self.floating.len());
        let c = outlier_term(sigma2, w, m, n);
        let inv2s = 1.0 / (2.0 * sigma2);
        let radius = (2.0 * sigma2 * CUTOFF_EXPONENT).sqrt();
        // Past the basis extent every pair is inside the cutoff anyway.
        let dense = radius * radius >= self.extent2 * 4.0;

        self.den.iter_mut().for_each(|d| *d = 0.0);
        self.pair_offsets.clear();
        self.pairs.clear();
        for y in self.floating {
            self.pair_offsets.push(self.pairs.len());
            let ty = t.apply(y);
            if dense {
                for (i, x) in self.basis.iter().enumerate() {
                    let k = (-(x - ty).norm_squared() * inv2s).exp();
                    self.den[i] += k;
                    self.pairs.push((i as u32, k));
                }
            } else {
                self.index.within(&ty, radius, &mut self.hits);
                for &i in &self.hits {
                    let k = (-(self.basis[i] - ty).norm_squared() * inv2s).exp();
                    self.den[i] += k;
                    self.pairs.push((i as u32, k));
                }
            }
        }
        self.pair_offsets.push(self.pairs.len());
        self.den.iter_mut().for_each(|d| *d += c);

        let mut p1 = vec![0.0; m];
        let mut px = vec![Vector2::zeros(); m];
        let mut pt1 = vec![0.0; n];
        for j in 0..m {
            for &(i, k) in &self.pairs[self.pair_offsets[j]..self.pair_offsets[j + 1]] {
                let p = k / self.den[i as usize];
                p1[j] += p;
                pt1[i as usize] += p;
                px[j] += self.basis[i as usize] * p;
            }
        }
        let np: f64 = p1.iter().sum();
        let mut mu_x = Vector2::zeros();
        for (x, &p) in self.basis.iter().zip(&pt1) {
            mu_x += x * p;
        }
        let mut mu_y = Vector2::zeros();
        for (y, &p) in self.floating.iter().zip(&p1) {
            mu_y += y * p;
        }
        if np > 0.0 {
            mu_x /= np;
            mu_y /= np;
        }
        let mut a = Matrix2::zeros();
        let mut y_py = 0.0;
        for j in 0..m {
            let yc = self.floating[j] - mu_y;
            a += (px[j] - mu_x * p1[j]) * yc.transpose();
            y_py += p1[j] * yc.norm_squared();
        }
        let x_px: f64 = self
            .basis
            .iter()
            .zip(&pt1)
            .map(|(x, &p)| p * (x - mu_x).norm_squared())
            .sum();
        Moments {
            np,
            mu_x,
            mu_y,
            a,
            x_px,
            y_py,
        }
    }
}

/// Registers `floating` onto `basis` with a rotation, isotropic scale and shift.
pub fn rigid_cpd(basis: &[Point], floating: &[Point], opts: &CpdOptions) -> Result<CpdResult> {
    check_spread(basis, "basis")?;
    check_spread(floating, "floating set")?;
    if !(0.0..1.0).contains(&opts.w) {
        return Err(Error::InvalidParameter(format!("outlier weight must lie in [0, 1), got {}", opts.w)));
    }
    let (n, m) = (basis.len(), floating.len());

    // Mean pairwise squared distance over D, in closed form.
    let sx: Vector2<f64> = basis.iter().sum();
    let sy: Vector2<f64> = floating.iter().sum();
    let xx: f64 = basis.iter().map(|p| p.norm_squared()).sum();
    let yy: f64 = floating.iter().map(|p| p.norm_squared()).sum();
    let mut sigma2 = (m as f64 * xx + n as f64 * yy - 2.0 * sx.dot(&sy)) / (D * m as f64 * n as f64);

    let mut t = RigidTransform::IDENTITY;
    let mut objective = Vec::new();
    if opts.record_objective {
        objective.push(negative_log_likelihood(basis, floating, &t, sigma2, opts.w));
    }
    let mut estep = Estep::new(basis, floating);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let mom = estep.run(&t, sigma2, opts.w);
        if !(mom.np > 0.0) || !(mom.y_py > 0.0) {
            return Err(Error::Degenerate("all responsibilities vanished".into()));
        }
        let svd = mom.a.svd(true, true);
        let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        let c = Matrix2::new(1.0, 0.0, 0.0, (u * v_t).determinant().signum());
        let rot = u * c * v_t;
        let tr_ar = (mom.a.transpose() * rot).trace();
        let scale = (tr_ar / mom.y_py).clamp(opts.scale_min, opts.scale_max);
        let shift = mom.mu_x - rot * mom.mu_y * scale;
        t = RigidTransform {
            scale,
            angle: rot[(1, 0)].atan2(rot[(0, 0)]),
            shift: [shift.x, shift.y],
        };
        let previous = sigma2;
        sigma2 = ((mom.x_px - 2.0 * scale * tr_ar + scale * scale * mom.y_py) / (mom.np * D)).max(SIGMA2_FLOOR);
        if opts.record_objective {
            objective.push(negative_log_likelihood(basis, floating, &t, sigma2, opts.w));
        }
        if (previous - sigma2).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(CpdResult {
        transform: t,
        sigma2,
        iterations,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn scatter(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Point> {
        (0..n)
            .map(|_| point(half * (2.0 * uniform(rng) - 1.0), half * (2.0 * uniform(rng) - 1.0)))
            .collect()
    }

    fn deg(r: f64) -> f64 {
        r.to_degrees()
    }

    #[test]
    fn recovers_rotation_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = scatter(&mut rng, 120, 1.5);
        let truth = RigidTransform::new(1.0, 0.5f64.to_radians(), [0.05, -0.03]);
        // floating = truth⁻¹(basis), so the recovered map is truth itself.
        let floating: Vec<Point> = basis.iter().map(|p| truth.apply_inverse(p)).collect();
        let r = rigid_cpd(&basis, &floating, &CpdOptions::default()).unwrap();
        assert!(deg((r.transform.angle - truth.angle).abs()) < 1e-3);
        assert!((r.transform.shift[0] - 0.05).abs() < 1e-4);
        assert!((r.transform.shift[1] + 0.03).abs() < 1e-4);
        assert!((r.transform.scale - 1.0).abs() < 1e-4);
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = scatter(&mut rng, 80, 1.0);
        let r = rigid_cpd(&basis, &basis, &CpdOptions::default()).unwrap();
        assert!(r.transform.angle.abs() < 1e-6);
        assert!((r.transform.scale - 1.0).abs() < 1e-6);
        assert!(r.transform.shift[0].abs() < 1e-6 && r.transform.shift[1].abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn robust_to_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = scatter(&mut rng, 100, 1.5);
        let truth = RigidTransform::new(1.002, 0.3f64.to_radians(), [0.04, 0.02]);
        let mut floating: Vec<Point> = basis[..90].iter().map(|p| truth.apply_inverse(p)).collect();
        floating.extend(scatter(&mut rng, 10, 1.5));
        let r = rigid_cpd(&basis, &floating, &CpdOptions::default()).unwrap();
        // Worst displacement error over the basis footprint.
        let err = basis
            .iter()
            .map(|p| (r.transform.apply(&truth.apply_inverse(p)) - p).norm())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "max error {err}");
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Point> = (0..10).map(|i| point(i as f64, 2.0 * i as f64)).collect();
        let ok = vec![point(0.0, 0.0), point(1.0, 0.0), point(0.0, 1.0)];
        assert!(matches!(rigid_cpd(&line, &ok, &CpdOptions::default()), Err(Error::Degenerate(_))));
        assert!(matches!(rigid_cpd(&ok, &ok[..2], &CpdOptions::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn scale_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = scatter(&mut rng, 60, 1.0);
        let floating: Vec<Point> = basis.iter().map(|p| p * 0.5).collect();
        let r = rigid_cpd(&basis, &floating, &CpdOptions::default()).unwrap();
        assert!(r.transform.scale <= 1.1 + 1e-15);
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 20 + (rng.next_u64() % 60) as usize;
            let basis = scatter(&mut rng, n, 1.0);
            let truth = RigidTransform::new(
                0.95 + 0.1 * uniform(&mut rng),
                (uniform(&mut rng) - 0.5) * 0.2,
                [0.2 * (uniform(&mut rng) - 0.5), 0.2 * (uniform(&mut rng) - 0.5)],
            );
            let mut floating = Vec::new();
            for p in &basis {
                if uniform(&mut rng) > 0.1 {
                    floating.push(truth.apply_inverse(p) + point(0.01 * (uniform(&mut rng) - 0.5), 0.0));
                }
            }
            floating.extend(scatter(&mut rng, 3, 1.0));
            let opts = CpdOptions {
                record_objective: true,
                ..Default::default()
            };
            let r = rigid_cpd(&basis, &floating, &opts).unwrap();
            for w in r.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }
}
