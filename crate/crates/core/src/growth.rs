//! Two-sigmoid growth model of the cover ratio over time and its least-squares fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub g: f64,
    pub lambda_g: f64,
    pub t_g: f64,
    /// Dying amplitude; the dying term is disabled when `d <= 0`.
    pub d: f64,
    pub lambda_d: f64,
    pub t_d: f64,
}

fn sigmoid(z: f64) -> f64 {
    // exp overflow yields inf and the quotient settles on the asymptote.
    1.0 / (1.0 + (-z).exp())
}

impl GrowthParams {
    pub fn growing(g: f64, lambda_g: f64, t_g: f64) -> Self {
        Self {
            g,
            lambda_g,
            t_g,
            d: 0.0,
            lambda_d: 0.0,
            t_d: 0.0,
        }
    }

    pub fn dying_active(&self) -> bool {
        self.d > 0.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        let grow = self.g * sigmoid(self.lambda_g * (t - self.t_g));
        if self.dying_active() {
            grow - self.d * sigmoid(self.lambda_d * (t - self.t_d))
        } else {
            grow
        }
    }

    /// Partial derivatives in the order (g, λ_g, t_g, d, λ_d, t_d). The dying
    /// partials are evaluated as if the gate were open.
    pub fn gradient(&self, t: f64) -> [f64; 6] {
        let sg = sigmoid(self.lambda_g * (t - self.t_g));
        let dsg = sg * (1.0 - sg);
        let sd = sigmoid(self.lambda_d * (t - self.t_d));
        let dsd = sd * (1.0 - sd);
        [
            sg,
            self.g * dsg * (t - self.t_g),
            -self.g * dsg * self.lambda_g,
            -sd,
            -self.d * dsd * (t - self.t_d),
            self.d * dsd * self.lambda_d,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthBranch {
    Growing,
    GrowingDying,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthFit {
    pub params: GrowthParams,
    pub branch: GrowthBranch,
    /// Residual sum of squares of the selected model.
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Fit only the growing branch.
    pub ignore_dying: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            ignore_dying: false,
        }
    }
}

fn rss(p: &GrowthParams, series: &[(f64, f64)]) -> f64 {
    series.iter().map(|&(t, c)| (p.eval(t) - c).powi(2)).sum()
}

fn first_time_at_least(series: &[(f64, f64)], level: f64) -> f64 {
    series
        .iter()
        .find(|&&(_, c)| c >= level)
        .map(|&(t, _)| t)
        .unwrap_or(series[series.len() - 1].0)
}

fn initial_guess(series: &[(f64, f64)]) -> GrowthParams {
    let (peak_idx, g0) = series
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &(_, c))| if c > best.1 { (i, c) } else { best });
    let g0 = g0.max(1e-6);
    let t_half = first_time_at_least(series, 0.5 * g0);
    let rise = (first_time_at_least(series, 0.8 * g0) - first_time_at_least(series, 0.2 * g0)).max(1.0);
    let lambda_g = 4.0 / rise;

    let tail = &series[peak_idx..];
    let last = tail[tail.len() - 1];
    let decline = g0 - last.1;
    let (d, t_d) = if tail.len() > 1 && decline > 0.0 {
        let t_d = tail
            .iter()
            .find(|&&(_, c)| c <= g0 - 0.5 * decline)
            .map(|&(t, _)| t)
            .unwrap_or(last.0);
        (decline, t_d)
    } else {
        (0.1 * g0, last.0)
    };
    GrowthParams {
        g: g0,
        lambda_g,
        t_g: t_half,
        d,
        lambda_d: lambda_g,
        t_d,
    }
}

struct LmResult {
    params: GrowthParams,
    converged: bool,
    iterations: usize,
}

fn pack(p: &GrowthParams, k: usize) -> DVector<f64> {
    let all = [p.g, p.lambda_g, p.t_g, p.d, p.lambda_d, p.t_d];
    DVector::from_column_slice(&all[..k])
}

fn unpack(v: &DVector<f64>) -> GrowthParams {
    if v.len() == 3 {
        GrowthParams::growing(v[0], v[1], v[2])
    } else {
        GrowthParams {
            g: v[0],
            lambda_g: v[1],
            t_g: v[2],
            d: v[3],
            lambda_d: v[4],
            t_d: v[5],
        }
    }
}

/// Objective without the gate, so the dying amplitude can pass through zero smoothly.
fn smooth_eval(v: &DVector<f64>, t: f64) -> f64 {
    let grow = v[0] * sigmoid(v[1] * (t - v[2]));
    if v.len() == 6 {
        grow - v[3] * sigmoid(v[4] * (t - v[5]))
    } else {
        grow
    }
}

fn admissible(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite()) && v[0] > 0.0 && v[1] > 0.0 && (v.len() == 3 || v[4] > 0.0)
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and an analytic Jacobian.
fn levenberg_marquardt(series: &[(f64, f64)], start: GrowthParams, k: usize, max_iters: usize) -> LmResult {
    let n = series.len();
    let mut v = pack(&start, k);
    let objective = |v: &DVector<f64>| -> f64 {
        series.iter().map(|&(t, c)| (smooth_eval(v, t) - c).powi(2)).sum()
    };
    let mut cost = objective(&v);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let p = unpack(&v);
        let mut jac = DMatrix::<f64>::zeros(n, k);
        let mut res = DVector::<f64>::zeros(n);
        for (i, &(t, c)) in series.iter().enumerate() {
            let grad = p.gradient(t);
            for j in 0..k {
                jac[(i, j)] = grad[j];
            }
            res[i] = smooth_eval(&v, t) - c;
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        if jtr.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }

        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for j in 0..k {
                a[(j, j)] += mu * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&jtr))) else {
                mu *= 4.0;
                continue;
            };
            let trial = &v + &step;
            if admissible(&trial) {
                let trial_cost = objective(&trial);
                if trial_cost <= cost {
                    let small_step = step.norm() <= 1e-12 * (v.norm() + 1e-12);
                    let small_gain = cost - trial_cost <= 1e-15 * cost.max(1e-300);
                    v = trial;
                    cost = trial_cost;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if small_step || small_gain || cost < 1e-30 {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    LmResult {
        params: unpack(&v),
        converged,
        iterations,
    }
}

/// Bayesian information criterion with the residual floored at numerical zero,
/// so that two exact fits are compared by parameter count alone.
fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).max(1e-12).ln() + k as f64 * n.ln()
}

/// Fits the growth model to `(t, c)` samples, trying the growing-only and the
/// growing-and-dying branch and keeping the one with the better information criterion.
pub fn fit_growth(series: &[(f64, f64)], opts: &FitOptions) -> Result<GrowthFit> {
    if series.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "growth fit needs at least 4 samples, got {}",
            series.len()
        )));
    }
    if series.iter().any(|(t, c)| !t.is_finite() || !c.is_finite()) {
        return Err(Error::InvalidParameter("growth samples must be finite".into()));
    }
    let mut series = series.to_vec();
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let start = initial_guess(&series);
    let n = series.len();

    let grow = levenberg_marquardt(&series, start, 3, opts.max_iters);
    let grow_rss = rss(&grow.params, &series);
    let mut best = GrowthFit {
        params: grow.params,
        branch: GrowthBranch::Growing,
        rss: grow_rss,
        converged: grow.converged,
        iterations: grow.iterations,
    };

    if !opts.ignore_dying && n >= 7 {
        // Second start: the fitted growing branch plus the heuristic dying term.
        let seeded = GrowthParams {
            g: grow.params.g,
            lambda_g: grow.params.lambda_g,
            t_g: grow.params.t_g,
            ..start
        };
        let full = [start, seeded]
            .into_iter()
            .map(|s| levenberg_marquardt(&series, s, 6, opts.max_iters))
            .min_by(|a, b| rss(&a.params, &series).total_cmp(&rss(&b.params, &series)))
            .expect("two starts");
        if full.params.dying_active() {
            let full_rss = rss(&full.params, &series);
            if bic(full_rss, n, 6) < bic(grow_rss, n, 3) {
                best = GrowthFit {
                    params: full.params,
                    branch: GrowthBranch::GrowingDying,
                    rss: full_rss,
                    converged: full.converged,
                    iterations: full.iterations,
                };
            }
        }
    }
    if !best.converged {
        log::warn!("growth fit did not converge after {} iterations", best.iterations);
    }
    Ok(best)
}
