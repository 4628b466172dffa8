//! Box-constrained Levenberg–Marquardt.
//!
//! Each iteration builds a local quadratic model (value, gradient, curvature),
//! freezes coordinates sitting on a bound whose gradient points outward, and
//! solves the Marquardt-damped system on the rest. Trial points are projected
//! into the box and only accepted when they lower the objective, so the
//! recorded trace is non-increasing by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fisher::fd_step;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iter: usize,
    /// Stop once an accepted (or attempted) step is shorter than this.
    pub step_tol: f64,
    /// Optional stop on the absolute objective change of an accepted step.
    pub f_tol: Option<f64>,
    pub lambda0: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self { max_iter: 200, step_tol: 1e-6, f_tol: None, lambda0: 1e-3 }
    }
}

/// Value plus a gradient and positive semi-definite curvature at a point.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub curvature: DMatrix<f64>,
}

pub trait Objective {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn quadratic(&self, theta: &[f64]) -> Result<Quadratic>;
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every accepted step.
    pub trace: Vec<f64>,
}

/// Box within which a parameter may be probed by finite differences.
pub type Domain = (f64, f64);

/// Central-difference Jacobian of `f` (rows: outputs, columns: parameters),
/// one-sided where a probe would leave `domain`.
pub fn fd_jacobian<F>(f: F, theta: &[f64], domain: &[Domain]) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let base = f(theta)?;
    let mut jac = DMatrix::zeros(base.len(), theta.len());
    let mut probe = theta.to_vec();
    for j in 0..theta.len() {
        let x = theta[j];
        let h = fd_step(x);
        let (lo, hi) = domain[j];
        let (plus, minus) = match (x + h <= hi, x - h >= lo) {
            (true, true) => (x + h, x - h),
            (true, false) => (x + h, x),
            (false, true) => (x, x - h),
            (false, false) => return Err(Error::invalid("parameter domain too narrow for finite differences")),
        };
        probe[j] = plus;
        let up = if plus == x { base.clone() } else { f(&probe)? };
        probe[j] = minus;
        let down = if minus == x { base.clone() } else { f(&probe)? };
        probe[j] = x;
        let span = plus - minus;
        for (i, (a, b)) in up.iter().zip(&down).enumerate() {
            jac[(i, j)] = (a - b) / span;
        }
    }
    Ok((base, jac))
}

/// Sum of squared residuals with Gauss–Newton curvature `2 JᵀJ`.
pub struct LeastSquares<'a, F> {
    pub residual: F,
    pub domain: &'a [Domain],
}

impl<F> Objective for LeastSquares<'_, F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok((self.residual)(theta)?.iter().map(|r| r * r).sum())
    }

    fn quadratic(&self, theta: &[f64]) -> Result<Quadratic> {
        let (r, j) = fd_jacobian(&self.residual, theta, self.domain)?;
        let r = DVector::from_vec(r);
        Ok(Quadratic {
            value: r.norm_squared(),
            gradient: 2.0 * j.transpose() * &r,
            curvature: 2.0 * j.transpose() * &j,
        })
    }
}

/// Floor on the Poisson mean inside logarithms and divisions.
pub const MU_FLOOR: f64 = 1e-12;

/// Poisson negative log-likelihood `Σ μ − y ln μ` with Fisher-scoring curvature.
pub struct PoissonNll<'a, F> {
    pub mean: F,
    pub counts: &'a [f64],
    pub domain: &'a [Domain],
}

pub fn poisson_nll(mu: &[f64], y: &[f64]) -> f64 {
    mu.iter()
        .zip(y)
        .map(|(&m, &y)| {
            let m = m.max(MU_FLOOR);
            if y > 0.0 { m - y * m.ln() } else { m }
        })
        .sum()
}

impl<F> Objective for PoissonNll<'_, F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(poisson_nll(&(self.mean)(theta)?, self.counts))
    }

    fn quadratic(&self, theta: &[f64]) -> Result<Quadratic> {
        let (mu, j) = fd_jacobian(&self.mean, theta, self.domain)?;
        let p = theta.len();
        let mut gradient = DVector::zeros(p);
        let mut curvature = DMatrix::zeros(p, p);
        for (k, (&m, &y)) in mu.iter().zip(self.counts).enumerate() {
            let m = m.max(MU_FLOOR);
            let row = j.row(k);
            let w = 1.0 - y / m;
            for a in 0..p {
                gradient[a] += w * row[a];
                for b in 0..p {
                    curvature[(a, b)] += row[a] * row[b] / m;
                }
            }
        }
        Ok(Quadratic { value: poisson_nll(&mu, self.counts), gradient, curvature })
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Damped step on the free coordinates; `None` if the system cannot be solved.
fn damped_step(q: &Quadratic, free: &[usize], lambda: f64) -> Option<DVector<f64>> {
    let n = free.len();
    let scale = (0..n).map(|a| q.curvature[(free[a], free[a])]).fold(0.0, f64::max).max(1e-300);
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for a in 0..n {
        g[a] = -q.gradient[free[a]];
        for b in 0..n {
            h[(a, b)] = q.curvature[(free[a], free[b])];
        }
        // Marquardt scaling with a floor so flat directions still move
        h[(a, a)] += lambda * h[(a, a)].max(1e-9 * scale);
    }
    match h.clone().cholesky() {
        Some(c) => Some(c.solve(&g)),
        None => h.lu().solve(&g),
    }
}

pub fn minimize<O: Objective>(
    objective: &O,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &LmSettings,
) -> Result<LmOutcome> {
    let p = start.len();
    if lower.len() != p || upper.len() != p {
        return Err(Error::invalid("bounds do not match the parameter count"));
    }
    let mut x = start.to_vec();
    project(&mut x, lower, upper);
    let mut q = objective.quadratic(&x)?;
    if !q.value.is_finite() {
        return Err(Error::NumericDegenerate("objective is not finite at the start point".into()));
    }
    let mut trace = vec![q.value];
    let mut lambda = settings.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < settings.max_iter {
        iterations += 1;
        let free: Vec<usize> = (0..p)
            .filter(|&i| {
                let g = q.gradient[i];
                !((x[i] <= lower[i] && g > 0.0) || (x[i] >= upper[i] && g < 0.0))
            })
            .collect();
        if free.is_empty() || free.iter().all(|&i| q.gradient[i] == 0.0) {
            converged = true;
            break;
        }
        loop {
            let Some(delta) = damped_step(&q, &free, lambda) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let mut trial = x.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += delta[a];
            }
            project(&mut trial, lower, upper);
            let step = x.iter().zip(&trial).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if !(step >= settings.step_tol) {
                converged = true;
                break 'outer;
            }
            let value = objective.value(&trial).unwrap_or(f64::INFINITY);
            if value.is_finite() && value < q.value {
                let change = q.value - value;
                x = trial;
                trace.push(value);
                lambda = (lambda / 3.0).max(1e-12);
                if step < settings.step_tol || settings.f_tol.is_some_and(|t| change < t) {
                    q.value = value;
                    converged = true;
                    break 'outer;
                }
                q = objective.quadratic(&x)?;
                // keep acceptance consistent with the recorded trace
                q.value = value;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }
    Ok(LmOutcome { theta: x, value: q.value, iterations, converged, trace })
}
