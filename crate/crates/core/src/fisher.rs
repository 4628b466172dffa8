//! Fisher-information knot design.
//!
//! For Poisson counts `y_k ~ Poisson(mu_k(theta))` the information a bin carries
//! about a parameter is `(d mu_k / d theta)^2 / mu_k`. Averaging (or maximizing)
//! that quantity over the prior parameter box gives a per-bin density whose
//! cumulative distribution is then cut at equally spaced levels: every spline
//! interval integrates the same share of information.
//!
//! For the bi-exponential model the per-bin information is a 3x3 matrix; its
//! trace `sum_j (d mu_k / d theta_j)^2 / (mu_k + eps)` is used as the scalar
//! density.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{expected_counts, model_curve, DecayParams, Interval, ParamRanges, TimeAxis};
use crate::synth::sample_params;

/// Default regularizer added to `mu_k` in the information denominator.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default number of parameter samples in the density average.
pub const DEFAULT_N_GRID: usize = 500;

/// Finite-difference step for parameter `value`: relative `1e-4`, floor `1e-6`.
pub fn fd_step(value: f64) -> f64 {
    (1e-4 * value.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Average,
    Max,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Average => "average",
            Aggregation::Max => "max",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" | "mean" => Ok(Aggregation::Average),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherSettings {
    pub n_grid: usize,
    pub epsilon: f64,
    pub aggregation: Aggregation,
    /// Seed for the random parameter draws of the bi-exponential density.
    pub seed: u64,
}

impl Default for FisherSettings {
    fn default() -> Self {
        Self {
            n_grid: DEFAULT_N_GRID,
            epsilon: DEFAULT_EPSILON,
            aggregation: Aggregation::Average,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherDensity {
    pub values: Vec<f64>,
    pub aggregation: Aggregation,
    pub n_grid: usize,
    pub epsilon: f64,
}

/// Derivative of the expected counts `A * g(theta)` with respect to parameter
/// `component` (for bi: 0 = tau1, 1 = tau2, 2 = alpha1).
///
/// Central differences, falling back to a one-sided difference when the probe
/// would leave the admissible region (`tau > 0`, `alpha1` in `[0, 1]`).
pub fn mu_gradient(
    params: &DecayParams,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    component: usize,
) -> Result<Vec<f64>> {
    let kind = params.kind();
    if component >= kind.n_params() {
        return Err(Error::invalid(format!("component {component} out of range for {kind:?}")));
    }
    let theta = params.to_vec();
    let h = fd_step(theta[component]);
    let (lo, hi) = kind.component_domain(component);
    let eval = |v: f64| -> Result<Vec<f64>> {
        let mut p = theta.clone();
        p[component] = v;
        let g = model_curve(&DecayParams::from_slice(kind, &p), irf, axis)?;
        Ok(expected_counts(peak_counts, &g))
    };
    let x = theta[component];
    let (plus, minus) = match (x + h <= hi, x - h >= lo) {
        (true, true) => (x + h, x - h),
        (true, false) => (x + h, x),
        (false, true) => (x, x - h),
        (false, false) => {
            return Err(Error::invalid("parameter domain too narrow for finite differences"))
        }
    };
    let up = eval(plus)?;
    let down = eval(minus)?;
    let span = plus - minus;
    Ok(up.iter().zip(&down).map(|(a, b)| (a - b) / span).collect())
}

/// Per-bin trace of the Poisson information at one parameter point.
pub fn fisher_trace(
    params: &DecayParams,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let mu = expected_counts(peak_counts, &model_curve(params, irf, axis)?);
    let mut num = vec![0.0; mu.len()];
    for j in 0..params.kind().n_params() {
        let d = mu_gradient(params, peak_counts, irf, axis, j)?;
        num.iter_mut().zip(&d).for_each(|(n, d)| *n += d * d);
    }
    Ok(num.iter().zip(&mu).map(|(n, m)| n / (m + epsilon)).collect())
}

/// Aggregate per-sample traces in sample order.
fn aggregate(traces: Vec<Vec<f64>>, agg: Aggregation, n_bins: usize) -> Vec<f64> {
    let n = traces.len() as f64;
    let mut out = vec![0.0; n_bins];
    for t in &traces {
        for (o, v) in out.iter_mut().zip(t) {
            match agg {
                Aggregation::Average => *o += v,
                Aggregation::Max => *o = o.max(*v),
            }
        }
    }
    if agg == Aggregation::Average {
        out.iter_mut().for_each(|o| *o /= n);
    }
    out
}

/// Density over an explicit list of parameter samples.
pub fn fisher_density_from_samples(
    samples: &[DecayParams],
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    epsilon: f64,
    aggregation: Aggregation,
) -> Result<FisherDensity> {
    if samples.is_empty() {
        return Err(Error::invalid("no parameter samples for the Fisher density"));
    }
    let traces = samples
        .par_iter()
        .map(|p| fisher_trace(p, peak_counts, irf, axis, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let values = aggregate(traces, aggregation, axis.n_bins());
    if !values.iter().any(|&v| v > 0.0) {
        return Err(Error::NumericDegenerate("Fisher density is identically zero".into()));
    }
    Ok(FisherDensity { values, aggregation, n_grid: samples.len(), epsilon })
}

/// Mono-exponential density on a uniform lifetime grid spanning `tau`.
/// A single-point grid evaluates the midpoint.
pub fn fisher_density_mono(
    tau: &Interval,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    settings: &FisherSettings,
) -> Result<FisherDensity> {
    let n = settings.n_grid;
    if n == 0 {
        return Err(Error::invalid("n_grid must be positive"));
    }
    let samples: Vec<DecayParams> = if n == 1 {
        vec![DecayParams::mono(tau.mid())]
    } else {
        (0..n)
            .map(|i| DecayParams::mono(tau.lerp(i as f64 / (n - 1) as f64)))
            .collect()
    };
    fisher_density_from_samples(&samples, peak_counts, irf, axis, settings.epsilon, settings.aggregation)
}

/// Bi-exponential trace density over `n_grid` seeded uniform draws in the box.
pub fn fisher_density_bi(
    ranges: &ParamRanges,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    settings: &FisherSettings,
) -> Result<FisherDensity> {
    if ranges.kind() != crate::model::ModelKind::Bi {
        return Err(Error::invalid("bi-exponential density needs bi-exponential ranges"));
    }
    if settings.n_grid == 0 {
        return Err(Error::invalid("n_grid must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let samples: Vec<DecayParams> =
        (0..settings.n_grid).map(|_| sample_params(ranges, &mut rng)).collect();
    fisher_density_from_samples(&samples, peak_counts, irf, axis, settings.epsilon, settings.aggregation)
}

/// Density for whichever model `ranges` describes.
pub fn fisher_density(
    ranges: &ParamRanges,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    settings: &FisherSettings,
) -> Result<FisherDensity> {
    match ranges {
        ParamRanges::Mono { tau } => fisher_density_mono(tau, peak_counts, irf, axis, settings),
        ParamRanges::Bi { .. } => fisher_density_bi(ranges, peak_counts, irf, axis, settings),
    }
}

/// Normalized cumulative information at the bin centres; the last entry is 1.
pub fn fisher_cdf(density: &FisherDensity, axis: &TimeAxis) -> Result<Vec<f64>> {
    if density.values.len() != axis.n_bins() {
        return Err(Error::invalid("density length does not match axis"));
    }
    if density.values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("density has negative or NaN entries"));
    }
    let dt = axis.bin_width();
    let total: f64 = density.values.iter().map(|v| v * dt).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("density has zero total mass"));
    }
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = density
        .values
        .iter()
        .map(|v| {
            acc += v * dt;
            acc / total
        })
        .collect();
    *cdf.last_mut().unwrap() = 1.0;
    Ok(cdf)
}

/// Spline knot boundaries `xi_0 < ... < xi_{M+1}` (ns).
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    boundaries: Vec<f64>,
}

impl KnotSet {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 4 {
            return Err(Error::invalid(format!(
                "need at least 4 boundaries (M >= 2), got {}",
                boundaries.len()
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("knot boundaries must be finite and strictly increasing"));
        }
        Ok(Self { boundaries })
    }

    /// Number of triangle bases.
    pub fn m(&self) -> usize {
        self.boundaries.len() - 2
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn first(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn last(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }
}

/// Inverse of the piecewise-linear interpolant through `(t_k, C_k)`.
fn inverse_cdf(cdf: &[f64], axis: &TimeAxis, level: f64) -> f64 {
    let k = cdf.partition_point(|&c| c < level);
    if k == 0 {
        return axis.first_center();
    }
    if k >= cdf.len() {
        return axis.last_center();
    }
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let frac = if c1 > c0 { (level - c0) / (c1 - c0) } else { 0.0 };
    axis.center(k - 1) + frac * axis.bin_width()
}

/// Enforce a minimum gap of one bin between boundaries, pushing interior
/// boundaries forward and then back from the pinned endpoints.
fn repair_collisions(b: &mut [f64], gap: f64) -> Result<()> {
    let n = b.len();
    for i in 1..n - 1 {
        b[i] = b[i].max(b[i - 1] + gap);
    }
    for i in (1..n - 1).rev() {
        b[i] = b[i].min(b[i + 1] - gap);
    }
    let tol = 1e-9 * gap;
    if b.windows(2).any(|w| w[1] - w[0] < gap - tol) {
        return Err(Error::AllocationInfeasible(format!(
            "{} boundaries do not fit with one-bin spacing",
            n
        )));
    }
    Ok(())
}

/// Knots at equally spaced quantile levels `m / (M + 1)` of the information CDF.
pub fn allocate_knots(cdf: &[f64], axis: &TimeAxis, m: usize) -> Result<KnotSet> {
    if m < 2 {
        return Err(Error::invalid(format!("need M >= 2, got {m}")));
    }
    if cdf.len() != axis.n_bins() {
        return Err(Error::invalid("CDF length does not match axis"));
    }
    if cdf.windows(2).any(|w| w[1] < w[0]) || (cdf[cdf.len() - 1] - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("not a valid CDF"));
    }
    let mut b = Vec::with_capacity(m + 2);
    b.push(axis.first_center());
    for i in 1..=m {
        b.push(inverse_cdf(cdf, axis, i as f64 / (m + 1) as f64));
    }
    b.push(axis.last_center());
    repair_collisions(&mut b, axis.bin_width())?;
    KnotSet::new(b).map_err(|e| Error::AllocationInfeasible(e.to_string()))
}

/// Evenly spaced boundaries from the first to the last bin centre.
pub fn uniform_knots(axis: &TimeAxis, m: usize) -> Result<KnotSet> {
    if m < 2 {
        return Err(Error::invalid(format!("need M >= 2, got {m}")));
    }
    let (a, b) = (axis.first_center(), axis.last_center());
    let step = (b - a) / (m + 1) as f64;
    let mut v: Vec<f64> = (0..=m + 1).map(|i| a + i as f64 * step).collect();
    v[m + 1] = b;
    KnotSet::new(v)
}

/// Knot placement mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotMode {
    Fisher(Aggregation),
    Uniform,
}

impl std::fmt::Display for KnotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KnotMode::Fisher(a) => write!(f, "fisher-{a}"),
            KnotMode::Uniform => f.write_str("uniform"),
        }
    }
}

/// Full pipeline: density over `ranges`, CDF, quantile knots.
pub fn design_knots(
    mode: KnotMode,
    m: usize,
    ranges: &ParamRanges,
    peak_counts: f64,
    irf: &[f64],
    axis: &TimeAxis,
    settings: &FisherSettings,
) -> Result<KnotSet> {
    match mode {
        KnotMode::Uniform => uniform_knots(axis, m),
        KnotMode::Fisher(aggregation) => {
            let settings = FisherSettings { aggregation, ..*settings };
            let d = fisher_density(ranges, peak_counts, irf, axis, &settings)?;
            allocate_knots(&fisher_cdf(&d, axis)?, axis, m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_irf, IrfSpec};

    fn axis() -> TimeAxis {
        TimeAxis::with_window(256, 10.0).unwrap()
    }

    fn reference_irf(axis: &TimeAxis) -> Vec<f64> {
        build_irf(&IrfSpec::gaussian(0.1, 1.0), axis).unwrap()
    }

    fn bi_ranges() -> ParamRanges {
        ParamRanges::bi((0.2, 2.0), (2.0, 8.0), (0.05, 0.95)).unwrap()
    }

    fn density(values: Vec<f64>) -> FisherDensity {
        FisherDensity { values, aggregation: Aggregation::Average, n_grid: 1, epsilon: 0.0 }
    }

    #[test]
    fn gradient_matches_analytic_derivative() {
        let axis = axis();
        let t0 = axis.center(25);
        let irf = build_irf(&IrfSpec::gaussian(axis.bin_width() / 100.0, t0), &axis).unwrap();
        let d = mu_gradient(&DecayParams::mono(1.0), 300.0, &irf, &axis, 0).unwrap();
        // analytic d/dtau of A exp(-(t - t0)/tau) peaks at t - t0 = tau
        let k = 25 + 26;
        let x = axis.center(k) - t0;
        let want = 300.0 * x * (-x).exp();
        assert!(((d[k] - want) / want).abs() < 1e-4, "{} vs {want}", d[k]);
    }

    #[test]
    fn absent_component_has_no_gradient() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let d = mu_gradient(&DecayParams::bi(0.5, 3.0, 0.0), 500.0, &irf, &axis, 0).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-6));
        // alpha1 = 0 sits on the boundary: one-sided difference still works
        let da = mu_gradient(&DecayParams::bi(0.5, 3.0, 0.0), 500.0, &irf, &axis, 2).unwrap();
        assert!(da.iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn alpha_gradient_richardson_consistent() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let p = DecayParams::bi(0.7, 3.5, 0.4);
        let d = mu_gradient(&p, 500.0, &irf, &axis, 2).unwrap();
        let g = |a: f64| {
            let c = model_curve(&DecayParams::bi(0.7, 3.5, a), &irf, &axis).unwrap();
            expected_counts(500.0, &c)
        };
        let k = (0..256).max_by(|&a, &b| g(0.4)[a].total_cmp(&g(0.4)[b])).unwrap();
        let h = 1e-3;
        let d1 = (g(0.4 + h)[k] - g(0.4 - h)[k]) / (2.0 * h);
        let d2 = (g(0.4 + h / 2.0)[k] - g(0.4 - h / 2.0)[k]) / h;
        let richardson = (4.0 * d2 - d1) / 3.0;
        assert!((d[k] - richardson).abs() < 1e-4 * richardson.abs().max(1.0));
    }

    #[test]
    fn mono_density_peaks_after_irf() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let tau = Interval::new(0.2, 8.0).unwrap();
        let d = fisher_density_mono(&tau, 200.0, &irf, &axis, &FisherSettings::default()).unwrap();
        let k = d.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let t = axis.center(k);
        assert!(t > 1.0 && t < 2.0, "argmax at {t}");
    }

    #[test]
    fn huge_epsilon_reduces_to_squared_gradient() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let p = DecayParams::mono(2.0);
        let f = fisher_trace(&p, 200.0, &irf, &axis, 1e9).unwrap();
        let d = mu_gradient(&p, 200.0, &irf, &axis, 0).unwrap();
        let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
        let (sf, sd): (f64, f64) = (f.iter().sum(), d2.iter().sum());
        for (a, b) in f.iter().zip(&d2) {
            assert!((a / sf - b / sd).abs() <= 1e-3 * (b / sd) + 1e-15);
        }
    }

    #[test]
    fn single_sample_density_equals_direct_formula() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let tau = Interval::new(1.0, 3.0).unwrap();
        let s = FisherSettings { n_grid: 1, ..Default::default() };
        let d = fisher_density_mono(&tau, 200.0, &irf, &axis, &s).unwrap();
        let g = model_curve(&DecayParams::mono(2.0), &irf, &axis).unwrap();
        let grad = mu_gradient(&DecayParams::mono(2.0), 200.0, &irf, &axis, 0).unwrap();
        for k in 0..256 {
            let want = grad[k] * grad[k] / (200.0 * g[k] + DEFAULT_EPSILON);
            assert!((d.values[k] - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn bi_trace_is_sum_of_component_terms() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let p = DecayParams::bi(1.0, 4.0, 0.5);
        let f = fisher_trace(&p, 500.0, &irf, &axis, 1e-3).unwrap();
        let mu = expected_counts(500.0, &model_curve(&p, &irf, &axis).unwrap());
        let grads: Vec<Vec<f64>> =
            (0..3).map(|j| mu_gradient(&p, 500.0, &irf, &axis, j).unwrap()).collect();
        for k in 0..256 {
            let want = (grads[0][k].powi(2) + grads[1][k].powi(2) + grads[2][k].powi(2)) / (mu[k] + 1e-3);
            assert!((f[k] - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn equal_lifetimes_reduce_to_mono() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let (tau, a) = (2.0, 0.3);
        let bi = fisher_trace(&DecayParams::bi(tau, tau, a), 200.0, &irf, &axis, 1e-3).unwrap();
        let mono = fisher_trace(&DecayParams::mono(tau), 200.0, &irf, &axis, 1e-3).unwrap();
        let da = mu_gradient(&DecayParams::bi(tau, tau, a), 200.0, &irf, &axis, 2).unwrap();
        assert!(da.iter().all(|v| v.abs() < 1e-6));
        let w = a * a + (1.0 - a) * (1.0 - a);
        let peak = mono.iter().copied().fold(0.0, f64::max);
        for k in 0..256 {
            assert!((bi[k] - w * mono[k]).abs() < 1e-6 * peak);
        }
    }

    #[test]
    fn bi_density_has_tail_mass() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let d = fisher_density_bi(&bi_ranges(), 200.0, &irf, &axis, &FisherSettings::default()).unwrap();
        let tail: f64 = (0..256).filter(|&k| axis.center(k) > 5.0).map(|k| d.values[k]).sum();
        assert!(tail > 0.0);
    }

    #[test]
    fn cdf_shapes() {
        let axis = TimeAxis::new(16, 1.0).unwrap();
        let c = fisher_cdf(&density(vec![1.0; 16]), &axis).unwrap();
        for (k, v) in c.iter().enumerate() {
            assert!((v - (k + 1) as f64 / 16.0).abs() < 1e-12);
        }
        let mut spike = vec![0.0; 16];
        spike[5] = 2.0;
        let c = fisher_cdf(&density(spike), &axis).unwrap();
        assert!(c[..5].iter().all(|&v| v == 0.0) && c[5..].iter().all(|&v| v == 1.0));
        assert!(fisher_cdf(&density(vec![0.0; 16]), &axis).is_err());
    }

    #[test]
    fn uniform_quantiles() {
        let axis = axis();
        let c = fisher_cdf(&density(vec![1.0; 256]), &axis).unwrap();
        let k = allocate_knots(&c, &axis, 4).unwrap();
        for (m, want) in [2.0, 4.0, 6.0, 8.0].iter().enumerate() {
            assert!((k.boundaries()[m + 1] - want).abs() <= axis.bin_width());
        }
        assert_eq!(k.first(), axis.first_center());
        assert_eq!(k.last(), axis.last_center());
    }

    #[test]
    fn step_cdf_repair_keeps_one_bin_gap() {
        let axis = TimeAxis::new(32, 0.5).unwrap();
        // two spikes: every quantile level collapses onto two bins
        let mut v = vec![0.0; 32];
        v[3] = 1.0;
        v[20] = 1.0;
        let c = fisher_cdf(&density(v), &axis).unwrap();
        let k = allocate_knots(&c, &axis, 8).unwrap();
        let b = k.boundaries();
        assert_eq!(b.len(), 10);
        for w in b.windows(2) {
            assert!(w[1] - w[0] >= axis.bin_width() * (1.0 - 1e-9), "{b:?}");
        }
    }

    #[test]
    fn too_many_knots_is_infeasible() {
        let axis = TimeAxis::new(8, 1.0).unwrap();
        let c = fisher_cdf(&density(vec![1.0; 8]), &axis).unwrap();
        assert!(matches!(allocate_knots(&c, &axis, 7), Err(Error::AllocationInfeasible(_))));
        assert!(allocate_knots(&c, &axis, 1).is_err());
    }

    #[test]
    fn rescaling_density_leaves_knots_unchanged() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let tau = Interval::new(0.2, 8.0).unwrap();
        let s = FisherSettings { n_grid: 50, ..Default::default() };
        let d = fisher_density_mono(&tau, 200.0, &irf, &axis, &s).unwrap();
        let mut scaled = d.clone();
        scaled.values.iter_mut().for_each(|v| *v *= 37.5);
        let a = allocate_knots(&fisher_cdf(&d, &axis).unwrap(), &axis, 6).unwrap();
        let b = allocate_knots(&fisher_cdf(&scaled, &axis).unwrap(), &axis, 6).unwrap();
        for (x, y) in a.boundaries().iter().zip(b.boundaries()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    /// The trace criterion is dominated by the amplitude-fraction term, whose
    /// information sits in the long-lifetime tail, so the interior knots land
    /// after the IRF and spread through the tail rather than crowding the rise.
    #[test]
    fn bi_trace_knots_follow_the_tail() {
        let axis = axis();
        let irf = reference_irf(&axis);
        let k = design_knots(
            KnotMode::Fisher(Aggregation::Average),
            4,
            &bi_ranges(),
            200.0,
            &irf,
            &axis,
            &FisherSettings::default(),
        )
        .unwrap();
        let b = k.boundaries();
        assert!(b[1] > 1.0, "{b:?}");
        assert!(b[1..5].iter().any(|&x| (4.0..=6.0).contains(&x)), "{b:?}");
        let cdf = fisher_cdf(
            &fisher_density(&bi_ranges(), 200.0, &irf, &axis, &FisherSettings::default()).unwrap(),
            &axis,
        )
        .unwrap();
        let at2 = cdf[axis.bin_of(2.0).unwrap()];
        assert!(at2 > 0.01 && at2 < 0.6, "C(2 ns) = {at2}");
    }

    #[test]
    fn uniform_knot_spacing() {
        let axis = axis();
        let k = uniform_knots(&axis, 4).unwrap();
        assert_eq!(k.boundaries().len(), 6);
        for m in [2, 3, 5, 16] {
            let k = uniform_knots(&axis, m).unwrap();
            let gaps: Vec<f64> = k.boundaries().windows(2).map(|w| w[1] - w[0]).collect();
            let (lo, hi) = gaps
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &g| (lo.min(g), hi.max(g)));
            assert!(hi - lo < 1e-9);
        }
        let k = uniform_knots(&axis, 2).unwrap();
        let (a, b) = (axis.first_center(), axis.last_center());
        assert!((k.boundaries()[1] - (a + (b - a) / 3.0)).abs() < 1e-12);
        assert!((k.boundaries()[2] - (a + 2.0 * (b - a) / 3.0)).abs() < 1e-12);
    }
}
