//! Lifetime estimators: sketch-domain fits, full-histogram NLSF and Poisson
//! MLE baselines, the phasor readout, and Cramér–Rao bounds.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fisher::{mu_gradient, DEFAULT_EPSILON};
use crate::lm::{self, Domain, LeastSquares, LmSettings, PoissonNll};
use crate::model::{model_curve, DecayParams, ModelKind, ParamRanges, TimeAxis};
use crate::phasor::PhasorPoint;
use crate::sketch::{normalize_l1, sketch_matrix, SketchMatrix, SplineBasis};
use crate::synth::Histogram;

/// Coarse lifetime grid used to seed one-parameter searches.
pub const MONO_GRID: usize = 64;
/// Absolute bracket width (ns) at which golden-section search stops.
pub const GOLDEN_TOL: f64 = 1e-4;
/// Stop threshold on the change of the negative log-likelihood.
pub const NLL_TOL: f64 = 1e-8;
/// Largest acceptable Fisher-matrix condition number.
pub const MAX_CONDITION: f64 = 1e12;

/// Everything a fit needs besides the data. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct FitContext {
    axis: TimeAxis,
    irf: Vec<f64>,
    ranges: ParamRanges,
    basis: Option<SplineBasis>,
    w: Option<SketchMatrix>,
    lm: LmSettings,
}

impl FitContext {
    /// Context for full-histogram fits.
    pub fn histogram(axis: TimeAxis, irf: Vec<f64>, ranges: ParamRanges) -> Result<Self> {
        if irf.len() != axis.n_bins() {
            return Err(Error::invalid("IRF length does not match the time axis"));
        }
        Ok(Self { axis, irf, ranges, basis: None, w: None, lm: LmSettings::default() })
    }

    /// Context for sketch-domain fits; caches the projection matrix.
    pub fn sketch(axis: TimeAxis, irf: Vec<f64>, ranges: ParamRanges, basis: SplineBasis) -> Result<Self> {
        let mut ctx = Self::histogram(axis, irf, ranges)?;
        ctx.w = Some(sketch_matrix(&basis, &ctx.axis));
        ctx.basis = Some(basis);
        Ok(ctx)
    }

    pub fn with_lm_settings(mut self, lm: LmSettings) -> Self {
        self.lm = lm;
        self
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }

    pub fn irf(&self) -> &[f64] {
        &self.irf
    }

    pub fn ranges(&self) -> &ParamRanges {
        &self.ranges
    }

    pub fn basis(&self) -> Option<&SplineBasis> {
        self.basis.as_ref()
    }

    pub fn sketch_matrix(&self) -> Option<&SketchMatrix> {
        self.w.as_ref()
    }

    fn kind(&self) -> ModelKind {
        self.ranges.kind()
    }

    fn domains(&self) -> Vec<Domain> {
        (0..self.kind().n_params()).map(|j| self.kind().component_domain(j)).collect()
    }

    fn require_w(&self) -> Result<&SketchMatrix> {
        self.w.as_ref().ok_or_else(|| Error::invalid("fit context has no spline basis"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: DecayParams,
    /// SSE for sketch and NLSF fits, negative log-likelihood for MLE.
    pub objective: f64,
    /// Closed-form amplitude (histogram fits only).
    pub amplitude: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub chi2: Option<f64>,
    /// Best objective after each accepted iterate.
    pub objective_trace: Vec<f64>,
}

impl FitResult {
    pub fn mean_lifetime(&self) -> f64 {
        self.params.mean_lifetime()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbResult {
    pub per_param_bounds: Vec<f64>,
    pub mean_tau_bound: f64,
}

pub fn mean_lifetime(params: &DecayParams) -> f64 {
    params.mean_lifetime()
}

/// Unit-L1 model sketch `W g(θ)`.
pub fn model_sketch(params: &DecayParams, ctx: &FitContext) -> Result<Vec<f64>> {
    let w = ctx.require_w()?;
    let g = model_curve(params, &ctx.irf, &ctx.axis)?;
    normalize_l1(&w.apply(&g)?).map_err(|_| {
        Error::NumericDegenerate(format!("model sketch of {params:?} vanishes on the knot support"))
    })
}

fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_sketch(s: &[f64], ctx: &FitContext) -> Result<()> {
    let w = ctx.require_w()?;
    if s.len() != w.rows() {
        return Err(Error::invalid(format!("sketch has {} channels, basis has {}", s.len(), w.rows())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sketch contains non-finite values"));
    }
    Ok(())
}

/// Grid scan followed by golden-section refinement over the lifetime range.
/// Returns `(tau, value, evaluations, trace)`.
fn golden_search<F>(lo: f64, hi: f64, f: F) -> Result<(f64, f64, usize, Vec<f64>)>
where
    F: Fn(f64) -> Result<f64>,
{
    let step = (hi - lo) / (MONO_GRID - 1) as f64;
    let grid: Vec<f64> = (0..MONO_GRID).map(|i| lo + i as f64 * step).collect();
    let values = grid.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    let (vmin, vmax) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vmax - vmin < 1e-15 {
        return Err(Error::NonIdentifiable);
    }
    let best = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    let mut trace = vec![values[best]];
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(MONO_GRID - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut evals = MONO_GRID + 2;
    let (mut x_best, mut f_best) = (grid[best], values[best]);
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
        evals += 1;
        for (x, v) in [(c, fc), (d, fd)] {
            if v < f_best {
                x_best = x;
                f_best = v;
            }
        }
        trace.push(f_best);
    }
    Ok((x_best, f_best, evals, trace))
}

/// One-parameter sketch fit on a unit-L1 measured sketch.
pub fn fit_mono_sketch(s_meas: &[f64], ctx: &FitContext) -> Result<FitResult> {
    let ParamRanges::Mono { tau } = ctx.ranges else {
        return Err(Error::invalid("mono sketch fit needs mono ranges"));
    };
    check_sketch(s_meas, ctx)?;
    let (t, v, evals, trace) =
        golden_search(tau.min, tau.max, |t| Ok(sse(s_meas, &model_sketch(&DecayParams::mono(t), ctx)?)))?;
    Ok(FitResult {
        params: DecayParams::mono(t),
        objective: v,
        amplitude: None,
        iterations: evals,
        converged: true,
        chi2: None,
        objective_trace: trace,
    })
}

fn run_lm<O: lm::Objective>(obj: &O, start: &[f64], ctx: &FitContext, settings: &LmSettings) -> Result<lm::LmOutcome> {
    lm::minimize(obj, start, &ctx.ranges.lower(), &ctx.ranges.upper(), settings)
}

/// Box-constrained least squares on the sketch residual, from the range midpoint.
pub fn fit_bi_sketch(s_meas: &[f64], ctx: &FitContext) -> Result<FitResult> {
    if ctx.kind() != ModelKind::Bi {
        return Err(Error::invalid("bi sketch fit needs bi ranges"));
    }
    check_sketch(s_meas, ctx)?;
    let domains = ctx.domains();
    let obj = LeastSquares {
        residual: |t: &[f64]| {
            let m = model_sketch(&DecayParams::from_slice(ModelKind::Bi, t), ctx)?;
            Ok(s_meas.iter().zip(&m).map(|(a, b)| a - b).collect())
        },
        domain: &domains,
    };
    let out = run_lm(&obj, &ctx.ranges.midpoint().to_vec(), ctx, &ctx.lm)?;
    Ok(FitResult {
        params: DecayParams::from_slice(ModelKind::Bi, &out.theta).canonical(),
        objective: out.value,
        amplitude: None,
        iterations: out.iterations,
        converged: out.converged,
        chi2: None,
        objective_trace: out.trace,
    })
}

/// Sketch fit for whichever model the context's ranges describe.
pub fn fit_sketch(s_meas: &[f64], ctx: &FitContext) -> Result<FitResult> {
    match ctx.kind() {
        ModelKind::Mono => fit_mono_sketch(s_meas, ctx),
        ModelKind::Bi => fit_bi_sketch(s_meas, ctx),
    }
}

/// Least-squares amplitude `yᵀg / gᵀg`.
pub fn ls_amplitude(y: &[f64], g: &[f64]) -> f64 {
    let num: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    let den: f64 = g.iter().map(|b| b * b).sum();
    num / den
}

/// Poisson-profiled amplitude `Σy / Σg`.
pub fn poisson_amplitude(y: &[f64], g: &[f64]) -> f64 {
    y.iter().sum::<f64>() / g.iter().sum::<f64>()
}

/// Reduced χ² with empty bins weighted as single counts.
pub fn chi2(y: &[f64], mu: &[f64]) -> f64 {
    let n = y.len() as f64;
    y.iter().zip(mu).map(|(&y, &m)| (y - m).powi(2) / y.max(1.0)).sum::<f64>() / n
}

fn check_histogram(h: &Histogram, ctx: &FitContext) -> Result<Vec<f64>> {
    if h.axis().n_bins() != ctx.axis.n_bins() {
        return Err(Error::invalid(format!(
            "histogram has {} bins, context axis has {}",
            h.axis().n_bins(),
            ctx.axis.n_bins()
        )));
    }
    if h.total() == 0 {
        return Err(Error::invalid("cannot fit an empty histogram"));
    }
    Ok(h.as_f64())
}

/// Start point: grid minimum over the lifetime range for mono, midpoint for bi.
fn start_point<F>(ctx: &FitContext, objective: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    match ctx.ranges {
        ParamRanges::Mono { tau } => {
            let mut best = (f64::INFINITY, tau.mid());
            for i in 0..MONO_GRID {
                let t = tau.lerp(i as f64 / (MONO_GRID - 1) as f64);
                let v = objective(&[t])?;
                if v < best.0 {
                    best = (v, t);
                }
            }
            Ok(vec![best.1])
        }
        ParamRanges::Bi { .. } => Ok(ctx.ranges.midpoint().to_vec()),
    }
}

/// Full-histogram least squares with the amplitude profiled in closed form.
pub fn fit_histogram_nlsf(h: &Histogram, ctx: &FitContext) -> Result<FitResult> {
    let y = check_histogram(h, ctx)?;
    let kind = ctx.kind();
    let domains = ctx.domains();
    let residual = |t: &[f64]| -> Result<Vec<f64>> {
        let g = model_curve(&DecayParams::from_slice(kind, t), &ctx.irf, &ctx.axis)?;
        let a = ls_amplitude(&y, &g);
        Ok(y.iter().zip(&g).map(|(y, g)| y - a * g).collect())
    };
    let start = start_point(ctx, |t| Ok(residual(t)?.iter().map(|r| r * r).sum()))?;
    let obj = LeastSquares { residual, domain: &domains };
    let out = run_lm(&obj, &start, ctx, &ctx.lm)?;
    let params = DecayParams::from_slice(kind, &out.theta);
    let g = model_curve(&params, &ctx.irf, &ctx.axis)?;
    let a = ls_amplitude(&y, &g);
    let mu: Vec<f64> = g.iter().map(|g| a * g).collect();
    Ok(FitResult {
        params: params.canonical(),
        objective: out.value,
        amplitude: Some(a),
        iterations: out.iterations,
        converged: out.converged,
        chi2: Some(chi2(&y, &mu)),
        objective_trace: out.trace,
    })
}

/// Poisson maximum likelihood with the amplitude profiled as `Σy / Σg`.
pub fn fit_histogram_mle(h: &Histogram, ctx: &FitContext) -> Result<FitResult> {
    let y = check_histogram(h, ctx)?;
    let kind = ctx.kind();
    let domains = ctx.domains();
    let mean = |t: &[f64]| -> Result<Vec<f64>> {
        let g = model_curve(&DecayParams::from_slice(kind, t), &ctx.irf, &ctx.axis)?;
        let a = poisson_amplitude(&y, &g);
        Ok(g.iter().map(|g| a * g).collect())
    };
    let start = start_point(ctx, |t| Ok(lm::poisson_nll(&mean(t)?, &y)))?;
    let obj = PoissonNll { mean, counts: &y, domain: &domains };
    let settings = LmSettings { f_tol: Some(NLL_TOL), ..ctx.lm };
    let out = run_lm(&obj, &start, ctx, &settings)?;
    let params = DecayParams::from_slice(kind, &out.theta);
    let g = model_curve(&params, &ctx.irf, &ctx.axis)?;
    let a = poisson_amplitude(&y, &g);
    let mu: Vec<f64> = g.iter().map(|g| a * g).collect();
    Ok(FitResult {
        params: params.canonical(),
        objective: out.value,
        amplitude: Some(a),
        iterations: out.iterations,
        converged: out.converged,
        chi2: Some(chi2(&y, &mu)),
        objective_trace: out.trace,
    })
}

/// Cramér–Rao bounds with the peak amplitude treated as known.
pub fn crb(params: &DecayParams, peak_counts: f64, ctx: &FitContext) -> Result<CrbResult> {
    params.validate()?;
    let p = params.kind().n_params();
    let mu: Vec<f64> = model_curve(params, &ctx.irf, &ctx.axis)?.iter().map(|g| peak_counts * g).collect();
    let grads = (0..p)
        .map(|j| mu_gradient(params, peak_counts, &ctx.irf, &ctx.axis, j))
        .collect::<Result<Vec<_>>>()?;
    let mut fim = DMatrix::<f64>::zeros(p, p);
    for (k, m) in mu.iter().enumerate() {
        let w = 1.0 / (m + DEFAULT_EPSILON);
        for a in 0..p {
            for b in 0..p {
                fim[(a, b)] += w * grads[a][k] * grads[b][k];
            }
        }
    }
    let sv = fim.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularInformation(cond));
    }
    let cov = fim.try_inverse().ok_or(Error::SingularInformation(cond))?;
    let per_param_bounds: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let mean_tau_bound = match *params {
        DecayParams::Mono { .. } => per_param_bounds[0],
        DecayParams::Bi { tau1, tau2, alpha1 } => {
            let d = [alpha1, 1.0 - alpha1, tau1 - tau2];
            let mut v = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    v += d[a] * cov[(a, b)] * d[b];
                }
            }
            v.max(0.0).sqrt()
        }
    };
    Ok(CrbResult { per_param_bounds, mean_tau_bound })
}

/// Mono lifetime read off an IRF-corrected phasor, `τ = s / (ω g)`.
pub fn phasor_mono_lifetime(p: &PhasorPoint, window: f64) -> Result<f64> {
    if !(p.g > 1e-9) {
        return Err(Error::OutsideSemicircle { g: p.g, s: p.s });
    }
    let omega = TAU * p.harmonic as f64 / window;
    Ok(p.s / (omega * p.g))
}
