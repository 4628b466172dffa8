//! Running estimators over synthetic pixel sets.
//!
//! A [`Scenario`] fixes axis, IRF, prior box and brightness; a [`Method`]
//! names one estimator pipeline (sketch with a knot design and accumulation
//! path, or a full-histogram fit). Per-pixel failures that are numerical in
//! nature do not abort a batch: the pixel keeps a row with `converged = false`
//! at the prior midpoint, so outputs stay aligned with the truth table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, ErrorClass, Result};
use crate::estimate::{fit_histogram_mle, fit_histogram_nlsf, fit_sketch, FitContext, FitResult};
use crate::fisher::{design_knots, Aggregation, FisherSettings, KnotMode, KnotSet};
use crate::fxp::{build_fxp_lut, fxp_sketch_from_timestamps};
use crate::io::SketchPath;
use crate::metrics::{ReportKey, RunResult};
use crate::model::{build_irf, model_curve, DecayParams, IrfSpec, ParamRanges, TimeAxis};
use crate::sketch::{normalize_sketch, sketch_from_histogram, sketch_matrix, SketchVector, SplineBasis};
use crate::synth::{histogram_to_timestamps, Histogram, Intensity, TimestampMode, Trial};

/// One estimator pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sketch { knots: KnotMode, path: SketchPath },
    Nlsf,
    Mle,
}

impl Method {
    pub fn sketch(knots: KnotMode) -> Self {
        Method::Sketch { knots, path: SketchPath::Float }
    }

    pub fn fixed_point(knots: KnotMode, depth: usize) -> Self {
        Method::Sketch { knots, path: SketchPath::Fixed { depth } }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sketch { knots, path: SketchPath::Float } => write!(f, "sketch-{knots}"),
            Method::Sketch { knots, path: SketchPath::Fixed { depth } } => write!(f, "sketch-{knots}-fxp{depth}"),
            Method::Nlsf => f.write_str("nlsf"),
            Method::Mle => f.write_str("mle"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown method `{s}`"));
        match s {
            "nlsf" => return Ok(Method::Nlsf),
            "mle" => return Ok(Method::Mle),
            _ => {}
        }
        let rest = s.strip_prefix("sketch-").ok_or_else(bad)?;
        let (knots, path) = match rest.rsplit_once("-fxp") {
            Some((k, d)) => (k, SketchPath::Fixed { depth: d.parse().map_err(|_| bad())? }),
            None => (rest, SketchPath::Float),
        };
        let knots = match knots {
            "uniform" => KnotMode::Uniform,
            k => KnotMode::Fisher(k.strip_prefix("fisher-").ok_or_else(bad)?.parse::<Aggregation>().map_err(|_| bad())?),
        };
        Ok(Method::Sketch { knots, path })
    }
}

/// Fixed acquisition setting shared by every method of a run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub axis: TimeAxis,
    pub irf: IrfSpec,
    pub ranges: ParamRanges,
    pub intensity: Intensity,
    pub fisher: FisherSettings,
}

impl Scenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            axis: cfg.time_axis()?,
            irf: cfg.irf_spec(),
            ranges: cfg.ranges()?,
            intensity: cfg.intensity()?,
            fisher: cfg.fisher_settings(),
        })
    }

    pub fn irf_vector(&self) -> Result<Vec<f64>> {
        build_irf(&self.irf, &self.axis)
    }

    /// Peak count used for knot design. Under a photon-total budget this is the
    /// peak of the prior-midpoint decay carrying that total.
    pub fn design_peak(&self) -> Result<f64> {
        let g = model_curve(&self.ranges.midpoint(), &self.irf_vector()?, &self.axis)?;
        Ok(self.intensity.peak_for(&g))
    }

    pub fn knots(&self, mode: KnotMode, m: usize) -> Result<KnotSet> {
        design_knots(mode, m, &self.ranges, self.design_peak()?, &self.irf_vector()?, &self.axis, &self.fisher)
    }

    pub fn histogram_context(&self) -> Result<FitContext> {
        FitContext::histogram(self.axis, self.irf_vector()?, self.ranges)
    }

    pub fn sketch_context(&self, knots: KnotSet) -> Result<FitContext> {
        FitContext::sketch(self.axis, self.irf_vector()?, self.ranges, SplineBasis::new(knots))
    }

    pub fn report_key(&self, method: &Method, m: Option<usize>) -> ReportKey {
        let peak_counts = match self.intensity {
            Intensity::Peak(a) | Intensity::Total(a) => a,
        };
        ReportKey {
            method: method.to_string(),
            m: if matches!(method, Method::Sketch { .. }) { m } else { None },
            peak_counts,
            irf_fwhm: self.irf.fwhm,
            n_bins: self.axis.n_bins(),
            lut_depth: match method {
                Method::Sketch { path: SketchPath::Fixed { depth }, .. } => Some(*depth),
                _ => None,
            },
        }
    }

    /// Design knots (sketch methods only) and fit every trial.
    pub fn run(&self, method: Method, m: usize, trials: &[Trial]) -> Result<Vec<FitResult>> {
        let hists: Vec<&Histogram> = trials.iter().map(|t| &t.histogram).collect();
        match method {
            Method::Sketch { knots, path } => {
                let ctx = self.sketch_context(self.knots(knots, m)?)?;
                let sketches = sketch_histograms(&ctx, &hists, path)?;
                fit_sketches(&ctx, &sketches)
            }
            Method::Nlsf | Method::Mle => fit_histograms(&self.histogram_context()?, &hists, method),
        }
    }

    /// [`Scenario::run`] summarized against the trial ground truth.
    pub fn run_report(&self, method: Method, m: usize, trials: &[Trial]) -> Result<RunResult> {
        let fits = self.run(method, m, trials)?;
        let truths: Vec<DecayParams> = trials.iter().map(|t| t.params).collect();
        Ok(RunResult { key: self.report_key(&method, Some(m)), columns: param_columns(&fits, &truths), map_shape: None })
    }
}

/// Sketch every histogram on the context's basis.
///
/// The float path applies the sketch matrix; the fixed-point path expands each
/// histogram into bin-centre timestamps and accumulates through a depth-`D`
/// Q8.8 table, as a streaming device would.
pub fn sketch_histograms(ctx: &FitContext, hists: &[&Histogram], path: SketchPath) -> Result<Vec<SketchVector>> {
    let basis = ctx.basis().ok_or_else(|| Error::invalid("fit context has no spline basis"))?;
    match path {
        SketchPath::Float => {
            let w = match ctx.sketch_matrix() {
                Some(w) => w.clone(),
                None => sketch_matrix(basis, ctx.axis()),
            };
            hists.par_iter().map(|h| sketch_from_histogram(&w, h)).collect()
        }
        SketchPath::Fixed { depth } => {
            let lut = build_fxp_lut(basis, depth, ctx.axis().window())?;
            hists
                .par_iter()
                .map(|h| fxp_sketch_from_timestamps(&lut, &histogram_to_timestamps(h, TimestampMode::BinCenter, 0)))
                .collect()
        }
    }
}

/// Keep numerical per-pixel failures as unconverged rows; propagate the rest.
pub fn fit_or_placeholder(fit: Result<FitResult>, ranges: &ParamRanges) -> Result<FitResult> {
    match fit {
        Ok(f) => Ok(f),
        Err(e) if e.class() == ErrorClass::Numeric => {
            log::warn!("pixel fit failed: {e}");
            Ok(FitResult {
                params: ranges.midpoint(),
                objective: f64::NAN,
                amplitude: None,
                iterations: 0,
                converged: false,
                chi2: None,
                objective_trace: Vec::new(),
            })
        }
        Err(e) => Err(e),
    }
}

pub fn fit_sketches(ctx: &FitContext, sketches: &[SketchVector]) -> Result<Vec<FitResult>> {
    sketches
        .par_iter()
        .map(|s| {
            let fit = normalize_sketch(s).and_then(|v| fit_sketch(&v, ctx));
            fit_or_placeholder(fit, ctx.ranges())
        })
        .collect()
}

pub fn fit_histograms(ctx: &FitContext, hists: &[&Histogram], method: Method) -> Result<Vec<FitResult>> {
    let f = match method {
        Method::Nlsf => fit_histogram_nlsf,
        Method::Mle => fit_histogram_mle,
        Method::Sketch { .. } => return Err(Error::invalid("sketch methods need sketches, not histograms")),
    };
    hists.par_iter().map(|h| fit_or_placeholder(f(h, ctx), ctx.ranges())).collect()
}

/// Estimate/truth columns per parameter name (`tau`, or `tau1`, `tau2`,
/// `alpha1`), plus `mean_tau`.
pub fn param_columns(fits: &[FitResult], truths: &[DecayParams]) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
    param_columns_of(&fits.iter().map(|f| f.params).collect::<Vec<_>>(), truths)
}

pub fn param_columns_of(estimates: &[DecayParams], truths: &[DecayParams]) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
    let mut cols: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (e, t) in estimates.iter().zip(truths) {
        let names: &[&str] = match t {
            DecayParams::Mono { .. } => &["tau"],
            DecayParams::Bi { .. } => &["tau1", "tau2", "alpha1"],
        };
        for ((name, ev), tv) in names.iter().zip(e.to_vec()).zip(t.to_vec()) {
            let c = cols.entry(name.to_string()).or_default();
            c.0.push(ev);
            c.1.push(tv);
        }
        let c = cols.entry("mean_tau".into()).or_default();
        c.0.push(e.mean_lifetime());
        c.1.push(t.mean_lifetime());
    }
    cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_trial_set;

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Nlsf,
            Method::Mle,
            Method::sketch(KnotMode::Uniform),
            Method::sketch(KnotMode::Fisher(Aggregation::Max)),
            Method::fixed_point(KnotMode::Fisher(Aggregation::Average), 128),
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(Method::fixed_point(KnotMode::Uniform, 16).to_string(), "sketch-uniform-fxp16");
        assert!("sketch-cubic".parse::<Method>().is_err());
    }

    #[test]
    fn small_mono_run_is_accurate() {
        let s = Scenario {
            axis: TimeAxis::with_window(256, 10.0).unwrap(),
            irf: IrfSpec::gaussian(0.1, 1.0),
            ranges: ParamRanges::mono(0.2, 8.0).unwrap(),
            intensity: Intensity::Peak(500.0),
            fisher: FisherSettings::default(),
        };
        let trials = generate_trial_set(&s.ranges, 500.0, &s.irf, &s.axis, 20, 3).unwrap();
        for method in [Method::sketch(KnotMode::Fisher(Aggregation::Average)), Method::Mle] {
            let run = s.run_report(method, 4, &trials).unwrap();
            let (est, truth) = &run.columns["tau"];
            let mae = crate::metrics::mae(est, truth).unwrap();
            assert!(mae < 0.1, "{method}: {mae}");
            assert_eq!(run.key.m.is_some(), matches!(method, Method::Sketch { .. }));
        }
    }

    #[test]
    fn placeholder_keeps_row() {
        let r = ParamRanges::mono(1.0, 3.0).unwrap();
        let f = fit_or_placeholder(Err(Error::NonIdentifiable), &r).unwrap();
        assert!(!f.converged);
        assert_eq!(f.params, DecayParams::mono(2.0));
        assert!(fit_or_placeholder(Err(Error::invalid("x")), &r).is_err());
    }
}
