//! Forward model: time axis, Gaussian IRF, and IRF-convolved mono/bi-exponential
//! decay curves.
//!
//! A decay curve is the discrete linear convolution of the sampled IRF with an
//! exponential kernel indexed by lag,
//!
//! ```text
//! g_k = sum_{j <= k} I_j * [ a1 * exp(-(t_k - t_j)/tau1) + (1 - a1) * exp(-(t_k - t_j)/tau2) ]
//! ```
//!
//! truncated to the acquisition window and rescaled so that `max_k g_k = 1`.
//! Under that normalization the expected count `A * g_k` makes `A` the expected
//! peak photon count of a pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform binning of the acquisition window `[0, T)`.
///
/// Bin `k` (zero-based) is centred at `(k + 1/2) * bin_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    n_bins: usize,
    bin_width: f64,
}

impl TimeAxis {
    pub const MIN_BINS: usize = 8;

    pub fn new(n_bins: usize, bin_width: f64) -> Result<Self> {
        if n_bins < Self::MIN_BINS {
            return Err(Error::invalid(format!(
                "time axis needs at least {} bins, got {n_bins}",
                Self::MIN_BINS
            )));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
        }
        Ok(Self { n_bins, bin_width })
    }

    /// Axis with `n_bins` bins spanning a window of `window` ns.
    pub fn with_window(n_bins: usize, window: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::invalid("time axis needs at least one bin"));
        }
        Self::new(n_bins, window / n_bins as f64)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn window(&self) -> f64 {
        self.n_bins as f64 * self.bin_width
    }

    /// Centre of zero-based bin `k`.
    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|k| self.center(k)).collect()
    }

    pub fn first_center(&self) -> f64 {
        self.center(0)
    }

    pub fn last_center(&self) -> f64 {
        self.center(self.n_bins - 1)
    }

    /// Bin containing `t`, or `None` outside `[0, T)`.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0) {
            return None;
        }
        let k = (t / self.bin_width).floor() as usize;
        (k < self.n_bins).then_some(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IrfShape {
    #[default]
    Gaussian,
}

/// Instrument response specification. `fwhm` and `peak_time` are in ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrfSpec {
    pub shape: IrfShape,
    pub fwhm: f64,
    pub peak_time: f64,
}

impl IrfSpec {
    pub fn gaussian(fwhm: f64, peak_time: f64) -> Self {
        Self { shape: IrfShape::Gaussian, fwhm, peak_time }
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    pub fn validate(&self, axis: &TimeAxis) -> Result<()> {
        if !(self.fwhm.is_finite() && self.fwhm > 0.0) {
            return Err(Error::invalid(format!("IRF FWHM must be positive, got {}", self.fwhm)));
        }
        if !(self.peak_time >= 0.0 && self.peak_time < axis.window()) {
            return Err(Error::invalid(format!(
                "IRF peak {} ns outside window [0, {})",
                self.peak_time,
                axis.window()
            )));
        }
        Ok(())
    }
}

/// Sample the IRF at bin centres, normalized to unit sum.
///
/// Exponents are shifted by the smallest one before `exp`, so a near-delta IRF
/// (width far below one bin) still puts its mass in the nearest bin instead of
/// underflowing to zero.
pub fn build_irf(spec: &IrfSpec, axis: &TimeAxis) -> Result<Vec<f64>> {
    spec.validate(axis)?;
    let two_var = 2.0 * spec.sigma().powi(2);
    let sq: Vec<f64> = (0..axis.n_bins())
        .map(|k| (axis.center(k) - spec.peak_time).powi(2))
        .collect();
    let nearest = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let mut irf: Vec<f64> = sq.iter().map(|&d| (-(d - nearest) / two_var).exp()).collect();
    let total: f64 = irf.iter().sum();
    irf.iter_mut().for_each(|v| *v /= total);
    Ok(irf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mono,
    Bi,
}

impl ModelKind {
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Mono => 1,
            ModelKind::Bi => 3,
        }
    }

    /// Region where component `j` still yields a valid model, used to keep
    /// finite-difference probes admissible.
    pub(crate) fn component_domain(self, j: usize) -> (f64, f64) {
        match (self, j) {
            (ModelKind::Bi, 2) => (0.0, 1.0),
            _ => (f64::MIN_POSITIVE, f64::INFINITY),
        }
    }
}

/// Lifetime parameters in ns; `alpha1` is the fractional amplitude of the
/// `tau1` component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayParams {
    Mono { tau: f64 },
    Bi { tau1: f64, tau2: f64, alpha1: f64 },
}

impl DecayParams {
    pub fn mono(tau: f64) -> Self {
        DecayParams::Mono { tau }
    }

    pub fn bi(tau1: f64, tau2: f64, alpha1: f64) -> Self {
        DecayParams::Bi { tau1, tau2, alpha1 }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            DecayParams::Mono { .. } => ModelKind::Mono,
            DecayParams::Bi { .. } => ModelKind::Bi,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            DecayParams::Mono { tau } => vec![tau],
            DecayParams::Bi { tau1, tau2, alpha1 } => vec![tau1, tau2, alpha1],
        }
    }

    pub fn from_slice(kind: ModelKind, v: &[f64]) -> Self {
        match kind {
            ModelKind::Mono => DecayParams::Mono { tau: v[0] },
            ModelKind::Bi => DecayParams::Bi { tau1: v[0], tau2: v[1], alpha1: v[2] },
        }
    }

    /// Amplitude-weighted mean lifetime; `tau` itself for mono decays.
    pub fn mean_lifetime(&self) -> f64 {
        match *self {
            DecayParams::Mono { tau } => tau,
            DecayParams::Bi { tau1, tau2, alpha1 } => alpha1 * tau1 + (1.0 - alpha1) * tau2,
        }
    }

    /// Positivity and amplitude checks only; range membership is separate.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DecayParams::Mono { tau } => tau.is_finite() && tau > 0.0,
            DecayParams::Bi { tau1, tau2, alpha1 } => {
                tau1.is_finite()
                    && tau2.is_finite()
                    && tau1 > 0.0
                    && tau2 > 0.0
                    && (0.0..=1.0).contains(&alpha1)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid decay parameters {self:?}")))
        }
    }

    /// Swap components so that `tau1 <= tau2`, mapping `alpha1 -> 1 - alpha1`.
    pub fn canonical(self) -> Self {
        match self {
            DecayParams::Bi { tau1, tau2, alpha1 } if tau1 > tau2 => {
                DecayParams::Bi { tau1: tau2, tau2: tau1, alpha1: 1.0 - alpha1 }
            }
            p => p,
        }
    }
}

/// Closed interval `[min, max]` with `min < max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::invalid(format!("interval [{min}, {max}] must satisfy min < max")));
        }
        Ok(Self { min, max })
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn lerp(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

/// Prior box over the lifetime parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRanges {
    Mono { tau: Interval },
    Bi { tau1: Interval, tau2: Interval, alpha1: Interval },
}

impl ParamRanges {
    pub fn mono(tau_min: f64, tau_max: f64) -> Result<Self> {
        let tau = Interval::new(tau_min, tau_max)?;
        if tau.min <= 0.0 {
            return Err(Error::invalid("lifetimes must be positive"));
        }
        Ok(ParamRanges::Mono { tau })
    }

    /// Bi-exponential box. Overlapping lifetime ranges (`tau1_max > tau2_min`)
    /// are rejected so that `tau1 <= tau2` identifies the components.
    pub fn bi(tau1: (f64, f64), tau2: (f64, f64), alpha1: (f64, f64)) -> Result<Self> {
        let tau1 = Interval::new(tau1.0, tau1.1)?;
        let tau2 = Interval::new(tau2.0, tau2.1)?;
        let alpha1 = Interval::new(alpha1.0, alpha1.1)?;
        if tau1.min <= 0.0 {
            return Err(Error::invalid("lifetimes must be positive"));
        }
        if tau1.max > tau2.min {
            return Err(Error::invalid(format!(
                "tau1 range [{}, {}] overlaps tau2 range [{}, {}]",
                tau1.min, tau1.max, tau2.min, tau2.max
            )));
        }
        if alpha1.min < 0.0 || alpha1.max > 1.0 {
            return Err(Error::invalid("alpha1 range must lie within [0, 1]"));
        }
        Ok(ParamRanges::Bi { tau1, tau2, alpha1 })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ParamRanges::Mono { .. } => ModelKind::Mono,
            ParamRanges::Bi { .. } => ModelKind::Bi,
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        match *self {
            ParamRanges::Mono { tau } => vec![tau],
            ParamRanges::Bi { tau1, tau2, alpha1 } => vec![tau1, tau2, alpha1],
        }
    }

    pub fn lower(&self) -> Vec<f64> {
        self.intervals().iter().map(|i| i.min).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.intervals().iter().map(|i| i.max).collect()
    }

    pub fn midpoint(&self) -> DecayParams {
        let mid: Vec<f64> = self.intervals().iter().map(Interval::mid).collect();
        DecayParams::from_slice(self.kind(), &mid)
    }

    pub fn contains(&self, p: &DecayParams) -> bool {
        p.kind() == self.kind()
            && self.intervals().iter().zip(p.to_vec()).all(|(i, v)| i.contains(v))
    }

    /// Point at fractional position `u` (each component in `[0, 1]`) of the box.
    pub fn at(&self, u: &[f64]) -> DecayParams {
        let v: Vec<f64> = self.intervals().iter().zip(u).map(|(i, &u)| i.lerp(u)).collect();
        DecayParams::from_slice(self.kind(), &v)
    }

    /// Box shrunk by `frac` of each width on both sides.
    pub fn inset(&self, frac: f64) -> Self {
        let shrink = |i: Interval| Interval {
            min: i.min + frac * i.width(),
            max: i.max - frac * i.width(),
        };
        match *self {
            ParamRanges::Mono { tau } => ParamRanges::Mono { tau: shrink(tau) },
            ParamRanges::Bi { tau1, tau2, alpha1 } => ParamRanges::Bi {
                tau1: shrink(tau1),
                tau2: shrink(tau2),
                alpha1: shrink(alpha1),
            },
        }
    }
}

/// Lag kernel response `sum_{j<=k} irf_j * r^(k-j)` with `r = exp(-dt/tau)`.
fn exp_response(irf: &[f64], decay_per_bin: f64, out: &mut [f64]) {
    let mut acc = 0.0;
    for (o, &i) in out.iter_mut().zip(irf) {
        acc = acc * decay_per_bin + i;
        *o = acc;
    }
}

/// Unnormalized convolution of the IRF with the decay kernel.
pub(crate) fn convolve_decay(params: &DecayParams, irf: &[f64], dt: f64) -> Vec<f64> {
    let n = irf.len();
    let mut out = vec![0.0; n];
    match *params {
        DecayParams::Mono { tau } => exp_response(irf, (-dt / tau).exp(), &mut out),
        DecayParams::Bi { tau1, tau2, alpha1 } => {
            let mut second = vec![0.0; n];
            exp_response(irf, (-dt / tau1).exp(), &mut out);
            exp_response(irf, (-dt / tau2).exp(), &mut second);
            for (o, s) in out.iter_mut().zip(&second) {
                *o = alpha1 * *o + (1.0 - alpha1) * s;
            }
        }
    }
    out
}

/// IRF-convolved decay at the bin centres, scaled to unit peak.
pub fn model_curve(params: &DecayParams, irf: &[f64], axis: &TimeAxis) -> Result<Vec<f64>> {
    params.validate()?;
    if irf.len() != axis.n_bins() {
        return Err(Error::invalid(format!(
            "IRF has {} samples but axis has {} bins",
            irf.len(),
            axis.n_bins()
        )));
    }
    let mut g = convolve_decay(params, irf, axis.bin_width());
    let peak = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::NumericDegenerate(format!(
            "decay convolution for {params:?} has no positive peak"
        )));
    }
    g.iter_mut().for_each(|v| *v /= peak);
    Ok(g)
}

/// Expected photon counts `A * g`.
pub fn expected_counts(peak_counts: f64, g: &[f64]) -> Vec<f64> {
    g.iter().map(|&v| peak_counts * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_axis() -> TimeAxis {
        TimeAxis::with_window(256, 10.0).unwrap()
    }

    fn direct_convolution(params: &DecayParams, irf: &[f64], axis: &TimeAxis) -> Vec<f64> {
        let n = axis.n_bins();
        let kernel = |lag: f64| match *params {
            DecayParams::Mono { tau } => (-lag / tau).exp(),
            DecayParams::Bi { tau1, tau2, alpha1 } => {
                alpha1 * (-lag / tau1).exp() + (1.0 - alpha1) * (-lag / tau2).exp()
            }
        };
        let mut g = vec![0.0; n];
        for k in 0..n {
            for j in 0..=k {
                g[k] += irf[j] * kernel(axis.center(k) - axis.center(j));
            }
        }
        let peak = g.iter().copied().fold(0.0, f64::max);
        g.iter().map(|v| v / peak).collect()
    }

    #[test]
    fn axis_rejects_short_windows() {
        assert!(TimeAxis::new(7, 0.1).is_err());
        assert!(TimeAxis::new(8, 0.0).is_err());
        let axis = reference_axis();
        assert_eq!(axis.bin_width(), 10.0 / 256.0);
        let c = axis.centers();
        assert!(c.windows(2).all(|w| w[1] - w[0] == axis.bin_width()));
        assert_eq!(axis.bin_of(axis.center(17)), Some(17));
        assert_eq!(axis.bin_of(10.0), None);
    }

    #[test]
    fn irf_unit_sum_peak_near_t0() {
        let axis = reference_axis();
        let irf = build_irf(&IrfSpec::gaussian(0.1, 1.0), &axis).unwrap();
        assert!((irf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = irf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let nearest = (0..256)
            .min_by(|&a, &b| {
                (axis.center(a) - 1.0).abs().total_cmp(&(axis.center(b) - 1.0).abs())
            })
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn irf_delta_limit_single_bin() {
        let axis = reference_axis();
        let spec = IrfSpec::gaussian(axis.bin_width() / 100.0, 1.0);
        let irf = build_irf(&spec, &axis).unwrap();
        assert!(irf.iter().copied().fold(0.0, f64::max) >= 0.99);
    }

    #[test]
    fn irf_measured_fwhm_within_one_bin() {
        let axis = reference_axis();
        let irf = build_irf(&IrfSpec::gaussian(0.25, 1.0), &axis).unwrap();
        assert!((irf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (kmax, &peak) =
            irf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let half = peak / 2.0;
        let crossing = |range: Box<dyn Iterator<Item = usize>>, step: isize| -> f64 {
            for k in range {
                let next = (k as isize + step) as usize;
                if irf[next] < half {
                    let frac = (irf[k] - half) / (irf[k] - irf[next]);
                    return axis.center(k) + step as f64 * frac * axis.bin_width();
                }
            }
            unreachable!()
        };
        let right = crossing(Box::new(kmax..255), 1);
        let left = crossing(Box::new((1..=kmax).rev()), -1);
        assert!(((right - left) - 0.25).abs() < axis.bin_width(), "{}", right - left);
    }

    #[test]
    fn irf_rejects_peak_outside_window() {
        let axis = reference_axis();
        assert!(build_irf(&IrfSpec::gaussian(0.1, 10.0), &axis).is_err());
        assert!(build_irf(&IrfSpec::gaussian(-0.1, 1.0), &axis).is_err());
    }

    #[test]
    fn bi_curve_peaks_at_one() {
        let axis = reference_axis();
        let irf = build_irf(&IrfSpec::gaussian(0.1, 1.0), &axis).unwrap();
        let g = model_curve(&DecayParams::bi(0.3, 2.0, 0.05), &irf, &axis).unwrap();
        assert_eq!(g.iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn delta_irf_gives_plain_exponential() {
        let axis = reference_axis();
        // t0 on a bin centre so the delta lands exactly on it
        let t0 = axis.center(25);
        let irf = build_irf(&IrfSpec::gaussian(axis.bin_width() / 100.0, t0), &axis).unwrap();
        let g = model_curve(&DecayParams::mono(1.0), &irf, &axis).unwrap();
        for k in 25..256 {
            let want = (-(axis.center(k) - t0) / 1.0).exp();
            assert!((g[k] - want).abs() < 1e-6, "bin {k}: {} vs {want}", g[k]);
        }
        assert!(g[..25].iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn long_lifetime_has_heavier_tail() {
        let axis = reference_axis();
        let irf = build_irf(&IrfSpec::gaussian(0.1, 1.0), &axis).unwrap();
        let long = model_curve(&DecayParams::mono(8.0), &irf, &axis).unwrap();
        let short = model_curve(&DecayParams::mono(0.2), &irf, &axis).unwrap();
        assert!(long[255] / short[255] > 1e3);
    }

    #[test]
    fn recursion_matches_double_loop() {
        let axis = TimeAxis::with_window(32, 4.0).unwrap();
        let irf = build_irf(&IrfSpec::gaussian(0.4, 0.7), &axis).unwrap();
        for p in [DecayParams::mono(0.8), DecayParams::bi(0.3, 2.5, 0.6)] {
            let fast = model_curve(&p, &irf, &axis).unwrap();
            let slow = direct_convolution(&p, &irf, &axis);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_irf_is_degenerate() {
        let axis = TimeAxis::with_window(16, 1.0).unwrap();
        let err = model_curve(&DecayParams::mono(1.0), &[0.0; 16], &axis).unwrap_err();
        assert!(matches!(err, Error::NumericDegenerate(_)));
    }

    #[test]
    fn expected_counts_scale() {
        let axis = reference_axis();
        let irf = build_irf(&IrfSpec::gaussian(0.1, 1.0), &axis).unwrap();
        let g = model_curve(&DecayParams::bi(1.0, 4.0, 0.5), &irf, &axis).unwrap();
        let mu = expected_counts(500.0, &g);
        assert_eq!(mu.iter().copied().fold(0.0, f64::max), 500.0);
        assert_eq!(expected_counts(1.0, &g), g);
        let mu = expected_counts(200.0, &g);
        let mut direct = 0.0;
        for v in &g {
            direct += 200.0 * v;
        }
        assert!((mu.iter().sum::<f64>() - direct).abs() < 1e-9);
    }

    #[test]
    fn ranges_reject_overlap() {
        assert!(ParamRanges::bi((0.2, 2.5), (2.0, 8.0), (0.05, 0.95)).is_err());
        assert!(ParamRanges::bi((0.2, 2.0), (2.0, 8.0), (0.05, 1.2)).is_err());
        assert!(ParamRanges::mono(3.0, 1.0).is_err());
        let r = ParamRanges::bi((0.2, 2.0), (2.0, 8.0), (0.05, 0.95)).unwrap();
        assert_eq!(r.midpoint(), DecayParams::bi(1.1, 5.0, 0.5));
    }

    #[test]
    fn canonical_swaps_components() {
        let p = DecayParams::bi(4.0, 1.0, 0.3).canonical();
        assert_eq!(p, DecayParams::bi(1.0, 4.0, 0.7));
        assert!((p.mean_lifetime() - 1.9).abs() < 1e-12);
    }
}
