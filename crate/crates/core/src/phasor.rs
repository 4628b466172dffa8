//! Phasor coordinates: the normalized `m`-th Fourier harmonic of the decay.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::model::TimeAxis;
use crate::synth::{Histogram, TimestampStream};

/// IRF phasors shorter than this cannot be divided out.
pub const MIN_IRF_MAGNITUDE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasorPoint {
    pub g: f64,
    pub s: f64,
    pub photon_count: u64,
    pub harmonic: u32,
}

impl PhasorPoint {
    pub fn magnitude(&self) -> f64 {
        self.g.hypot(self.s)
    }

    /// `(g - 1/2)^2 + s^2 - 1/4`; zero on the universal semicircle.
    pub fn semicircle_residual(&self) -> f64 {
        (self.g - 0.5).powi(2) + self.s * self.s - 0.25
    }
}

#[inline]
fn phase(t: f64, window: f64, m: u32) -> f64 {
    TAU * m as f64 * t / window
}

fn check_harmonic(m: u32) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("phasor harmonic must be at least 1"));
    }
    Ok(())
}

pub fn phasor_from_timestamps(stream: &TimestampStream, window: f64, m: u32) -> Result<PhasorPoint> {
    check_harmonic(m)?;
    if stream.is_empty() {
        return Err(Error::invalid("phasor of an empty photon stream"));
    }
    let (mut c, mut s) = (0.0, 0.0);
    for &t in stream.times() {
        let (sin, cos) = phase(t, window, m).sin_cos();
        c += cos;
        s += sin;
    }
    let p = stream.len() as f64;
    Ok(PhasorPoint { g: c / p, s: s / p, photon_count: stream.len() as u64, harmonic: m })
}

/// Photon-by-photon accumulation over bin centres, so the result is
/// bit-identical to [`phasor_from_timestamps`] on the expanded stream.
pub fn phasor_from_histogram(h: &Histogram, m: u32) -> Result<PhasorPoint> {
    check_harmonic(m)?;
    let total = h.total();
    if total == 0 {
        return Err(Error::invalid("phasor of an empty histogram"));
    }
    let axis = h.axis();
    let (mut c, mut s) = (0.0, 0.0);
    for (k, &n) in h.counts().iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (sin, cos) = phase(axis.center(k), axis.window(), m).sin_cos();
        for _ in 0..n {
            c += cos;
            s += sin;
        }
    }
    let p = total as f64;
    Ok(PhasorPoint { g: c / p, s: s / p, photon_count: total, harmonic: m })
}

/// Phasor of a non-negative real-valued curve on the bin grid (expected counts,
/// model curves, an IRF). `photon_count` is the rounded weight sum.
pub fn phasor_from_curve(curve: &[f64], axis: &TimeAxis, m: u32) -> Result<PhasorPoint> {
    check_harmonic(m)?;
    if curve.len() != axis.n_bins() {
        return Err(Error::invalid(format!(
            "curve has {} bins, axis has {}",
            curve.len(),
            axis.n_bins()
        )));
    }
    if curve.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("curve values must be finite and non-negative"));
    }
    let total: f64 = curve.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("phasor of an all-zero curve"));
    }
    let (mut c, mut s) = (0.0, 0.0);
    for (k, &w) in curve.iter().enumerate() {
        let (sin, cos) = phase(axis.center(k), axis.window(), m).sin_cos();
        c += w * cos;
        s += w * sin;
    }
    Ok(PhasorPoint { g: c / total, s: s / total, photon_count: total.round() as u64, harmonic: m })
}

/// Complex division `z_sample / z_irf`.
pub fn irf_correct_phasor(sample: &PhasorPoint, irf: &PhasorPoint) -> Result<PhasorPoint> {
    let d = irf.g * irf.g + irf.s * irf.s;
    if d.sqrt() <= MIN_IRF_MAGNITUDE {
        return Err(Error::DegenerateIrf(d.sqrt()));
    }
    Ok(PhasorPoint {
        g: (sample.g * irf.g + sample.s * irf.s) / d,
        s: (sample.s * irf.g - sample.g * irf.s) / d,
        photon_count: sample.photon_count,
        harmonic: sample.harmonic,
    })
}

/// Continuous mono-exponential phasor, `1 / (1 - i ω τ)` with `ω = 2π m / T`.
pub fn analytic_mono_phasor(tau: f64, window: f64, m: u32) -> PhasorPoint {
    let wt = TAU * m as f64 / window * tau;
    let d = 1.0 + wt * wt;
    PhasorPoint { g: 1.0 / d, s: wt / d, photon_count: 0, harmonic: m }
}
