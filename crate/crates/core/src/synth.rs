//! Photon-count data: histograms, timestamp streams, Poisson sampling and the
//! synthetic trial sets and spatial maps used by the experiments.
//!
//! All randomness is derived from a base seed and an item index through
//! [`derived_rng`], so every trial or pixel is reproducible on its own and
//! independent of iteration order or thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_irf, expected_counts, model_curve, DecayParams, IrfSpec, ParamRanges, TimeAxis,
};

/// Per-item random stream: a ChaCha8 generator keyed by `base_seed` on stream
/// `index`.
pub fn derived_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// A `u64` seed drawn from the stream of [`derived_rng`], for APIs that take
/// a plain seed.
pub fn derived_seed(base_seed: u64, index: u64) -> u64 {
    derived_rng(base_seed, index).next_u64()
}

/// Binned photon counts over a time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    axis: TimeAxis,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(axis: TimeAxis, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != axis.n_bins() {
            return Err(Error::invalid(format!(
                "histogram has {} bins, axis expects {}",
                counts.len(),
                axis.n_bins()
            )));
        }
        Ok(Self { axis, counts })
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Raw photon arrival times in `[0, window)` ns.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampStream {
    window: f64,
    times: Vec<f64>,
}

impl TimestampStream {
    pub fn new(window: f64, times: Vec<f64>) -> Result<Self> {
        if !(window.is_finite() && window > 0.0) {
            return Err(Error::invalid(format!("window must be positive, got {window}")));
        }
        if let Some(bad) = times.iter().find(|&&t| !(t >= 0.0 && t < window)) {
            return Err(Error::invalid(format!("timestamp {bad} outside [0, {window})")));
        }
        Ok(Self { window, times })
    }

    pub fn empty(window: f64) -> Self {
        Self { window, times: Vec::new() }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Concatenation of two streams over the same window.
    pub fn merged(&self, other: &TimestampStream) -> Result<Self> {
        if self.window != other.window {
            return Err(Error::invalid("cannot merge streams with different windows"));
        }
        let mut times = self.times.clone();
        times.extend_from_slice(&other.times);
        Ok(Self { window: self.window, times })
    }

    /// Bin the stream onto `axis`.
    pub fn rebin(&self, axis: &TimeAxis) -> Histogram {
        let mut counts = vec![0u64; axis.n_bins()];
        for &t in &self.times {
            if let Some(k) = axis.bin_of(t) {
                counts[k] += 1;
            }
        }
        Histogram { axis: *axis, counts }
    }
}

/// Poisson draw per bin.
pub fn sample_histogram_with<R: Rng + ?Sized>(
    axis: &TimeAxis,
    mu: &[f64],
    rng: &mut R,
) -> Result<Histogram> {
    if mu.len() != axis.n_bins() {
        return Err(Error::invalid("expected-count vector length does not match axis"));
    }
    let mut counts = Vec::with_capacity(mu.len());
    for &m in mu {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::invalid(format!("expected count {m} is not a finite non-negative")));
        }
        let c = if m == 0.0 {
            0
        } else {
            let d = Poisson::new(m).map_err(|e| Error::invalid(e.to_string()))?;
            d.sample(rng) as u64
        };
        counts.push(c);
    }
    Ok(Histogram { axis: *axis, counts })
}

pub fn sample_histogram(axis: &TimeAxis, mu: &[f64], seed: u64) -> Result<Histogram> {
    sample_histogram_with(axis, mu, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampMode {
    /// Every photon sits at its bin centre.
    #[default]
    BinCenter,
    /// Photons uniformly spread inside their bin.
    UniformJitter,
}

/// Expand a histogram into photon timestamps, bin by bin.
pub fn histogram_to_timestamps(h: &Histogram, mode: TimestampMode, seed: u64) -> TimestampStream {
    let axis = h.axis;
    let mut times = Vec::with_capacity(h.total() as usize);
    match mode {
        TimestampMode::BinCenter => {
            for (k, &c) in h.counts.iter().enumerate() {
                times.extend(std::iter::repeat_n(axis.center(k), c as usize));
            }
        }
        TimestampMode::UniformJitter => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dt = axis.bin_width();
            for (k, &c) in h.counts.iter().enumerate() {
                let lo = k as f64 * dt;
                for _ in 0..c {
                    let t = lo + rng.random::<f64>() * dt;
                    // guard against rounding onto the next bin edge
                    times.push(if t < lo + dt { t } else { lo });
                }
            }
        }
    }
    TimestampStream { window: axis.window(), times }
}

/// One synthetic pixel: ground truth plus its sampled histogram.
#[derive(Debug, Clone)]
pub struct Trial {
    pub params: DecayParams,
    pub histogram: Histogram,
}

/// Uniform draw inside the prior box.
pub fn sample_params<R: Rng + ?Sized>(ranges: &ParamRanges, rng: &mut R) -> DecayParams {
    let u: Vec<f64> = (0..ranges.kind().n_params()).map(|_| rng.random::<f64>()).collect();
    ranges.at(&u)
}

/// How bright a synthetic pixel is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intensity {
    /// Expected count at the curve maximum (`A`).
    Peak(f64),
    /// Expected photon total over the window; `A` is set per pixel so that
    /// `A · Σ g = total`.
    Total(f64),
}

impl Intensity {
    pub fn peak_for(&self, g: &[f64]) -> f64 {
        match *self {
            Intensity::Peak(a) => a,
            Intensity::Total(p) => p / g.iter().sum::<f64>(),
        }
    }
}

/// `n_trials` independent pixels with parameters uniform in `ranges` and
/// peak expected count `peak_counts`.
pub fn generate_trial_set(
    ranges: &ParamRanges,
    peak_counts: f64,
    irf: &IrfSpec,
    axis: &TimeAxis,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    generate_trials(ranges, Intensity::Peak(peak_counts), irf, axis, n_trials, seed)
}

pub fn generate_trials(
    ranges: &ParamRanges,
    intensity: Intensity,
    irf: &IrfSpec,
    axis: &TimeAxis,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let irf = build_irf(irf, axis)?;
    (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let params = sample_params(ranges, &mut rng);
            let g = model_curve(&params, &irf, axis)?;
            let mu = expected_counts(intensity.peak_for(&g), &g);
            let histogram = sample_histogram_with(axis, &mu, &mut rng)?;
            Ok(Trial { params, histogram })
        })
        .collect()
}

/// Repeated noisy realizations of one fixed parameter set.
pub fn generate_repeats(
    params: &DecayParams,
    intensity: Intensity,
    irf: &IrfSpec,
    axis: &TimeAxis,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let irf = build_irf(irf, axis)?;
    let g = model_curve(params, &irf, axis)?;
    let mu = expected_counts(intensity.peak_for(&g), &g);
    (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let histogram = sample_histogram_with(axis, &mu, &mut derived_rng(seed, i as u64))?;
            Ok(Trial { params: *params, histogram })
        })
        .collect()
}

/// Centre and edge parameters of the radial test map.
pub const MAP_CENTER: (f64, f64, f64) = (0.3, 2.0, 0.05);
pub const MAP_EDGE: (f64, f64, f64) = (2.0, 5.0, 0.95);

/// Ground truth of pixel `(row, col)`: linear interpolation from centre to edge
/// along the normalized radial distance, clipped at 1 towards the corners.
pub fn map_params(rows: usize, cols: usize, row: usize, col: usize) -> DecayParams {
    let r = map_radius(rows, cols, row, col);
    let lerp = |a: f64, b: f64| a + r * (b - a);
    DecayParams::bi(
        lerp(MAP_CENTER.0, MAP_EDGE.0),
        lerp(MAP_CENTER.1, MAP_EDGE.1),
        lerp(MAP_CENTER.2, MAP_EDGE.2),
    )
}

/// Normalized radial distance of a pixel: 0 at the centre, 1 at mid-edge.
pub fn map_radius(rows: usize, cols: usize, row: usize, col: usize) -> f64 {
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let v = (row as f64 - cy) / cy;
    let u = (col as f64 - cx) / cx;
    (u * u + v * v).sqrt().min(1.0)
}

/// Row-major grid of synthetic bi-exponential pixels.
#[derive(Debug, Clone)]
pub struct SpatialMap {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Trial>,
}

impl SpatialMap {
    pub fn pixel(&self, row: usize, col: usize) -> &Trial {
        &self.pixels[row * self.cols + col]
    }
}

pub fn generate_spatial_map(
    axis: &TimeAxis,
    irf: &IrfSpec,
    peak_counts: f64,
    size: (usize, usize),
    seed: u64,
) -> Result<SpatialMap> {
    let (rows, cols) = size;
    if rows < 8 || cols < 8 {
        return Err(Error::invalid(format!("map must be at least 8x8, got {rows}x{cols}")));
    }
    let irf = build_irf(irf, axis)?;
    let pixels = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let params = map_params(rows, cols, idx / cols, idx % cols);
            let g = model_curve(&params, &irf, axis)?;
            let mut rng = derived_rng(seed, idx as u64);
            let histogram = sample_histogram_with(axis, &expected_counts(peak_counts, &g), &mut rng)?;
            Ok(Trial { params, histogram })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialMap { rows, cols, pixels })
}
