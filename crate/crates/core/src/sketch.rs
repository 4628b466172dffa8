//! Linear B-spline sketches.
//!
//! Basis `i` (for `i = 0..M`) is the triangle on knots `(xi_i, xi_{i+1}, xi_{i+2})`:
//! it rises linearly on `[xi_i, xi_{i+1})`, falls on `[xi_{i+1}, xi_{i+2})` and is
//! zero elsewhere. Inputs are clamped to `[xi_0, xi_{M+1}]`. Any time point hits
//! at most two bases, so a photon costs one interval lookup and two ramps.
//!
//! The sketch of a photon stream is the sum of the basis vectors of its
//! timestamps. For a histogram the same sketch is `W y`, where column `k` of `W`
//! is the basis vector at bin centre `t_k`.

use crate::error::{Error, Result};
use crate::fisher::KnotSet;
use crate::model::TimeAxis;
use crate::synth::{Histogram, TimestampStream};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: KnotSet,
}

impl SplineBasis {
    pub fn new(knots: KnotSet) -> Self {
        Self { knots }
    }

    pub fn m(&self) -> usize {
        self.knots.m()
    }

    pub fn knots(&self) -> &KnotSet {
        &self.knots
    }

    /// The (at most two) nonzero bases at `t` as `(index, value)` pairs.
    #[inline]
    pub fn eval_sparse(&self, t: f64) -> [(usize, f64); 2] {
        let xi = self.knots.boundaries();
        let m = xi.len() - 2;
        let t = t.clamp(xi[0], xi[m + 1]);
        // interval j with xi_j <= t < xi_{j+1}; t == xi_{M+1} falls past the last one
        let j = xi.partition_point(|&x| x <= t) - 1;
        if j > m {
            return [(0, 0.0), (0, 0.0)];
        }
        let (a, b) = (xi[j], xi[j + 1]);
        let width = b - a;
        let rising = if j < m { (j, (t - a) / width) } else { (0, 0.0) };
        let falling = if j >= 1 { (j - 1, (b - t) / width) } else { (0, 0.0) };
        [rising, falling]
    }

    /// Dense basis vector at `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.m()];
        for (i, x) in self.eval_sparse(t) {
            v[i] += x;
        }
        v
    }
}

/// Accumulated sketch of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchVector {
    pub values: Vec<f64>,
    pub photon_count: u64,
}

impl SketchVector {
    pub fn zeros(m: usize) -> Self {
        Self { values: vec![0.0; m], photon_count: 0 }
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    /// Elementwise sum of two sketches.
    pub fn combined(&self, other: &SketchVector) -> Result<SketchVector> {
        if self.m() != other.m() {
            return Err(Error::invalid("sketch dimensions differ"));
        }
        Ok(SketchVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            photon_count: self.photon_count + other.photon_count,
        })
    }
}

/// Streaming accumulator: `M` running sums, updated once per photon.
#[derive(Debug, Clone)]
pub struct SketchAccumulator<'a> {
    basis: &'a SplineBasis,
    sums: Vec<f64>,
    photons: u64,
}

impl<'a> SketchAccumulator<'a> {
    pub fn new(basis: &'a SplineBasis) -> Self {
        Self { basis, sums: vec![0.0; basis.m()], photons: 0 }
    }

    #[inline]
    pub fn push(&mut self, t: f64) {
        for (i, v) in self.basis.eval_sparse(t) {
            self.sums[i] += v;
        }
        self.photons += 1;
    }

    pub fn finish(self) -> SketchVector {
        SketchVector { values: self.sums, photon_count: self.photons }
    }
}

pub fn sketch_from_timestamps(basis: &SplineBasis, stream: &TimestampStream) -> SketchVector {
    let mut acc = SketchAccumulator::new(basis);
    for &t in stream.times() {
        acc.push(t);
    }
    acc.finish()
}

/// `M x N` projection from histograms to sketches, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    m: usize,
    n: usize,
    entries: Vec<f64>,
}

impl SketchMatrix {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.n + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `W x` for an arbitrary length-`N` vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::invalid(format!(
                "vector of length {} does not match sketch matrix with {} columns",
                x.len(),
                self.n
            )));
        }
        Ok((0..self.m)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect())
    }
}

pub fn sketch_matrix(basis: &SplineBasis, axis: &TimeAxis) -> SketchMatrix {
    let (m, n) = (basis.m(), axis.n_bins());
    let mut entries = vec![0.0; m * n];
    for k in 0..n {
        for (i, v) in basis.eval_sparse(axis.center(k)) {
            entries[i * n + k] += v;
        }
    }
    SketchMatrix { m, n, entries }
}

pub fn sketch_from_histogram(w: &SketchMatrix, h: &Histogram) -> Result<SketchVector> {
    Ok(SketchVector { values: w.apply(&h.as_f64())?, photon_count: h.total() })
}

/// Unit-L1 normalization of a sketch.
pub fn normalize_sketch(s: &SketchVector) -> Result<Vec<f64>> {
    normalize_l1(&s.values)
}

pub(crate) fn normalize_l1(v: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::invalid("cannot normalize a sketch with zero total"));
    }
    Ok(v.iter().map(|x| x / total).collect())
}
