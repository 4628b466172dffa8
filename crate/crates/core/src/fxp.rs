//! Fixed-point lookup-table sketching, a bit-exact model of a firmware datapath.
//!
//! The window `[0, T)` is cut into `D` cells. Each cell stores the `M` basis
//! values at its centre `(d + 1/2) T / D`, quantized to unsigned Q8.8. A photon
//! at `t` selects cell `floor(t D / T)` (the last cell also takes `t = T`) and
//! its row is added into 64-bit integer accumulators. The only conversion back
//! to real numbers is the final division by 256.

use crate::error::{Error, Result};
use crate::sketch::{SketchVector, SplineBasis};
use crate::synth::TimestampStream;

/// Fractional bits of the Q8.8 format.
pub const FRAC_BITS: u32 = 8;
pub const ONE: u16 = 1 << FRAC_BITS;
/// Depths the firmware study sweeps.
pub const STANDARD_DEPTHS: [usize; 5] = [16, 32, 64, 128, 256];

/// Round-half-away-from-zero Q8.8 quantization, saturating to `u16`.
pub fn quantize_q8_8(x: f64) -> u16 {
    (x * ONE as f64).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn dequantize_q8_8(q: u16) -> f64 {
    q as f64 / ONE as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FxpLut {
    m: usize,
    depth: usize,
    window: f64,
    /// `M x D`, row `i` holds basis `i` across the cells.
    table: Vec<u16>,
}

impl FxpLut {
    pub fn from_raw(m: usize, depth: usize, window: f64, table: Vec<u16>) -> Result<Self> {
        if m == 0 || depth == 0 || table.len() != m * depth {
            return Err(Error::invalid(format!(
                "LUT table of {} words does not match M = {m}, D = {depth}",
                table.len()
            )));
        }
        if !(window.is_finite() && window > 0.0) {
            return Err(Error::invalid("LUT window must be positive"));
        }
        Ok(Self { m, depth, window, table })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn table(&self) -> &[u16] {
        &self.table
    }

    pub fn entry(&self, basis: usize, cell: usize) -> u16 {
        self.table[basis * self.depth + cell]
    }

    pub fn sample_point(&self, cell: usize) -> f64 {
        (cell as f64 + 0.5) * self.window / self.depth as f64
    }

    /// Cell address for a timestamp, clamped into `[0, D - 1]`.
    #[inline]
    pub fn cell_of(&self, t: f64) -> usize {
        let t = t.clamp(0.0, self.window);
        ((t * self.depth as f64 / self.window).floor() as usize).min(self.depth - 1)
    }

    /// Dequantized basis value for a timestamp.
    pub fn lookup(&self, t: f64) -> Vec<f64> {
        let d = self.cell_of(t);
        (0..self.m).map(|i| dequantize_q8_8(self.entry(i, d))).collect()
    }
}

pub fn build_fxp_lut(basis: &SplineBasis, depth: usize, window: f64) -> Result<FxpLut> {
    if depth == 0 {
        return Err(Error::invalid("LUT depth must be positive"));
    }
    if !STANDARD_DEPTHS.contains(&depth) {
        log::warn!("LUT depth {depth} is outside the standard sweep {STANDARD_DEPTHS:?}");
    }
    let m = basis.m();
    let mut table = vec![0u16; m * depth];
    for d in 0..depth {
        let t = (d as f64 + 0.5) * window / depth as f64;
        for (i, v) in basis.eval_sparse(t) {
            if v != 0.0 {
                table[i * depth + d] = quantize_q8_8(v);
            }
        }
    }
    FxpLut::from_raw(m, depth, window, table)
}

/// Integer accumulation of LUT rows over a photon stream.
pub fn fxp_accumulate(lut: &FxpLut, stream: &TimestampStream) -> Result<Vec<u64>> {
    accumulate_into(lut, stream, vec![0u64; lut.m])
}

pub(crate) fn accumulate_into(lut: &FxpLut, stream: &TimestampStream, mut acc: Vec<u64>) -> Result<Vec<u64>> {
    for (p, &t) in stream.times().iter().enumerate() {
        let d = lut.cell_of(t);
        for (i, a) in acc.iter_mut().enumerate() {
            *a = a
                .checked_add(lut.table[i * lut.depth + d] as u64)
                .ok_or(Error::Overflow { photons: p + 1 })?;
        }
    }
    Ok(acc)
}

pub fn fxp_sketch_from_timestamps(lut: &FxpLut, stream: &TimestampStream) -> Result<SketchVector> {
    let acc = fxp_accumulate(lut, stream)?;
    Ok(SketchVector {
        values: acc.iter().map(|&a| a as f64 / ONE as f64).collect(),
        photon_count: stream.len() as u64,
    })
}
