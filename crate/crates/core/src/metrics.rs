//! Accuracy metrics and report assembly.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Error statistics of one method on one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub r_squared: f64,
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// Map-level scores; `None` for unstructured trial sets.
    pub ssim: Option<f64>,
    pub relative_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

fn check_pair(e: &[f64], t: &[f64]) -> Result<()> {
    if e.len() != t.len() {
        return Err(Error::invalid(format!("{} estimates for {} truths", e.len(), t.len())));
    }
    if e.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths)?;
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / estimates.len() as f64)
}

pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths)?;
    let mse = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse.sqrt())
}

/// MAE, RMSE and `R² = 1 − SS_res / SS_tot`.
pub fn scalar_metrics(estimates: &[f64], truths: &[f64]) -> Result<ScalarMetrics> {
    check_pair(estimates, truths)?;
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::NumericDegenerate("R² undefined for constant truths".into()));
    }
    let ss_res: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum();
    Ok(ScalarMetrics {
        mae: mae(estimates, truths)?,
        rmse: (ss_res / n).sqrt(),
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Mean difference and ±1.96 sample-SD limits of agreement.
pub fn bland_altman(estimates: &[f64], truths: &[f64]) -> Result<BlandAltman> {
    check_pair(estimates, truths)?;
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
    let bias = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|x| (x - bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(BlandAltman { bias, loa_low: bias - 1.96 * sd, loa_high: bias + 1.96 * sd })
}

/// Row-major 2-D grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Map2 {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!("{} values for a {rows}x{cols} map", values.len())));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo
    }
}

pub const SSIM_WINDOW: usize = 8;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM over all 8×8 windows (stride 1), dynamic range from the ground truth.
pub fn ssim_map(estimate: &Map2, truth: &Map2) -> Result<f64> {
    if estimate.rows != truth.rows || estimate.cols != truth.cols {
        return Err(Error::invalid("SSIM maps differ in shape"));
    }
    if truth.rows < SSIM_WINDOW || truth.cols < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs maps of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let l = truth.range();
    if !(l > 0.0) {
        return Err(Error::invalid("SSIM dynamic range is zero for a constant ground truth"));
    }
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=truth.rows - SSIM_WINDOW {
        for c0 in 0..=truth.cols - SSIM_WINDOW {
            let (mut sx, mut sy) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sx += estimate.get(r, c);
                    sy += truth.get(r, c);
                }
            }
            let (mx, my) = (sx / np, sy / np);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let dx = estimate.get(r, c) - mx;
                    let dy = truth.get(r, c) - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            let (vx, vy, cxy) = (vx / np, vy / np, cxy / np);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `1 − RMSE / range`.
pub fn relative_accuracy(estimates: &[f64], truths: &[f64], range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::invalid("relative accuracy needs a positive range"));
    }
    Ok(1.0 - rmse(estimates, truths)? / range)
}

/// Full report on mean lifetimes; map scores when `shape` is given.
pub fn metric_report(estimates: &[f64], truths: &[f64], shape: Option<(usize, usize)>) -> Result<MetricReport> {
    let s = scalar_metrics(estimates, truths)?;
    let ba = bland_altman(estimates, truths)?;
    let (ssim, relative_accuracy) = match shape {
        Some((rows, cols)) => {
            let gt = Map2::new(rows, cols, truths.to_vec())?;
            let est = Map2::new(rows, cols, estimates.to_vec())?;
            (Some(ssim_map(&est, &gt)?), Some(self::relative_accuracy(estimates, truths, gt.range())?))
        }
        None => (None, None),
    };
    Ok(MetricReport {
        mae: s.mae,
        rmse: s.rmse,
        r_squared: s.r_squared,
        bias: ba.bias,
        loa_low: ba.loa_low,
        loa_high: ba.loa_high,
        ssim,
        relative_accuracy,
    })
}

/// Configuration coordinates a report row is keyed by.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize)]
pub struct ReportKey {
    pub method: String,
    pub m: Option<usize>,
    pub peak_counts: f64,
    pub irf_fwhm: f64,
    pub n_bins: usize,
    pub lut_depth: Option<usize>,
}

/// One (estimates, truths) run to be summarized.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub key: ReportKey,
    /// Per-parameter estimates and truths, e.g. `tau1`, `alpha1`, `mean_tau`.
    pub columns: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    pub map_shape: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub m: Option<usize>,
    pub peak_counts: f64,
    pub irf_fwhm: f64,
    pub n_bins: usize,
    pub lut_depth: Option<usize>,
    pub parameter: String,
    pub mae: f64,
    pub rmse: f64,
    pub r_squared: f64,
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub ssim: Option<f64>,
    pub relative_accuracy: Option<f64>,
}

/// Summarize runs into report rows, sorted by key then parameter. Map scores are
/// only computed for the mean lifetime.
pub fn assemble_report(runs: &[RunResult]) -> Result<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rows = Vec::new();
    for run in runs {
        for (param, (est, truth)) in &run.columns {
            let shape = if param == "mean_tau" { run.map_shape } else { None };
            // constant truths (e.g. a fixed-parameter column) have no R²
            let r = match metric_report(est, truth, shape) {
                Ok(r) => r,
                Err(Error::NumericDegenerate(_)) => {
                    let ba = bland_altman(est, truth)?;
                    MetricReport {
                        mae: mae(est, truth)?,
                        rmse: rmse(est, truth)?,
                        r_squared: f64::NAN,
                        bias: ba.bias,
                        loa_low: ba.loa_low,
                        loa_high: ba.loa_high,
                        ssim: None,
                        relative_accuracy: None,
                    }
                }
                Err(e) => return Err(e),
            };
            let k = &run.key;
            rows.push(ReportRow {
                method: k.method.clone(),
                m: k.m,
                peak_counts: k.peak_counts,
                irf_fwhm: k.irf_fwhm,
                n_bins: k.n_bins,
                lut_depth: k.lut_depth,
                parameter: param.clone(),
                mae: r.mae,
                rmse: r.rmse,
                r_squared: r.r_squared,
                bias: r.bias,
                loa_low: r.loa_low,
                loa_high: r.loa_high,
                ssim: r.ssim,
                relative_accuracy: r.relative_accuracy,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn perfect_estimates() {
        let t = [1.0, 2.0, 3.5, 0.4];
        let s = scalar_metrics(&t, &t).unwrap();
        assert_eq!((s.mae, s.rmse, s.r_squared), (0.0, 0.0, 1.0));
        let b = bland_altman(&t, &t).unwrap();
        assert_eq!((b.bias, b.loa_low, b.loa_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let t = [1.0, 2.0, 3.0];
        let e = [1.1, 2.1, 3.1];
        let s = scalar_metrics(&e, &t).unwrap();
        assert!((s.mae - 0.1).abs() < 1e-12 && (s.rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(scalar_metrics(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(scalar_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(matches!(bland_altman(&[1.0], &[1.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn bland_altman_gaussian_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.5, 0.1).unwrap();
        let e: Vec<f64> = (0..100_000).map(|_| n.sample(&mut rng)).collect();
        let b = bland_altman(&e, &vec![0.0; e.len()]).unwrap();
        assert!((b.bias - 0.5).abs() < 2e-3);
        assert!((b.loa_low - 0.304).abs() < 3e-3 && (b.loa_high - 0.696).abs() < 3e-3);
    }

    fn ramp(rows: usize, cols: usize) -> Map2 {
        Map2::new(rows, cols, (0..rows * cols).map(|i| ((i / cols) as f64).sin() + (i % cols) as f64 * 0.3).collect()).unwrap()
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let m = ramp(12, 10);
        assert_eq!(ssim_map(&m, &m).unwrap(), 1.0);
        // contrast inverted about the mid-level, same luminance
        let (lo, hi) = m.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let neg = Map2::new(12, 10, m.values.iter().map(|v| lo + hi - v).collect()).unwrap();
        assert!(ssim_map(&neg, &m).unwrap() < 0.1);
        assert!(ssim_map(&ramp(12, 9), &m).is_err());
        assert!(ssim_map(&Map2::new(8, 8, vec![1.0; 64]).unwrap(), &Map2::new(8, 8, vec![1.0; 64]).unwrap()).is_err());
    }

    #[test]
    fn relative_accuracy_edges() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(relative_accuracy(&t, &t, 2.0).unwrap(), 1.0);
        let e = [2.0, 3.0, 4.0];
        assert_eq!(relative_accuracy(&e, &t, 1.0).unwrap(), 0.0);
        assert!(relative_accuracy(&e, &t, 0.0).is_err());
    }

    #[test]
    fn report_needs_runs() {
        assert!(assemble_report(&[]).is_err());
    }

    #[test]
    fn report_rows_per_parameter() {
        let mut columns = BTreeMap::new();
        columns.insert("mean_tau".to_string(), (vec![1.0, 2.1, 2.9], vec![1.0, 2.0, 3.0]));
        columns.insert("alpha1".to_string(), (vec![0.5, 0.5, 0.4], vec![0.5, 0.5, 0.5]));
        let run = RunResult {
            key: ReportKey { method: "mle".into(), m: None, peak_counts: 500.0, irf_fwhm: 0.1, n_bins: 256, lut_depth: None },
            columns,
            map_shape: None,
        };
        let rows = assemble_report(&[run]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].parameter, "alpha1");
        assert!(rows[0].r_squared.is_nan());
        assert!(rows[1].r_squared > 0.9);
    }
}
