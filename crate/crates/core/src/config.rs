//! TOML experiment configuration.
//!
//! A config file describes one synthetic experiment end to end: time axis,
//! IRF, model and prior box, acquisition brightness, sketch design, optional
//! fixed-point path, estimators, trial count or map size, seed and output
//! directory. Every section except `[model]` has defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fisher::{Aggregation, FisherSettings, KnotMode, DEFAULT_EPSILON, DEFAULT_N_GRID};
use crate::fxp::STANDARD_DEPTHS;
use crate::model::{IrfShape, IrfSpec, ModelKind, ParamRanges, TimeAxis};
use crate::synth::{Intensity, TimestampMode};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Generate a `[rows, cols]` radial bi-exponential map instead of random trials.
    #[serde(default)]
    pub map: Option<[usize; 2]>,
    #[serde(default)]
    pub axis: AxisConfig,
    #[serde(default)]
    pub irf: IrfConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub sketch: SketchConfig,
    #[serde(default)]
    pub fxp: FxpConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub n_bins: usize,
    pub window_ns: f64,
}

impl Default for AxisConfig {
    fn default() -> Self {
        Self { n_bins: 256, window_ns: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrfConfig {
    #[serde(default)]
    pub shape: IrfShape,
    pub fwhm_ns: f64,
    pub peak_ns: f64,
}

impl Default for IrfConfig {
    fn default() -> Self {
        Self { shape: IrfShape::Gaussian, fwhm_ns: 0.1, peak_ns: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub tau: Option<[f64; 2]>,
    pub tau1: Option<[f64; 2]>,
    pub tau2: Option<[f64; 2]>,
    pub alpha1: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Expected count at the decay maximum (`A`).
    pub peak_counts: Option<f64>,
    /// Expected photons per pixel; alternative to `peak_counts`.
    pub total_photons: Option<f64>,
    /// Also write one timestamp file per pixel.
    #[serde(default)]
    pub timestamps: bool,
    #[serde(default)]
    pub jitter: Jitter,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { peak_counts: Some(500.0), total_photons: None, timestamps: false, jitter: Jitter::BinCenter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Jitter {
    #[default]
    BinCenter,
    Uniform,
}

impl From<Jitter> for TimestampMode {
    fn from(j: Jitter) -> Self {
        match j {
            Jitter::BinCenter => TimestampMode::BinCenter,
            Jitter::Uniform => TimestampMode::UniformJitter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotKind {
    #[default]
    Fisher,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub m: usize,
    #[serde(default)]
    pub knots: KnotKind,
    #[serde(default, with = "aggregation_serde")]
    pub aggregation: Aggregation,
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_fisher_seed")]
    pub fisher_seed: u64,
}

fn default_n_grid() -> usize {
    DEFAULT_N_GRID
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_fisher_seed() -> u64 {
    FisherSettings::default().seed
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            m: 4,
            knots: KnotKind::Fisher,
            aggregation: Aggregation::Average,
            n_grid: DEFAULT_N_GRID,
            epsilon: DEFAULT_EPSILON,
            fisher_seed: default_fisher_seed(),
        }
    }
}

mod aggregation_serde {
    use serde::{Deserialize, Deserializer};

    use crate::fisher::Aggregation;

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Aggregation, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxpConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Depths swept by the LUT benchmark.
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
}

fn default_depth() -> usize {
    128
}

fn default_depths() -> Vec<usize> {
    STANDARD_DEPTHS.to_vec()
}

impl Default for FxpConfig {
    fn default() -> Self {
        Self { enabled: false, depth: default_depth(), depths: default_depths() }
    }
}

/// Estimator families selectable in `[fit]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Sketch,
    Nlsf,
    Mle,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_estimators")]
    pub methods: Vec<Estimator>,
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Sketch, Estimator::Nlsf, Estimator::Mle]
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { methods: default_estimators() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Check cross-field consistency; every failure is a config error.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        let axis = self.time_axis().map_err(cfg)?;
        self.irf_spec().validate(&axis).map_err(cfg)?;
        self.ranges()?;
        self.intensity()?;
        if self.sketch.m < 2 {
            return Err(Error::Config(format!("sketch.m must be at least 2, got {}", self.sketch.m)));
        }
        if self.sketch.n_grid == 0 || !(self.sketch.epsilon > 0.0) {
            return Err(Error::Config("sketch.n_grid must be positive and sketch.epsilon > 0".into()));
        }
        if self.fxp.depth == 0 || self.fxp.depths.contains(&0) {
            return Err(Error::Config("LUT depths must be positive".into()));
        }
        if self.fit.methods.is_empty() {
            return Err(Error::Config("fit.methods is empty".into()));
        }
        match self.map {
            Some([r, c]) => {
                if r < 8 || c < 8 {
                    return Err(Error::Config(format!("map must be at least 8x8, got {r}x{c}")));
                }
                if self.model.kind != ModelKind::Bi {
                    return Err(Error::Config("map experiments use the bi-exponential model".into()));
                }
                if self.acquisition.peak_counts.is_none() {
                    return Err(Error::Config("map experiments need acquisition.peak_counts".into()));
                }
            }
            None if self.trials == 0 => return Err(Error::Config("trials must be positive".into())),
            None => {}
        }
        Ok(())
    }

    pub fn time_axis(&self) -> Result<TimeAxis> {
        TimeAxis::with_window(self.axis.n_bins, self.axis.window_ns)
    }

    pub fn irf_spec(&self) -> IrfSpec {
        IrfSpec { shape: self.irf.shape, fwhm: self.irf.fwhm_ns, peak_time: self.irf.peak_ns }
    }

    pub fn ranges(&self) -> Result<ParamRanges> {
        let m = &self.model;
        let missing = |k: &str| Error::Config(format!("model.{k} is required for the {:?} model", m.kind));
        let r = match m.kind {
            ModelKind::Mono => {
                if m.tau1.is_some() || m.tau2.is_some() || m.alpha1.is_some() {
                    return Err(Error::Config("mono model takes only model.tau".into()));
                }
                let [a, b] = m.tau.ok_or_else(|| missing("tau"))?;
                ParamRanges::mono(a, b)
            }
            ModelKind::Bi => {
                if m.tau.is_some() {
                    return Err(Error::Config("bi model takes tau1, tau2 and alpha1, not tau".into()));
                }
                let t1 = m.tau1.ok_or_else(|| missing("tau1"))?;
                let t2 = m.tau2.ok_or_else(|| missing("tau2"))?;
                let a = m.alpha1.ok_or_else(|| missing("alpha1"))?;
                ParamRanges::bi((t1[0], t1[1]), (t2[0], t2[1]), (a[0], a[1]))
            }
        };
        r.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn intensity(&self) -> Result<Intensity> {
        let a = &self.acquisition;
        let i = match (a.peak_counts, a.total_photons) {
            (Some(p), None) => Intensity::Peak(p),
            (None, Some(t)) => Intensity::Total(t),
            _ => {
                return Err(Error::Config(
                    "acquisition needs exactly one of peak_counts and total_photons".into(),
                ))
            }
        };
        let v = match i {
            Intensity::Peak(v) | Intensity::Total(v) => v,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("acquisition brightness must be positive, got {v}")));
        }
        Ok(i)
    }

    pub fn knot_mode(&self) -> KnotMode {
        match self.sketch.knots {
            KnotKind::Fisher => KnotMode::Fisher(self.sketch.aggregation),
            KnotKind::Uniform => KnotMode::Uniform,
        }
    }

    pub fn fisher_settings(&self) -> FisherSettings {
        FisherSettings {
            n_grid: self.sketch.n_grid,
            epsilon: self.sketch.epsilon,
            aggregation: self.sketch.aggregation,
            seed: self.sketch.fisher_seed,
        }
    }

    /// Number of pixels the config generates.
    pub fn n_pixels(&self) -> usize {
        match self.map {
            Some([r, c]) => r * c,
            None => self.trials,
        }
    }
}
