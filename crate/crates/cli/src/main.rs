//! `tcspc-sketch`: batch pipelines over synthetic TCSPC data.
//!
//! Every command reads one TOML experiment config and works inside its output
//! directory, so `gen → knots → sketch → fit → eval` compose by file name.
//! Exit status: 0 ok, 2 config error, 3 data error, 4 numeric error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use tcspc_sketch::config::{Estimator, ExperimentConfig, KnotKind};
use tcspc_sketch::estimate::{phasor_mono_lifetime, FitResult};
use tcspc_sketch::experiment::{fit_histograms, fit_sketches, param_columns, param_columns_of, Method, Scenario};
use tcspc_sketch::fisher::{Aggregation, KnotMode};
use tcspc_sketch::fxp::{build_fxp_lut, fxp_sketch_from_timestamps};
use tcspc_sketch::io::{self, PhasorRow, ResultRow, SketchFile, SketchPath, TruthRow};
use tcspc_sketch::metrics::{assemble_report, RunResult};
use tcspc_sketch::model::{build_irf, DecayParams, TimeAxis};
use tcspc_sketch::phasor::{irf_correct_phasor, phasor_from_curve, phasor_from_histogram};
use tcspc_sketch::sketch::{sketch_from_histogram, sketch_from_timestamps, sketch_matrix, SketchVector, SplineBasis};
use tcspc_sketch::synth::{
    derived_seed, generate_spatial_map, generate_trials, histogram_to_timestamps, Histogram, Intensity,
    TimestampMode, TimestampStream, Trial,
};
use tcspc_sketch::{Error, ErrorClass};

const HISTOGRAMS: &str = "histograms.csv";
const TRUTH: &str = "truth.csv";
const TIMESTAMP_DIR: &str = "timestamps";
const REPORT: &str = "report.csv";
const PHASORS: &str = "phasor.csv";
const LUT_BENCH: &str = "lut_bench.csv";
// keeps jitter draws off the photon-sampling streams
const JITTER_SALT: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Parser)]
#[command(name = "tcspc-sketch", version, about = "Fisher-information spline sketches for TCSPC lifetime estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the trial count (ignored for map configs).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Override the sketch dimension.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Override the knot placement: fisher or uniform.
    #[arg(long, global = true, value_parser = parse_knot_kind)]
    knot_mode: Option<KnotKind>,
    /// Override the Fisher aggregation: average or max.
    #[arg(long, global = true)]
    aggregation: Option<Aggregation>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic histograms, ground truth and optional timestamp files.
    Gen,
    /// Design knots and write the knot file.
    Knots,
    /// Accumulate sketches from histograms or timestamp files.
    Sketch {
        /// Knot file (default: the config's knot file in the output directory).
        #[arg(long)]
        knots: Option<PathBuf>,
        /// Histogram CSV (default: histograms.csv in the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Read per-pixel timestamp files from this directory instead.
        #[arg(long)]
        timestamps: Option<PathBuf>,
        /// Use the fixed-point LUT path at this depth.
        #[arg(long, conflicts_with = "flp")]
        fxp_depth: Option<usize>,
        /// Force the floating-point path.
        #[arg(long)]
        flp: bool,
    },
    /// Fit every pixel with the configured estimators.
    Fit {
        /// Sketch CSV for the sketch estimator.
        #[arg(long)]
        sketches: Option<PathBuf>,
        /// Knot file matching the sketches.
        #[arg(long)]
        knots: Option<PathBuf>,
        /// Histogram CSV for the histogram estimators.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Estimators to run, overriding the config.
        #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
        methods: Option<Vec<Estimator>>,
    },
    /// Score results against ground truth.
    Eval {
        /// Results CSVs named results_<method>.csv (default: all in the output directory).
        #[arg(long, num_args = 1..)]
        results: Vec<PathBuf>,
        /// Ground-truth CSV (default: truth.csv in the output directory).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Raw and IRF-corrected phasors per pixel.
    Phasor {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        harmonic: u32,
    },
    /// Sweep the fixed-point LUT depth against the floating-point baseline.
    LutBench,
}

fn parse_knot_kind(s: &str) -> std::result::Result<KnotKind, String> {
    match s {
        "fisher" => Ok(KnotKind::Fisher),
        "uniform" => Ok(KnotKind::Uniform),
        _ => Err(format!("expected fisher or uniform, got `{s}`")),
    }
}

fn parse_estimator(s: &str) -> std::result::Result<Estimator, String> {
    match s {
        "sketch" => Ok(Estimator::Sketch),
        "nlsf" => Ok(Estimator::Nlsf),
        "mle" => Ok(Estimator::Mle),
        _ => Err(format!("expected sketch, nlsf or mle, got `{s}`")),
    }
}

/// Config with command-line overrides applied (flags win).
fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let path = c.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(m) = c.m {
        cfg.sketch.m = m;
    }
    if let Some(k) = c.knot_mode {
        cfg.sketch.knots = k;
    }
    if let Some(a) = c.aggregation {
        cfg.sketch.aggregation = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(Error::from).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn knot_file_name(mode: KnotMode) -> String {
    format!("knots_{mode}.csv")
}

fn sketch_file_name(mode: KnotMode, path: SketchPath) -> String {
    format!("sketches_{}.csv", Method::Sketch { knots: mode, path }.to_string().trim_start_matches("sketch-"))
}

fn results_file_name(method: &Method) -> String {
    format!("results_{method}.csv")
}

fn timestamp_file(dir: &Path, pixel: usize) -> PathBuf {
    dir.join(format!("pixel_{pixel:06}.skts"))
}

fn configured_path(cfg: &ExperimentConfig) -> SketchPath {
    if cfg.fxp.enabled {
        SketchPath::Fixed { depth: cfg.fxp.depth }
    } else {
        SketchPath::Float
    }
}

fn generate(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Vec<Trial>> {
    Ok(match cfg.map {
        Some([rows, cols]) => {
            let Intensity::Peak(a) = scenario.intensity else { bail!(Error::Config("maps need peak_counts".into())) };
            generate_spatial_map(&scenario.axis, &scenario.irf, a, (rows, cols), cfg.seed)?.pixels
        }
        None => generate_trials(&scenario.ranges, scenario.intensity, &scenario.irf, &scenario.axis, cfg.trials, cfg.seed)?,
    })
}

fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let trials = generate(cfg, &scenario)?;
    let hists: Vec<Histogram> = trials.iter().map(|t| t.histogram.clone()).collect();
    io::write_histograms(&dir.join(HISTOGRAMS), &scenario.axis, &hists)?;
    let truth: Vec<TruthRow> = trials.iter().enumerate().map(|(i, t)| TruthRow::new(i, &t.params)).collect();
    io::write_rows(&dir.join(TRUTH), &truth)?;
    if cfg.acquisition.timestamps {
        let ts = dir.join(TIMESTAMP_DIR);
        fs::create_dir_all(&ts).map_err(Error::from)?;
        let mode: TimestampMode = cfg.acquisition.jitter.into();
        for (i, h) in hists.iter().enumerate() {
            let seed = derived_seed(cfg.seed ^ JITTER_SALT, i as u64);
            io::write_timestamps(&timestamp_file(&ts, i), &histogram_to_timestamps(h, mode, seed))?;
        }
    }
    println!("wrote {} pixels to {}", trials.len(), dir.display());
    Ok(())
}

fn cmd_knots(cfg: &ExperimentConfig) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let mode = cfg.knot_mode();
    let knots = scenario.knots(mode, cfg.sketch.m)?;
    let path = dir.join(knot_file_name(mode));
    io::write_knots(&path, &knots, mode)?;
    println!("{}: {:?}", path.display(), knots.boundaries());
    Ok(())
}

/// Timestamp files of a directory in pixel order.
fn read_timestamp_dir(dir: &Path, window: f64) -> Result<Vec<TimestampStream>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()).map_err(Error::from))
        .collect::<std::result::Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "skts"));
    files.sort();
    files.iter().map(|p| Ok(io::read_timestamps(p, window)?)).collect()
}

fn cmd_sketch(
    cfg: &ExperimentConfig,
    knots: Option<PathBuf>,
    input: Option<PathBuf>,
    timestamps: Option<PathBuf>,
    fxp_depth: Option<usize>,
    flp: bool,
) -> Result<()> {
    let dir = out_dir(cfg)?;
    let knot_path = knots.unwrap_or_else(|| dir.join(knot_file_name(cfg.knot_mode())));
    let (knots, mode) = io::read_knots(&knot_path).with_context(|| format!("knot file {}", knot_path.display()))?;
    let basis = SplineBasis::new(knots);
    let path = match (fxp_depth, flp) {
        (Some(d), _) => SketchPath::Fixed { depth: d },
        (None, true) => SketchPath::Float,
        (None, false) => configured_path(cfg),
    };
    let window = cfg.axis.window_ns;
    let lut = match path {
        SketchPath::Fixed { depth } => {
            let lut = build_fxp_lut(&basis, depth, window)?;
            io::write_lut(&dir.join(format!("lut_{mode}_D{depth}.bin")), &lut)?;
            Some(lut)
        }
        SketchPath::Float => None,
    };
    let sketches: Vec<SketchVector> = if let Some(ts) = timestamps {
        let streams = read_timestamp_dir(&ts, window)?;
        info!("sketching {} timestamp files", streams.len());
        match &lut {
            Some(lut) => streams.iter().map(|s| fxp_sketch_from_timestamps(lut, s)).collect::<Result<_, _>>()?,
            None => streams.iter().map(|s| sketch_from_timestamps(&basis, s)).collect(),
        }
    } else {
        let input = input.unwrap_or_else(|| dir.join(HISTOGRAMS));
        let (axis, hists) = io::read_histograms(&input).with_context(|| format!("histograms {}", input.display()))?;
        check_window(&axis, cfg)?;
        match &lut {
            Some(lut) => hists
                .iter()
                .map(|h| fxp_sketch_from_timestamps(lut, &histogram_to_timestamps(h, TimestampMode::BinCenter, 0)))
                .collect::<Result<_, _>>()?,
            None => {
                let w = sketch_matrix(&basis, &axis);
                hists.iter().map(|h| sketch_from_histogram(&w, h)).collect::<Result<_, _>>()?
            }
        }
    };
    let out = dir.join(sketch_file_name(mode, path));
    let file = SketchFile { m: basis.m(), knot_path: mode.to_string(), path, sketches };
    io::write_sketches(&out, &file)?;
    println!("wrote {} sketches to {}", file.sketches.len(), out.display());
    Ok(())
}

fn check_window(axis: &TimeAxis, cfg: &ExperimentConfig) -> Result<()> {
    if (axis.window() - cfg.axis.window_ns).abs() > 1e-9 * cfg.axis.window_ns {
        bail!(Error::InvalidInput(format!(
            "data window {} ns differs from the configured {} ns",
            axis.window(),
            cfg.axis.window_ns
        )));
    }
    Ok(())
}

fn write_results(dir: &Path, method: &Method, fits: &[FitResult]) -> Result<()> {
    let rows: Vec<ResultRow> = fits.iter().enumerate().map(|(i, f)| ResultRow::from_fit(i, f)).collect();
    let path = dir.join(results_file_name(method));
    io::write_rows(&path, &rows)?;
    let failed = fits.iter().filter(|f| !f.converged).count();
    println!("{method}: {} pixels ({failed} not converged) -> {}", fits.len(), path.display());
    Ok(())
}

fn cmd_fit(
    cfg: &ExperimentConfig,
    sketches: Option<PathBuf>,
    knots: Option<PathBuf>,
    input: Option<PathBuf>,
    methods: Option<Vec<Estimator>>,
) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let mut methods = methods.unwrap_or_else(|| cfg.fit.methods.clone());
    methods.sort();
    methods.dedup();
    for est in methods {
        match est {
            Estimator::Sketch => {
                let path = sketches
                    .clone()
                    .unwrap_or_else(|| dir.join(sketch_file_name(cfg.knot_mode(), configured_path(cfg))));
                let file = io::read_sketches(&path).with_context(|| format!("sketch file {}", path.display()))?;
                let mode: Method = format!("sketch-{}", file.knot_path).parse()?;
                let Method::Sketch { knots: mode, .. } = mode else { unreachable!() };
                let knot_path = knots.clone().unwrap_or_else(|| dir.join(knot_file_name(mode)));
                let (knot_set, _) = io::read_knots(&knot_path).with_context(|| format!("knot file {}", knot_path.display()))?;
                if knot_set.m() != file.m {
                    bail!(Error::InvalidInput(format!(
                        "sketches have M = {} but {} has M = {}",
                        file.m,
                        knot_path.display(),
                        knot_set.m()
                    )));
                }
                let ctx = scenario.sketch_context(knot_set)?;
                let fits = fit_sketches(&ctx, &file.sketches)?;
                write_results(&dir, &Method::Sketch { knots: mode, path: file.path }, &fits)?;
            }
            Estimator::Nlsf | Estimator::Mle => {
                let input = input.clone().unwrap_or_else(|| dir.join(HISTOGRAMS));
                let (axis, hists) = io::read_histograms(&input).with_context(|| format!("histograms {}", input.display()))?;
                let scenario = Scenario { axis, ..scenario.clone() };
                let method = if est == Estimator::Nlsf { Method::Nlsf } else { Method::Mle };
                let refs: Vec<&Histogram> = hists.iter().collect();
                let fits = fit_histograms(&scenario.histogram_context()?, &refs, method)?;
                write_results(&dir, &method, &fits)?;
            }
        }
    }
    Ok(())
}

fn method_of_results(path: &Path) -> Result<Method> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let name = stem
        .strip_prefix("results_")
        .ok_or_else(|| Error::InvalidInput(format!("{} is not named results_<method>.csv", path.display())))?;
    Ok(name.parse()?)
}

fn cmd_eval(cfg: &ExperimentConfig, results: Vec<PathBuf>, truth: Option<PathBuf>) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let results = if results.is_empty() {
        let mut v: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("results_") && n.ends_with(".csv"))
            })
            .collect();
        v.sort();
        v
    } else {
        results
    };
    if results.is_empty() {
        bail!(Error::InsufficientData { needed: 1, got: 0 });
    }
    let truth_path = truth.unwrap_or_else(|| dir.join(TRUTH));
    let truth: Vec<TruthRow> = io::read_rows(&truth_path).with_context(|| format!("truth {}", truth_path.display()))?;
    let truth: Vec<DecayParams> = truth.iter().map(TruthRow::params).collect();
    let mut runs = Vec::new();
    for path in &results {
        let method = method_of_results(path)?;
        let rows: Vec<ResultRow> = io::read_rows(path).with_context(|| format!("results {}", path.display()))?;
        if rows.len() != truth.len() {
            bail!(Error::InvalidInput(format!(
                "{} has {} rows but the truth table has {}",
                path.display(),
                rows.len(),
                truth.len()
            )));
        }
        let mut rows = rows;
        rows.sort_by_key(|r| r.pixel_id);
        let est: Vec<DecayParams> = rows.iter().map(ResultRow::params).collect();
        if est.iter().zip(&truth).any(|(e, t)| e.kind() != t.kind()) {
            bail!(Error::InvalidInput(format!("{} and the truth table use different models", path.display())));
        }
        runs.push(RunResult {
            key: scenario.report_key(&method, Some(cfg.sketch.m)),
            columns: param_columns_of(&est, &truth),
            map_shape: cfg.map.map(|[r, c]| (r, c)),
        });
    }
    let report = assemble_report(&runs)?;
    let path = dir.join(REPORT);
    io::write_rows(&path, &report)?;
    for r in &report {
        println!("{:<28} {:<9} MAE={:.4} RMSE={:.4} R2={:.4} bias={:+.4}", r.method, r.parameter, r.mae, r.rmse, r.r_squared, r.bias);
    }
    println!("report -> {}", path.display());
    Ok(())
}

fn cmd_phasor(cfg: &ExperimentConfig, input: Option<PathBuf>, harmonic: u32) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let input = input.unwrap_or_else(|| dir.join(HISTOGRAMS));
    let (axis, hists) = io::read_histograms(&input).with_context(|| format!("histograms {}", input.display()))?;
    check_window(&axis, cfg)?;
    let irf = phasor_from_curve(&build_irf(&scenario.irf, &axis)?, &axis, harmonic)?;
    let mut rows = Vec::with_capacity(hists.len());
    for (i, h) in hists.iter().enumerate() {
        if h.total() == 0 {
            warn!("pixel {i} has no photons; skipped");
            continue;
        }
        let raw = phasor_from_histogram(h, harmonic)?;
        let cor = irf_correct_phasor(&raw, &irf)?;
        let tau_phase = if harmonic == 1 { phasor_mono_lifetime(&cor, axis.window()).ok() } else { None };
        rows.push(PhasorRow {
            pixel_id: i,
            photons: raw.photon_count,
            g: raw.g,
            s: raw.s,
            g_corrected: cor.g,
            s_corrected: cor.s,
            tau_phase,
        });
    }
    let path = dir.join(PHASORS);
    io::write_rows(&path, &rows)?;
    println!("wrote {} phasors to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_lut_bench(cfg: &ExperimentConfig) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let trials = generate(cfg, &scenario)?;
    let truths: Vec<DecayParams> = trials.iter().map(|t| t.params).collect();
    let mode = cfg.knot_mode();
    let m = cfg.sketch.m;
    let mut methods = vec![Method::sketch(mode)];
    methods.extend(cfg.fxp.depths.iter().map(|&d| Method::fixed_point(mode, d)));
    let mut runs = Vec::new();
    for method in methods {
        info!("running {method}");
        let fits = scenario.run(method, m, &trials)?;
        runs.push(RunResult {
            key: scenario.report_key(&method, Some(m)),
            columns: param_columns(&fits, &truths),
            map_shape: cfg.map.map(|[r, c]| (r, c)),
        });
    }
    let report = assemble_report(&runs)?;
    let path = dir.join(LUT_BENCH);
    io::write_rows(&path, &report)?;
    for r in report.iter().filter(|r| r.parameter == "mean_tau") {
        let depth = r.lut_depth.map_or("FLP".to_string(), |d| format!("D={d}"));
        let ssim = r.ssim.map_or(String::new(), |s| format!(" SSIM={s:.4}"));
        let acc = r.relative_accuracy.map_or(String::new(), |a| format!(" rel.acc={a:.4}"));
        println!("{depth:<6} <tau> MAE={:.4} RMSE={:.4}{ssim}{acc}", r.mae, r.rmse);
    }
    println!("table -> {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        if n == 0 {
            bail!(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Gen => cmd_gen(&cfg),
        Command::Knots => cmd_knots(&cfg),
        Command::Sketch { knots, input, timestamps, fxp_depth, flp } => cmd_sketch(&cfg, knots, input, timestamps, fxp_depth, flp),
        Command::Fit { sketches, knots, input, methods } => cmd_fit(&cfg, sketches, knots, input, methods),
        Command::Eval { results, truth } => cmd_eval(&cfg, results, truth),
        Command::Phasor { input, harmonic } => cmd_phasor(&cfg, input, harmonic),
        Command::LutBench => cmd_lut_bench(&cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Numeric) => 4,
        Some(ErrorClass::Data) | None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
