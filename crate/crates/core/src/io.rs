//! On-disk formats: histogram and sketch CSVs, timestamp and LUT binaries,
//! knot files, and per-pixel results/truth tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::fisher::{Aggregation, KnotMode, KnotSet};
use crate::fxp::FxpLut;
use crate::model::{DecayParams, ModelKind, TimeAxis};
use crate::sketch::SketchVector;
use crate::synth::{Histogram, TimestampStream};

pub const TIMESTAMP_MAGIC: &[u8; 4] = b"SKTS";
pub const TIMESTAMP_VERSION: u8 = 1;
pub const LUT_MAGIC: &[u8; 4] = b"SKLU";

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format { what, detail: detail.into() }
}

/// Parse `# k1=v1 k2=v2 ...` into pairs.
fn parse_header(line: &str, what: &'static str) -> Result<Vec<(String, String)>> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| format_err(what, "missing '#' header line"))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format_err(what, format!("bad header field '{kv}'")))
        })
        .collect()
}

fn header_value<'a>(fields: &'a [(String, String)], key: &str, what: &'static str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| format_err(what, format!("header lacks '{key}'")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<T> {
    s.parse().map_err(|_| format_err(what, format!("cannot parse '{s}'")))
}

/// Split a file into its first line and a reader over the rest.
fn open_with_header(path: &Path) -> Result<(String, BufReader<File>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut first = String::new();
    r.read_line(&mut first)?;
    Ok((first, r))
}

// ---- histograms ----------------------------------------------------------

pub fn write_histograms(path: &Path, axis: &TimeAxis, hists: &[Histogram]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# n_bins={} bin_width_ps={}", axis.n_bins(), axis.bin_width() * 1000.0)?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for h in hists {
        if h.axis().n_bins() != axis.n_bins() {
            return Err(Error::invalid("histogram does not match the file axis"));
        }
        csv.write_record(h.counts().iter().map(|c| c.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_histograms(path: &Path) -> Result<(TimeAxis, Vec<Histogram>)> {
    const WHAT: &str = "histogram CSV";
    let (first, rest) = open_with_header(path)?;
    let fields = parse_header(&first, WHAT)?;
    let n: usize = parse_num(header_value(&fields, "n_bins", WHAT)?, WHAT)?;
    let w_ps: f64 = parse_num(header_value(&fields, "bin_width_ps", WHAT)?, WHAT)?;
    let axis = TimeAxis::new(n, w_ps / 1000.0)?;
    let mut csv = csv::ReaderBuilder::new().has_headers(false).from_reader(rest);
    let mut out = Vec::new();
    for (row, rec) in csv.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(format_err(WHAT, format!("row {row} has {} columns, expected {n}", rec.len())));
        }
        let counts = rec.iter().map(|v| parse_num::<u64>(v.trim(), WHAT)).collect::<Result<Vec<_>>>()?;
        out.push(Histogram::new(axis, counts)?);
    }
    Ok((axis, out))
}

// ---- timestamp streams ---------------------------------------------------

pub fn write_timestamps(path: &Path, stream: &TimestampStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TIMESTAMP_MAGIC)?;
    w.write_all(&[TIMESTAMP_VERSION])?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for t in stream.times() {
        w.write_all(&t.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// The binary carries no window; the caller supplies it.
pub fn read_timestamps(path: &Path, window: f64) -> Result<TimestampStream> {
    const WHAT: &str = "timestamp stream";
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 13 || &bytes[..4] != TIMESTAMP_MAGIC {
        return Err(format_err(WHAT, "missing SKTS magic"));
    }
    if bytes[4] != TIMESTAMP_VERSION {
        return Err(format_err(WHAT, format!("unsupported version {}", bytes[4])));
    }
    let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != count * 8 {
        return Err(format_err(WHAT, format!("{count} photons declared, {} bytes of payload", body.len())));
    }
    let times = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    TimestampStream::new(window, times)
}

// ---- knot files ----------------------------------------------------------

pub fn write_knots(path: &Path, knots: &KnotSet, mode: KnotMode) -> Result<()> {
    let (mode_s, agg) = match mode {
        KnotMode::Fisher(a) => ("fisher", a.to_string()),
        KnotMode::Uniform => ("uniform", "none".to_string()),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# M={} mode={mode_s} agg={agg}", knots.m())?;
    for b in knots.boundaries() {
        writeln!(w, "{b:?}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_knots(path: &Path) -> Result<(KnotSet, KnotMode)> {
    const WHAT: &str = "knot file";
    let (first, rest) = open_with_header(path)?;
    let fields = parse_header(&first, WHAT)?;
    let m: usize = parse_num(header_value(&fields, "M", WHAT)?, WHAT)?;
    let mode = match header_value(&fields, "mode", WHAT)? {
        "uniform" => KnotMode::Uniform,
        "fisher" => {
            let agg: Aggregation = header_value(&fields, "agg", WHAT)?
                .parse()
                .map_err(|e: Error| format_err(WHAT, e.to_string()))?;
            KnotMode::Fisher(agg)
        }
        other => return Err(format_err(WHAT, format!("unknown mode '{other}'"))),
    };
    let mut b = Vec::new();
    for line in rest.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        b.push(parse_num::<f64>(line, WHAT)?);
    }
    if b.len() != m + 2 {
        return Err(format_err(WHAT, format!("header says M = {m} but {} boundaries follow", b.len())));
    }
    Ok((KnotSet::new(b)?, mode))
}

// ---- sketches ------------------------------------------------------------

/// Accumulation path recorded in a sketch file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchPath {
    Float,
    Fixed { depth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchFile {
    pub m: usize,
    pub knot_path: String,
    pub path: SketchPath,
    pub sketches: Vec<SketchVector>,
}

pub fn write_sketches(path: &Path, file: &SketchFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (mode, d) = match file.path {
        SketchPath::Float => ("flp", 0),
        SketchPath::Fixed { depth } => ("fxp", depth),
    };
    writeln!(w, "# M={} knots={} path={mode} D={d}", file.m, file.knot_path)?;
    let mut csv = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..file.m).map(|i| format!("s{i}")).collect();
    header.push("photons".into());
    csv.write_record(&header)?;
    for s in &file.sketches {
        if s.m() != file.m {
            return Err(Error::invalid("sketch width does not match the file header"));
        }
        let mut rec: Vec<String> = s.values.iter().map(|v| format!("{v:?}")).collect();
        rec.push(s.photon_count.to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_sketches(path: &Path) -> Result<SketchFile> {
    const WHAT: &str = "sketch CSV";
    let (first, rest) = open_with_header(path)?;
    let fields = parse_header(&first, WHAT)?;
    let m: usize = parse_num(header_value(&fields, "M", WHAT)?, WHAT)?;
    let knot_path = header_value(&fields, "knots", WHAT)?.to_string();
    let d: usize = parse_num(header_value(&fields, "D", WHAT)?, WHAT)?;
    let path = match header_value(&fields, "path", WHAT)? {
        "flp" => SketchPath::Float,
        "fxp" => SketchPath::Fixed { depth: d },
        other => return Err(format_err(WHAT, format!("unknown path '{other}'"))),
    };
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(rest);
    let mut sketches = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        if rec.len() != m + 1 {
            return Err(format_err(WHAT, format!("row has {} columns, expected {}", rec.len(), m + 1)));
        }
        let values = (0..m).map(|i| parse_num::<f64>(&rec[i], WHAT)).collect::<Result<Vec<_>>>()?;
        let photon_count = parse_num::<u64>(&rec[m], WHAT)?;
        sketches.push(SketchVector { values, photon_count });
    }
    Ok(SketchFile { m, knot_path, path, sketches })
}

// ---- LUT dump ------------------------------------------------------------

pub fn write_lut(path: &Path, lut: &FxpLut) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LUT_MAGIC)?;
    w.write_all(&(lut.m() as u32).to_le_bytes())?;
    w.write_all(&(lut.depth() as u32).to_le_bytes())?;
    for v in lut.table() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lut(path: &Path, window: f64) -> Result<FxpLut> {
    const WHAT: &str = "LUT dump";
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != LUT_MAGIC {
        return Err(format_err(WHAT, "missing SKLU magic"));
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != m * d * 2 {
        return Err(format_err(WHAT, format!("M = {m}, D = {d} but {} payload bytes", body.len())));
    }
    let table = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    FxpLut::from_raw(m, d, window, table)
}

// ---- results and truth ---------------------------------------------------

/// One fitted pixel. Mono fits leave `tau2` and `alpha1` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pixel_id: usize,
    pub tau1: f64,
    pub tau2: Option<f64>,
    pub alpha1: Option<f64>,
    pub mean_tau: f64,
    pub amplitude: Option<f64>,
    pub objective: f64,
    pub chi2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ResultRow {
    pub fn from_fit(pixel_id: usize, fit: &FitResult) -> Self {
        let (tau1, tau2, alpha1) = split_params(&fit.params);
        Self {
            pixel_id,
            tau1,
            tau2,
            alpha1,
            mean_tau: fit.mean_lifetime(),
            amplitude: fit.amplitude,
            objective: fit.objective,
            chi2: fit.chi2,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }

    pub fn params(&self) -> DecayParams {
        join_params(self.tau1, self.tau2, self.alpha1)
    }
}

/// Ground truth of one pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub pixel_id: usize,
    pub tau1: f64,
    pub tau2: Option<f64>,
    pub alpha1: Option<f64>,
    pub mean_tau: f64,
}

impl TruthRow {
    pub fn new(pixel_id: usize, params: &DecayParams) -> Self {
        let (tau1, tau2, alpha1) = split_params(params);
        Self { pixel_id, tau1, tau2, alpha1, mean_tau: params.mean_lifetime() }
    }

    pub fn params(&self) -> DecayParams {
        join_params(self.tau1, self.tau2, self.alpha1)
    }
}

fn split_params(p: &DecayParams) -> (f64, Option<f64>, Option<f64>) {
    match *p {
        DecayParams::Mono { tau } => (tau, None, None),
        DecayParams::Bi { tau1, tau2, alpha1 } => (tau1, Some(tau2), Some(alpha1)),
    }
}

fn join_params(tau1: f64, tau2: Option<f64>, alpha1: Option<f64>) -> DecayParams {
    match (tau2, alpha1) {
        (Some(tau2), Some(alpha1)) => DecayParams::bi(tau1, tau2, alpha1),
        _ => DecayParams::mono(tau1),
    }
}

/// Raw and IRF-corrected phasor of one pixel. `tau_phase` is the mono
/// lifetime read from the corrected point, empty when it has no readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorRow {
    pub pixel_id: usize,
    pub photons: u64,
    pub g: f64,
    pub s: f64,
    pub g_corrected: f64,
    pub s_corrected: f64,
    pub tau_phase: Option<f64>,
}

/// Kind implied by a table's rows (mono when any row lacks `tau2`).
pub fn rows_kind<'a>(tau2: impl IntoIterator<Item = &'a Option<f64>>) -> ModelKind {
    if tau2.into_iter().all(Option::is_some) {
        ModelKind::Bi
    } else {
        ModelKind::Mono
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
