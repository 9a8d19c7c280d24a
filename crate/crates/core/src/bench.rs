//! Experiment front end: config files, RMSE sweeps, standalone tilt
//! calibration, and CSV emission.
//!
//! Configs are flat `key = value` text with `#` comments. Unknown keys are
//! rejected with their line number, every invariant is re-checked at parse
//! time, and a parsed config serializes back to an equivalent file. All
//! randomness flows from the base seed through keyed substreams, so any
//! command rerun with the same config and seed reproduces every numeric
//! output except wall-clock times bit for bit.

use crate::error::{Error, Result};
use crate::mlmc::{
    adaptation_window, ais_mlmc_estimate, mlmc_estimate, plan_levels, EstimatorReport,
    GainScaling, LevelAdapter, LevelPlan, SaAlgorithm, SaConfig,
};
use crate::oracle::{
    bs_exact_call, grid_argmin, level_variance_surface, uniform_grid, BsParams, VarianceSurface,
};
use crate::rng::{mix, stream, Domain};
use crate::robbins_monro::{CompactBox, ExpandingCompacts, GainSchedule};
use crate::sde::{coarsen, euler_terminal_into, generate_brownian_grid, EulerScratch, SdeModel};
use crate::importance::{grad_level0_variance, grad_level_variance, level_scale};
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

/// Which estimator a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Standard,
    Ais,
    AisChen,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Ais => "ais",
            Method::AisChen => "ais-chen",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Method::Standard),
            "ais" => Some(Method::Ais),
            "ais-chen" => Some(Method::AisChen),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference value the sweep measures errors against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchmarkSpec {
    /// Closed-form price of the configured model.
    Auto,
    Value(f64),
    None,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub model: BsParams,
    pub refinement: usize,
    pub levels: u32,
    pub alpha: f64,
    pub a0: f64,
    pub gamma0: f64,
    pub rho: f64,
    pub gain_offset: u64,
    pub auto_gain_scale: bool,
    pub pilot: u64,
    pub stop_iters: u64,
    pub box_half_width: f64,
    pub averaging: bool,
    pub repetitions: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub benchmark: BenchmarkSpec,
}

const KNOWN_KEYS: &[&str] = &[
    "method",
    "model",
    "s0",
    "strike",
    "rate",
    "sigma",
    "horizon",
    "payoff",
    "m",
    "levels",
    "alpha",
    "a0",
    "gamma0",
    "rho",
    "gain-offset",
    "gain-scale",
    "pilot",
    "iterations",
    "box-half-width",
    "averaging",
    "repetitions",
    "seed",
    "out",
    "benchmark",
];

struct RawConfig {
    entries: HashMap<String, (String, usize)>,
}

impl RawConfig {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn required(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key).ok_or_else(|| Error::ConfigParse {
            line: 0,
            key: key.to_string(),
            message: "required key is missing".into(),
        })
    }

    fn f64_required(&self, key: &str) -> Result<f64> {
        let (v, line) = self.required(key)?;
        parse_f64(key, v, line)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some((v, line)) => parse_f64(key, v, line),
            None => Ok(default),
        }
    }

    fn u64_required(&self, key: &str) -> Result<u64> {
        let (v, line) = self.required(key)?;
        parse_u64(key, v, line)
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some((v, line)) => parse_u64(key, v, line),
            None => Ok(default),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some((v, line)) => match v {
                "on" | "true" => Ok(true),
                "off" | "false" => Ok(false),
                _ => Err(Error::ConfigParse {
                    line,
                    key: key.into(),
                    message: format!("expected on/off, got `{v}`"),
                }),
            },
            None => Ok(default),
        }
    }
}

fn parse_f64(key: &str, v: &str, line: usize) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::ConfigParse {
        line,
        key: key.into(),
        message: format!("expected a real number, got `{v}`"),
    })
}

fn parse_u64(key: &str, v: &str, line: usize) -> Result<u64> {
    v.parse::<u64>().map_err(|_| Error::ConfigParse {
        line,
        key: key.into(),
        message: format!("expected a non-negative integer, got `{v}`"),
    })
}

fn invalid_key(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::ConfigParse {
        line,
        key: key.into(),
        message: message.into(),
    }
}

/// Parse a config from flat `key = value` text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: HashMap<String, (String, usize)> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: line_no,
            key: line.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(invalid_key(&key, line_no, "unknown key"));
        }
        if value.is_empty() {
            return Err(invalid_key(&key, line_no, "empty value"));
        }
        if entries.insert(key.clone(), (value, line_no)).is_some() {
            return Err(invalid_key(&key, line_no, "duplicate key"));
        }
    }
    let raw = RawConfig { entries };

    let (model_name, model_line) = raw.required("model")?;
    if model_name != "black-scholes" {
        return Err(invalid_key(
            "model",
            model_line,
            format!("unsupported model `{model_name}` (only black-scholes)"),
        ));
    }
    if let Some((p, line)) = raw.get("payoff") {
        if p != "call" {
            return Err(invalid_key(
                "payoff",
                line,
                format!("unsupported payoff `{p}` (only call)"),
            ));
        }
    }
    let method = match raw.get("method") {
        Some((v, line)) => Method::parse(v)
            .ok_or_else(|| invalid_key("method", line, "expected standard | ais | ais-chen"))?,
        None => Method::Ais,
    };

    let model = BsParams::new(
        raw.f64_required("s0")?,
        raw.f64_required("strike")?,
        raw.f64_required("rate")?,
        raw.f64_required("sigma")?,
        raw.f64_required("horizon")?,
    )
    .map_err(|e| invalid_key("model", model_line, e.to_string()))?;

    let (m_str, m_line) = raw.required("m")?;
    let m = parse_u64("m", m_str, m_line)? as usize;
    if m < 2 {
        return Err(invalid_key("m", m_line, "refinement factor must be >= 2"));
    }
    let levels = raw.u64_required("levels")? as u32;
    if levels < 1 {
        let line = raw.get("levels").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key("levels", line, "need at least one level"));
    }

    let alpha = raw.f64_or("alpha", 1.0)?;
    if !(0.5..=1.0).contains(&alpha) {
        let line = raw.get("alpha").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key("alpha", line, "alpha must lie in [1/2, 1]"));
    }
    let a0 = raw.f64_or("a0", 1.0)?;
    if !(a0 > 0.0) {
        let line = raw.get("a0").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key("a0", line, "a0 must be positive"));
    }

    let gamma0 = raw.f64_or("gamma0", 1.0)?;
    let rho = raw.f64_or("rho", 0.75)?;
    let gain_offset = raw.u64_or("gain-offset", 256)?;
    if let Err(e) = GainSchedule::new(gamma0, rho, gain_offset) {
        let line = raw
            .get("rho")
            .or_else(|| raw.get("gamma0"))
            .or_else(|| raw.get("gain-offset"))
            .map(|(_, l)| l)
            .unwrap_or(0);
        return Err(invalid_key("rho", line, e.to_string()));
    }
    let auto_gain_scale = match raw.get("gain-scale") {
        Some(("auto", _)) => true,
        Some(("manual", _)) => false,
        Some((v, line)) => {
            return Err(invalid_key(
                "gain-scale",
                line,
                format!("expected auto | manual, got `{v}`"),
            ))
        }
        None => true,
    };
    let pilot = raw.u64_or("pilot", 64)?;
    if auto_gain_scale && pilot == 0 {
        let line = raw.get("pilot").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key("pilot", line, "auto gain scaling needs pilot >= 1"));
    }

    let stop_iters = raw.u64_or("iterations", 1000)?;
    let box_half_width = raw.f64_or("box-half-width", 10.0)?;
    if !(box_half_width > 0.0) {
        let line = raw.get("box-half-width").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key(
            "box-half-width",
            line,
            "box half-width must be positive",
        ));
    }
    let averaging = raw.bool_or("averaging", true)?;
    let repetitions = raw.u64_or("repetitions", 1)?;
    if repetitions < 1 {
        let line = raw.get("repetitions").map(|(_, l)| l).unwrap_or(0);
        return Err(invalid_key("repetitions", line, "need at least one repetition"));
    }
    let seed = raw.u64_or("seed", 0)?;
    let out = raw.get("out").map(|(v, _)| PathBuf::from(v));
    let benchmark = match raw.get("benchmark") {
        None | Some(("auto", _)) => BenchmarkSpec::Auto,
        Some(("none", _)) => BenchmarkSpec::None,
        Some((v, line)) => BenchmarkSpec::Value(parse_f64("benchmark", v, line)?),
    };

    Ok(RunConfig {
        method,
        model,
        refinement: m,
        levels,
        alpha,
        a0,
        gamma0,
        rho,
        gain_offset,
        auto_gain_scale,
        pilot,
        stop_iters,
        box_half_width,
        averaging,
        repetitions,
        seed,
        out,
        benchmark,
    })
}

/// Read and parse a config file.
pub fn parse_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Serialize a config back to `key = value` text that parses to an equal
/// config.
pub fn serialize_config(config: &RunConfig) -> String {
    let mut s = String::new();
    use std::fmt::Write;
    let _ = writeln!(s, "method = {}", config.method);
    let _ = writeln!(s, "model = black-scholes");
    let _ = writeln!(s, "s0 = {}", config.model.s0);
    let _ = writeln!(s, "strike = {}", config.model.strike);
    let _ = writeln!(s, "rate = {}", config.model.rate);
    let _ = writeln!(s, "sigma = {}", config.model.sigma);
    let _ = writeln!(s, "horizon = {}", config.model.horizon);
    let _ = writeln!(s, "payoff = call");
    let _ = writeln!(s, "m = {}", config.refinement);
    let _ = writeln!(s, "levels = {}", config.levels);
    let _ = writeln!(s, "alpha = {}", config.alpha);
    let _ = writeln!(s, "a0 = {}", config.a0);
    let _ = writeln!(s, "gamma0 = {}", config.gamma0);
    let _ = writeln!(s, "rho = {}", config.rho);
    let _ = writeln!(s, "gain-offset = {}", config.gain_offset);
    let _ = writeln!(
        s,
        "gain-scale = {}",
        if config.auto_gain_scale { "auto" } else { "manual" }
    );
    let _ = writeln!(s, "pilot = {}", config.pilot);
    let _ = writeln!(s, "iterations = {}", config.stop_iters);
    let _ = writeln!(s, "box-half-width = {}", config.box_half_width);
    let _ = writeln!(s, "averaging = {}", if config.averaging { "on" } else { "off" });
    let _ = writeln!(s, "repetitions = {}", config.repetitions);
    let _ = writeln!(s, "seed = {}", config.seed);
    if let Some(out) = &config.out {
        let _ = writeln!(s, "out = {}", out.display());
    }
    match config.benchmark {
        BenchmarkSpec::Auto => {
            let _ = writeln!(s, "benchmark = auto");
        }
        BenchmarkSpec::None => {
            let _ = writeln!(s, "benchmark = none");
        }
        BenchmarkSpec::Value(v) => {
            let _ = writeln!(s, "benchmark = {v}");
        }
    }
    s
}

impl RunConfig {
    /// The standard benchmark setup as a config fixture.
    pub fn benchmark_default() -> Self {
        RunConfig {
            method: Method::Ais,
            model: BsParams::benchmark(),
            refinement: 4,
            levels: 4,
            alpha: 1.0,
            a0: 1.0,
            gamma0: 1.0,
            rho: 0.75,
            gain_offset: 256,
            auto_gain_scale: true,
            pilot: 64,
            stop_iters: 1000,
            box_half_width: 10.0,
            averaging: true,
            repetitions: 50,
            seed: 0,
            out: None,
            benchmark: BenchmarkSpec::Auto,
        }
    }

    pub fn plan_with_levels(&self, levels: u32) -> Result<LevelPlan> {
        let mut weights = vec![1.0; levels as usize + 1];
        weights[0] = self.a0;
        plan_levels(
            self.refinement,
            levels,
            self.alpha,
            self.model.horizon,
            &weights,
        )
    }

    pub fn plan(&self) -> Result<LevelPlan> {
        self.plan_with_levels(self.levels)
    }

    pub fn sa_config(&self) -> Result<SaConfig> {
        let gain = GainSchedule::new(self.gamma0, self.rho, self.gain_offset)?;
        let bounds = CompactBox::symmetric(self.box_half_width, 1)?;
        let algorithm = match self.method {
            Method::AisChen => SaAlgorithm::Chen(ExpandingCompacts::default()),
            _ => SaAlgorithm::Projected,
        };
        Ok(SaConfig {
            gain,
            gain_scaling: if self.auto_gain_scale {
                GainScaling::Auto { pilot: self.pilot }
            } else {
                GainScaling::Manual
            },
            bounds,
            theta0: vec![0.0],
            stop_iters: self.stop_iters,
            averaging: self.averaging,
            algorithm,
            warm_start: false,
        })
    }

    pub fn benchmark_value(&self) -> Option<f64> {
        match self.benchmark {
            BenchmarkSpec::Auto => Some(bs_exact_call(&self.model)),
            BenchmarkSpec::Value(v) => Some(v),
            BenchmarkSpec::None => None,
        }
    }

    /// One estimator run at the given level count; the bool flags a
    /// degraded (overflow-heavy) estimate.
    pub fn run_once(&self, levels: u32, seed: u64) -> Result<(EstimatorReport, bool)> {
        let model = self.model.dynamics();
        let payoff = self.model.call_payoff();
        let plan = self.plan_with_levels(levels)?;
        let result = match self.method {
            Method::Standard => mlmc_estimate(&model, &payoff, &plan, seed),
            Method::Ais | Method::AisChen => {
                let sa = self.sa_config()?;
                ais_mlmc_estimate(&model, &payoff, &plan, &sa, seed)
            }
        };
        match result {
            Ok(report) => Ok((report, false)),
            Err(Error::EstimationDegraded { report, .. }) => Ok((*report, true)),
            Err(e) => Err(e),
        }
    }
}

/// One replication of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub refinement: usize,
    pub levels: u32,
    pub finest_steps: u64,
    pub stop_iters: u64,
    pub rep: u64,
    pub estimate: f64,
    pub abs_error: Option<f64>,
    /// Final tilt per level, outer index the level.
    pub theta_hat: Vec<Vec<f64>>,
    pub euler_steps: u64,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Per-level-count summary of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub method: Method,
    pub levels: u32,
    pub finest_steps: u64,
    pub reps: u64,
    pub rmse: f64,
    pub total_euler_steps: u64,
    pub total_wall_seconds: f64,
}

/// Full result of an RMSE sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    /// `(levels, rep)` pairs whose estimates were overflow-degraded.
    pub degraded: Vec<(u32, u64)>,
}

/// Replication seed: `base_seed XOR hash(levels, rep)`.
pub fn rep_seed(base: u64, levels: u32, rep: u64) -> u64 {
    base ^ mix(Domain::Sweep as u64, &[levels as u64, rep])
}

/// Run the configured estimator `repetitions` times for every level count,
/// measuring each estimate against the benchmark value.
pub fn run_rmse_sweep(config: &RunConfig, level_values: &[u32]) -> Result<SweepOutcome> {
    let benchmark = config
        .benchmark_value()
        .ok_or_else(|| Error::invalid("an RMSE sweep needs a benchmark value"))?;
    if level_values.is_empty() {
        return Err(Error::invalid("sweep needs at least one level count"));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut degraded = Vec::new();
    for &levels in level_values {
        let reps: Vec<Result<(SweepRow, bool)>> = (1..=config.repetitions)
            .into_par_iter()
            .map(|rep| {
                let seed = rep_seed(config.seed, levels, rep);
                let (report, was_degraded) = config.run_once(levels, seed)?;
                let row = SweepRow {
                    method: config.method,
                    refinement: config.refinement,
                    levels,
                    finest_steps: (config.refinement as u64).pow(levels),
                    stop_iters: config.stop_iters,
                    rep,
                    estimate: report.estimate,
                    abs_error: Some((report.estimate - benchmark).abs()),
                    theta_hat: report
                        .per_level
                        .iter()
                        .map(|l| l.theta_final.clone())
                        .collect(),
                    euler_steps: report.euler_steps_total,
                    wall_seconds: report.wall_seconds,
                    seed,
                };
                Ok((row, was_degraded))
            })
            .collect();
        let mut sq_sum = 0.0;
        let mut steps = 0u64;
        let mut wall = 0.0;
        let mut count = 0u64;
        for r in reps {
            let (row, was_degraded) = r?;
            if was_degraded {
                degraded.push((levels, row.rep));
            }
            sq_sum += (row.estimate - benchmark) * (row.estimate - benchmark);
            steps += row.euler_steps;
            wall += row.wall_seconds;
            count += 1;
            rows.push(row);
        }
        summaries.push(SweepSummary {
            method: config.method,
            levels,
            finest_steps: (config.refinement as u64).pow(levels),
            reps: count,
            rmse: (sq_sum / count as f64).sqrt(),
            total_euler_steps: steps,
            total_wall_seconds: wall,
        });
    }
    Ok(SweepOutcome {
        rows,
        summaries,
        degraded,
    })
}

pub const SWEEP_CSV_HEADER: &str =
    "method,m,L,n,I,rep,estimate,abs_error,theta_hat,euler_steps,wall_seconds,seed";

/// 17 significant digits, enough for a bitwise f64 round-trip.
fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_theta_hat(theta_hat: &[Vec<f64>]) -> String {
    theta_hat
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|v| fmt_real(*v))
                .collect::<Vec<_>>()
                .join(":")
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Write sweep rows as CSV.
pub fn emit_csv<W: IoWrite>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.refinement,
            r.levels,
            r.finest_steps,
            r.stop_iters,
            r.rep,
            fmt_real(r.estimate),
            r.abs_error.map(fmt_real).unwrap_or_default(),
            fmt_theta_hat(&r.theta_hat),
            r.euler_steps,
            fmt_real(r.wall_seconds),
            r.seed,
        )?;
    }
    Ok(())
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    emit_csv(rows, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parse CSV produced by [`emit_csv`] (the inverse, for fixtures and
/// round-trip checks).
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty CSV input"))?;
    if header != SWEEP_CSV_HEADER {
        return Err(Error::invalid(format!("unexpected CSV header `{header}`")));
    }
    let parse_field = |field: &str, what: &str, line: usize| -> Result<f64> {
        field.parse::<f64>().map_err(|_| {
            Error::invalid(format!("line {line}: bad {what} value `{field}`"))
        })
    };
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::invalid(format!(
                "line {line_no}: expected 12 fields, got {}",
                fields.len()
            )));
        }
        let method = Method::parse(fields[0])
            .ok_or_else(|| Error::invalid(format!("line {line_no}: bad method `{}`", fields[0])))?;
        let theta_hat = if fields[8].is_empty() {
            Vec::new()
        } else {
            fields[8]
                .split(';')
                .map(|level| {
                    level
                        .split(':')
                        .map(|v| parse_field(v, "theta", line_no))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<Vec<f64>>>>()?
        };
        rows.push(SweepRow {
            method,
            refinement: parse_field(fields[1], "m", line_no)? as usize,
            levels: parse_field(fields[2], "L", line_no)? as u32,
            finest_steps: parse_field(fields[3], "n", line_no)? as u64,
            stop_iters: parse_field(fields[4], "I", line_no)? as u64,
            rep: parse_field(fields[5], "rep", line_no)? as u64,
            estimate: parse_field(fields[6], "estimate", line_no)?,
            abs_error: if fields[7].is_empty() {
                None
            } else {
                Some(parse_field(fields[7], "abs_error", line_no)?)
            },
            theta_hat,
            euler_steps: parse_field(fields[9], "euler_steps", line_no)? as u64,
            wall_seconds: parse_field(fields[10], "wall_seconds", line_no)?,
            seed: fields[11].parse::<u64>().map_err(|_| {
                Error::invalid(format!("line {line_no}: bad seed `{}`", fields[11]))
            })?,
        });
    }
    Ok(rows)
}

/// One point of a calibration trajectory.
#[derive(Debug, Clone)]
pub struct CalibrationPoint {
    pub iter: u64,
    pub theta: Vec<f64>,
    pub theta_avg: Vec<f64>,
}

/// Result of a standalone tilt calibration at one level.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub level: u32,
    pub trajectory: Vec<CalibrationPoint>,
    pub theta_final: Vec<f64>,
    pub oracle_theta: Vec<f64>,
    pub oracle_value: f64,
    pub distance: f64,
}

/// Run the level-`ell` tilt recursion standalone for the configured number
/// of updates. Returns the trajectory and the final (averaged) tilt.
pub fn calibrate_trajectory(
    config: &RunConfig,
    level: u32,
) -> Result<(Vec<CalibrationPoint>, Vec<f64>)> {
    let model = config.model.dynamics();
    let payoff = config.model.call_payoff();
    let sa = config.sa_config()?;
    let m = config.refinement;
    let horizon = config.model.horizon;
    let q = model.dim_noise();
    let theta_zero = vec![0.0; q];
    let fine_steps = (m as u64)
        .checked_pow(level)
        .ok_or_else(|| Error::invalid("m^level overflows"))? as usize;
    let scale = if level >= 1 {
        Some(level_scale(m, level, horizon)?)
    } else {
        None
    };

    let window = adaptation_window(u64::MAX, sa.stop_iters);
    let mut adapter = LevelAdapter::new(&sa, window);
    let mut trajectory = Vec::with_capacity(window as usize + 1);
    trajectory.push(CalibrationPoint {
        iter: 0,
        theta: sa.theta0.clone(),
        theta_avg: sa.theta0.clone(),
    });
    let mut scratch = EulerScratch::new();
    let mut terminal = vec![0.0; model.dim_state()];
    for i in 1..=window {
        let mut rng = stream(config.seed, Domain::Calibrate, level as u64, i);
        let grid = generate_brownian_grid(fine_steps, q, horizon, &mut rng)?;
        let psi_fine = match euler_terminal_into(
            &model,
            &theta_zero,
            &grid,
            &mut scratch,
            &mut terminal,
            None,
        ) {
            Ok(()) => payoff(&terminal),
            Err(Error::NumericalOverflow { .. }) => {
                adapter.advance(None)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let grad = match &scale {
            Some(s) => {
                let coarse = coarsen(&grid, m)?;
                match euler_terminal_into(
                    &model,
                    &theta_zero,
                    &coarse,
                    &mut scratch,
                    &mut terminal,
                    None,
                ) {
                    Ok(()) => {
                        let psi_coarse = payoff(&terminal);
                        grad_level_variance(
                            adapter.theta_raw(),
                            psi_fine,
                            psi_coarse,
                            grid.endpoint_sum(),
                            s,
                        )
                    }
                    Err(e @ Error::NumericalOverflow { .. }) => Err(e),
                    Err(e) => return Err(e),
                }
            }
            None => {
                grad_level0_variance(adapter.theta_raw(), psi_fine, grid.endpoint_sum(), horizon)
            }
        };
        match grad {
            Ok(g) => adapter.advance(Some(&g))?,
            Err(Error::NumericalOverflow { .. }) => adapter.advance(None)?,
            Err(e) => return Err(e),
        }
        trajectory.push(CalibrationPoint {
            iter: i,
            theta: adapter.theta_raw().to_vec(),
            theta_avg: adapter.polyak_average(),
        });
    }
    let theta_final = if window > 0 {
        adapter.theta_for_estimator()
    } else {
        sa.theta0.clone()
    };
    Ok((trajectory, theta_final))
}

/// Oracle reference for calibration at one level: the grid minimizer of the
/// level-variance surface over the configured box at spacing 0.05.
pub fn calibration_oracle(
    config: &RunConfig,
    level: u32,
    surface_samples: u64,
) -> Result<(Vec<f64>, f64)> {
    let model = config.model.dynamics();
    let payoff = config.model.call_payoff();
    let grid = uniform_grid(-config.box_half_width, config.box_half_width, 0.05)?;
    let surface = level_variance_surface(
        &model,
        &payoff,
        config.refinement,
        level,
        &grid,
        surface_samples,
        config.seed,
    )?;
    grid_argmin(&surface)
}

/// [`calibrate_trajectory`] plus the comparison against
/// [`calibration_oracle`].
pub fn run_calibration(
    config: &RunConfig,
    level: u32,
    surface_samples: u64,
) -> Result<CalibrationRun> {
    let (trajectory, theta_final) = calibrate_trajectory(config, level)?;
    let (oracle_theta, oracle_value) = calibration_oracle(config, level, surface_samples)?;
    let distance = theta_final
        .iter()
        .zip(&oracle_theta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(CalibrationRun {
        level,
        trajectory,
        theta_final,
        oracle_theta,
        oracle_value,
        distance,
    })
}

/// Write a calibration trajectory as CSV (`iter,theta,theta_avg`).
pub fn write_calibration_csv(run: &CalibrationRun, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    (|| {
        writeln!(w, "iter,theta,theta_avg")?;
        for p in &run.trajectory {
            let theta = p
                .theta
                .iter()
                .map(|v| fmt_real(*v))
                .collect::<Vec<_>>()
                .join(":");
            let avg = p
                .theta_avg
                .iter()
                .map(|v| fmt_real(*v))
                .collect::<Vec<_>>()
                .join(":");
            writeln!(w, "{},{},{}", p.iter, theta, avg)?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

/// Combined oracle outputs for the `oracle` CLI command.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub level_surfaces: Vec<VarianceSurface>,
    pub level_minimizers: Vec<(u32, Vec<f64>, f64)>,
    pub limit_surface: VarianceSurface,
    pub limit_minimizer: (Vec<f64>, f64),
    pub weak_fit: crate::oracle::WeakErrorFit,
}

/// Variance surfaces per level and in the limit, their grid minimizers, and
/// a weak-error fit, all for the configured model.
pub fn run_oracle(
    config: &RunConfig,
    levels: &[u32],
    surface_samples: u64,
    limit_steps: usize,
    weak_steps: &[u64],
    weak_samples: u64,
) -> Result<OracleReport> {
    let model = config.model.dynamics();
    let payoff = config.model.call_payoff();
    let payoff_gradient = config.model.call_payoff_gradient();
    let grid = uniform_grid(-config.box_half_width, config.box_half_width, 0.05)?;

    let mut level_surfaces = Vec::new();
    let mut level_minimizers = Vec::new();
    for &ell in levels {
        let s = level_variance_surface(
            &model,
            &payoff,
            config.refinement,
            ell,
            &grid,
            surface_samples,
            config.seed,
        )?;
        let (t, v) = grid_argmin(&s)?;
        level_minimizers.push((ell, t, v));
        level_surfaces.push(s);
    }
    let limit_surface = crate::oracle::variance_surface(
        &model,
        &payoff_gradient,
        &grid,
        surface_samples,
        limit_steps,
        config.seed,
    )?;
    let limit_minimizer = {
        let (t, v) = grid_argmin(&limit_surface)?;
        (t, v)
    };
    let exact = bs_exact_call(&config.model);
    let weak_fit = crate::oracle::weak_error_fit(
        &model,
        &payoff,
        exact,
        weak_steps,
        weak_samples,
        config.seed,
    )?;
    Ok(OracleReport {
        level_surfaces,
        level_minimizers,
        limit_surface,
        limit_minimizer,
        weak_fit,
    })
}

/// Write an oracle report as CSV (`kind,level,x,value,std_error`).
pub fn write_oracle_csv(report: &OracleReport, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    (|| {
        writeln!(w, "kind,level,x,value,std_error")?;
        for s in &report.level_surfaces {
            let level = s.level.map(|l| l.to_string()).unwrap_or_default();
            for i in 0..s.thetas.len() {
                writeln!(
                    w,
                    "level_surface,{},{},{},{}",
                    level,
                    fmt_real(s.thetas[i][0]),
                    fmt_real(s.values[i]),
                    fmt_real(s.std_errors[i]),
                )?;
            }
        }
        let s = &report.limit_surface;
        for i in 0..s.thetas.len() {
            writeln!(
                w,
                "limit_surface,,{},{},{}",
                fmt_real(s.thetas[i][0]),
                fmt_real(s.values[i]),
                fmt_real(s.std_errors[i]),
            )?;
        }
        for (n, (bias, se)) in report
            .weak_fit
            .step_counts
            .iter()
            .zip(report.weak_fit.biases.iter().zip(&report.weak_fit.std_errors))
        {
            writeln!(w, "weak_error,,{n},{},{}", fmt_real(*bias), fmt_real(*se))?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

/// `sqrt(mean((estimate - benchmark)^2))` over repeated estimates.
pub fn rmse(estimates: &[f64], benchmark: f64) -> f64 {
    let mean_sq = estimates
        .iter()
        .map(|e| (e - benchmark) * (e - benchmark))
        .sum::<f64>()
        / estimates.len() as f64;
    mean_sq.sqrt()
}
