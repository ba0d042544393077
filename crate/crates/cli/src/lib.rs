//! Run configurations and the pipelines behind the `hybrid-routh` command.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hybrid_routh::billiard::{self, BilliardParams, DirectionRule, PolarSign, Wall};
use hybrid_routh::hybrid::{check_prop2, flow_discrepancy, EventOptions, SimOptions};
use hybrid_routh::lagrangian::{check_derivatives, check_prop1};
use hybrid_routh::ode::IntegratorOptions;
use hybrid_routh::registry::{self, Model};
use hybrid_routh::routh::{MuEntry, ReconstructedFlow};
use hybrid_routh::{io, simulate, HybridFlow, State, Termination};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const METADATA_FILE: &str = "run.json";
pub const DISCREPANCY_FILE: &str = "discrepancy.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const ERROR_FILE: &str = "error.json";

/// State and event-time tolerances of compare and verify mode.
pub const STATE_TOL: f64 = 1e-6;
pub const EVENT_TIME_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Reduced,
    Resequenced,
    Compare,
    Verify,
}

impl Mode {
    fn needs_cyclic(self) -> bool {
        matches!(self, Mode::Reduced | Mode::Resequenced | Mode::Compare)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("mode serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}
fn default_m() -> f64 {
    BilliardParams::default().m
}
fn default_r_min() -> f64 {
    BilliardParams::default().r_min
}
fn default_rtol() -> f64 {
    IntegratorOptions::default().rtol
}
fn default_atol() -> f64 {
    IntegratorOptions::default().atol
}
fn default_max_step() -> f64 {
    IntegratorOptions::default().max_step
}
fn default_max_steps() -> usize {
    IntegratorOptions::default().max_steps
}
fn default_event_tol() -> f64 {
    EventOptions::default().event_tol
}
fn default_guard_tol() -> f64 {
    EventOptions::default().guard_tol
}
fn default_min_dwell() -> f64 {
    EventOptions::default().min_dwell
}
fn default_max_impacts() -> usize {
    EventOptions::default().max_impacts
}

/// Flat run configuration. Every key except `model` and `horizon` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Explicit start; overrides the scenario's initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<State>,
    pub horizon: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_out")]
    pub out: PathBuf,

    #[serde(default = "default_m")]
    pub m: f64,
    /// Dissipation; taken from the scenario (else 0.25) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default)]
    pub wall: Wall,
    #[serde(default)]
    pub direction: DirectionRule,
    #[serde(default)]
    pub polar_sign: PolarSign,
    #[serde(default = "default_r_min")]
    pub r_min: f64,

    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_event_tol")]
    pub event_tol: f64,
    #[serde(default = "default_guard_tol")]
    pub guard_tol: f64,
    #[serde(default = "default_min_dwell")]
    pub min_dwell: f64,
    #[serde(default = "default_max_impacts")]
    pub max_impacts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_guard_rate: Option<f64>,

    #[serde(default = "yes")]
    pub write_trajectory: bool,
    #[serde(default = "yes")]
    pub write_events: bool,
}

/// Configuration error with the position or key it refers to.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config")?;
        if let Some(line) = self.line {
            write!(f, " line {line}")?;
            if let Some(col) = self.column {
                write!(f, ", column {col}")?;
            }
        }
        if let Some(key) = &self.key {
            write!(f, " key '{key}'")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn invalid(text: &str, key: &str, message: String) -> ParseError {
    ParseError {
        line: key_line(text, key),
        column: None,
        key: Some(key.to_string()),
        message,
    }
}

/// Parses and validates a JSON run configuration; defaults fill absent keys.
pub fn parse_config(text: &str) -> Result<RunConfig, ParseError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        // serde reports unknown keys as "unknown field `name`, expected ..."
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .map(str::to_string);
        ParseError {
            line: Some(e.line()),
            column: Some(e.column()),
            key,
            message,
        }
    })?;
    cfg.validate(text)?;
    Ok(cfg)
}

impl RunConfig {
    pub fn new(model: &str, horizon: f64) -> Self {
        parse_config(&json!({ "model": model, "horizon": horizon }).to_string())
            .unwrap_or_else(|e| panic!("default config for {model}: {e}"))
    }

    fn validate(&self, text: &str) -> Result<(), ParseError> {
        if !registry::MODEL_IDS.contains(&self.model.as_str()) {
            return Err(invalid(
                text,
                "model",
                format!("unknown model id '{}'; known: {}", self.model, registry::MODEL_IDS.join(", ")),
            ));
        }
        if let Some(id) = &self.scenario {
            if billiard::scenario(id).is_none() {
                return Err(invalid(
                    text,
                    "scenario",
                    format!("unknown scenario id '{id}'; known: {}", billiard::SCENARIO_IDS.join(", ")),
                ));
            }
            if !self.model.starts_with("billiard-") {
                return Err(invalid(text, "scenario", format!("scenario '{id}' applies only to billiard models")));
            }
        }
        let positive = [
            ("horizon", self.horizon),
            ("m", self.m),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("max_step", self.max_step),
            ("event_tol", self.event_tol),
            ("guard_tol", self.guard_tol),
            ("min_dwell", self.min_dwell),
        ];
        for (key, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                return Err(invalid(text, key, format!("must be positive, got {x}")));
            }
        }
        for (key, x) in [("initial_step", self.initial_step), ("max_guard_rate", self.max_guard_rate)] {
            if let Some(x) = x {
                if !(x.is_finite() && x > 0.0) {
                    return Err(invalid(text, key, format!("must be positive, got {x}")));
                }
            }
        }
        if let Some(c) = self.c {
            if !(c.is_finite() && c >= 0.0) {
                return Err(invalid(text, "c", format!("must be non-negative, got {c}")));
            }
        }
        if !(self.r_min >= 0.0) {
            return Err(invalid(text, "r_min", format!("must be non-negative, got {}", self.r_min)));
        }
        if self.max_steps == 0 {
            return Err(invalid(text, "max_steps", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> BilliardParams {
        let scenario_c = self.scenario.as_deref().and_then(billiard::scenario).map(|s| s.params.c);
        BilliardParams {
            m: self.m,
            c: self.c.or(scenario_c).unwrap_or(BilliardParams::default().c),
            wall: self.wall,
            direction: self.direction,
            polar_sign: self.polar_sign,
            r_min: self.r_min,
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            integrator: IntegratorOptions {
                rtol: self.rtol,
                atol: self.atol,
                max_step: self.max_step,
                initial_step: self.initial_step,
                max_steps: self.max_steps,
            },
            events: EventOptions {
                event_tol: self.event_tol,
                guard_tol: self.guard_tol,
                min_dwell: self.min_dwell,
                max_impacts: self.max_impacts,
                max_guard_rate: self.max_guard_rate,
            },
        }
    }

    fn initial_state(&self, model: &Model) -> State {
        if let Some(s) = &self.initial_state {
            return s.clone();
        }
        match self.scenario.as_deref().and_then(billiard::scenario) {
            Some(sc) if self.model == "billiard-polar" => sc.polar,
            Some(sc) => sc.cartesian,
            None => model.default_state.clone(),
        }
    }

    /// The configuration with `c` and `initial_state` made explicit, so the
    /// record alone reproduces the run.
    pub fn resolved(&self) -> Result<RunConfig, CliError> {
        let model = registry::build(&self.model, &self.params())?;
        let mut cfg = self.clone();
        cfg.c = Some(self.params().c);
        cfg.initial_state = Some(self.initial_state(&model));
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ParseError),
    #[error("mode '{mode}' needs a model with a cyclic coordinate; '{model}' has none")]
    NotReducible { mode: Mode, model: String },
    #[error(transparent)]
    Model(#[from] hybrid_routh::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::NotReducible { .. } => "not_reducible",
            CliError::Model(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Usage(_) => "usage",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Config(p) = self {
            err["key"] = json!(p.key);
            err["line"] = json!(p.line);
            err["column"] = json!(p.column);
        }
        if let CliError::Model(e) = self {
            err["detail"] = json!(format!("{e:?}"));
        }
        json!({ "error": err })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes the error record into `out` (best effort).
pub fn write_error_record(out: &Path, err: &CliError) {
    if fs::create_dir_all(out).is_ok() {
        let _ = write_json(&out.join(ERROR_FILE), &err.record());
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: &str, measured: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured <= tol,
            measured,
            tol,
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub termination: Termination,
    pub impacts: usize,
    pub checks: Vec<Check>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Writer {
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn file(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.out.join(name);
        let mut w = create(&path)?;
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.out.join(name);
        write_json(&path, value)?;
        self.files.push(path);
        Ok(())
    }

    fn flow(&mut self, cfg: &RunConfig, prefix: &str, flow: &HybridFlow<State>) -> Result<(), CliError> {
        if cfg.write_trajectory {
            self.file(&format!("{prefix}{TRAJECTORY_FILE}"), |w| io::write_trajectory(w, flow))?;
        }
        if cfg.write_events {
            self.file(&format!("{prefix}{EVENTS_FILE}"), |w| io::write_events(w, flow))?;
        }
        Ok(())
    }

    fn reconstructed(&mut self, cfg: &RunConfig, prefix: &str, rec: &ReconstructedFlow) -> Result<(), CliError> {
        if cfg.write_trajectory {
            self.file(&format!("{prefix}{TRAJECTORY_FILE}"), |w| io::write_reconstructed_trajectory(w, rec))?;
        }
        if cfg.write_events {
            self.file(&format!("{prefix}{EVENTS_FILE}"), |w| io::write_events(w, &rec.reduced))?;
        }
        Ok(())
    }
}

fn metadata(cfg: &RunConfig, flow: &HybridFlow<State>, mu_sequence: Option<&[MuEntry]>) -> Value {
    let mut meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "termination": flow.termination,
        "failure": flow.failure,
        "impacts": flow.events.len(),
        "t_end": flow.t_end(),
        "coordinates": flow.arcs.first().map(|a| a.first().dim()),
    });
    if let Some(mus) = mu_sequence {
        meta["mu_sequence"] = json!(mus);
    }
    meta
}

fn event_time_delta(a: &HybridFlow<State>, b: &HybridFlow<State>) -> f64 {
    if a.events.len() != b.events.len() {
        return f64::INFINITY;
    }
    a.events
        .iter()
        .zip(&b.events)
        .fold(0.0_f64, |m, (x, y)| m.max((x.tau - y.tau).abs()))
}

/// Sup-norm of `a - b` on each pair of arcs, over both sample grids.
fn per_arc_sup(a: &HybridFlow<State>, b: &HybridFlow<State>) -> Vec<f64> {
    a.arcs
        .iter()
        .zip(&b.arcs)
        .map(|(x, y)| {
            let (lo, hi) = (x.t_start.max(y.t_start), x.t_end.min(y.t_end));
            x.samples
                .iter()
                .chain(&y.samples)
                .map(|s| s.t)
                .filter(|t| *t >= lo && *t <= hi)
                .map(|t| {
                    let (p, q) = (x.eval(t).phase(), y.eval(t).phase());
                    p.iter().zip(&q).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()))
                })
                .fold(0.0_f64, f64::max)
        })
        .collect()
}

/// Deterministic quasi-random points in the model's sample box.
fn sample_states(model: &Model, count: usize) -> Vec<State> {
    let b = &model.samples;
    let n = b.q.len();
    let primes = [2.0_f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0];
    let frac = |k: usize, j: usize| ((k + 1) as f64 * primes[j % primes.len()].sqrt()).fract();
    (0..count)
        .map(|k| {
            let pick = |r: (f64, f64), j| r.0 + (r.1 - r.0) * frac(k, j);
            State::new(
                pick(b.t, 0),
                (0..n).map(|i| pick(b.q[i], 1 + i)).collect(),
                (0..n).map(|i| pick(b.v[i], 1 + n + i)).collect(),
            )
        })
        .collect()
}

fn csv_schema_ok(path: &Path, header: &str) -> Result<bool, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let cols = header.split(',').count();
    Ok(lines.next() == Some(header) && lines.all(|l| l.split(',').count() == cols))
}

/// Executes a configuration and writes its files into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let cfg = cfg.resolved()?;
    let params = cfg.params();
    let model = registry::build(&cfg.model, &params)?;
    let opts = cfg.sim_options();
    let s0 = cfg.initial_state.clone().expect("resolved config has a start");
    if cfg.mode.needs_cyclic() && model.cyclic.is_none() {
        return Err(CliError::NotReducible {
            mode: cfg.mode,
            model: cfg.model.clone(),
        });
    }
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let mut w = Writer {
        out: cfg.out.clone(),
        files: Vec::new(),
    };
    let mut checks = Vec::new();

    let (termination, impacts) = match cfg.mode {
        Mode::Full => {
            let flow = simulate(&model.hybrid, &s0, s0.t + cfg.horizon, &opts)?;
            w.flow(&cfg, "", &flow)?;
            w.json(METADATA_FILE, &metadata(&cfg, &flow, None))?;
            (flow.termination, flow.events.len())
        }
        Mode::Reduced => {
            let cs = model.cyclic.as_ref().expect("checked above");
            let mu = cs.momentum_map(&s0);
            let red = cs.reduce(mu)?;
            let flow = simulate(&red.shape, &cs.project_state(&s0), s0.t + cfg.horizon, &opts)?;
            let rec = cs.reconstruct(&flow, mu, s0.q[cs.cyclic_index])?;
            w.reconstructed(&cfg, "", &rec)?;
            w.json(METADATA_FILE, &metadata(&cfg, &flow, Some(&rec.mu_sequence)))?;
            (flow.termination, flow.events.len())
        }
        Mode::Resequenced => {
            let cs = model.cyclic.as_ref().expect("checked above");
            let rec = cs.simulate_resequenced(&s0, s0.t + cfg.horizon, &opts)?;
            w.reconstructed(&cfg, "", &rec)?;
            w.json(METADATA_FILE, &metadata(&cfg, &rec.reduced, Some(&rec.mu_sequence)))?;
            (rec.reduced.termination, rec.reduced.events.len())
        }
        Mode::Compare => {
            let cs = model.cyclic.as_ref().expect("checked above");
            let full = simulate(&model.hybrid, &s0, s0.t + cfg.horizon, &opts)?;
            let mu = cs.momentum_map(&s0);
            let red = cs.reduce(mu)?;
            let reduced = simulate(&red.shape, &cs.project_state(&s0), s0.t + cfg.horizon, &opts)?;
            let projected = cs.project(&full);
            let rec = cs.reconstruct(&reduced, mu, s0.q[cs.cyclic_index])?;
            w.flow(&cfg, "", &full)?;
            w.reconstructed(&cfg, "reduced_", &rec)?;
            w.json(METADATA_FILE, &metadata(&cfg, &full, Some(&rec.mu_sequence)))?;

            let per_arc = per_arc_sup(&projected, &reduced);
            let sup = if projected.arcs.len() == reduced.arcs.len() {
                per_arc.iter().copied().fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            let deltas: Vec<f64> = projected
                .events
                .iter()
                .zip(&reduced.events)
                .map(|(a, b)| (a.tau - b.tau).abs())
                .collect();
            let dt = event_time_delta(&projected, &reduced);
            checks.push(Check::new("reduced_vs_full_sup_norm", sup, STATE_TOL));
            checks.push(Check::new("impact_time_delta", dt, EVENT_TIME_TOL));
            w.json(
                DISCREPANCY_FILE,
                &json!({
                    "full_impacts": full.events.len(),
                    "reduced_impacts": reduced.events.len(),
                    "full_termination": full.termination,
                    "reduced_termination": reduced.termination,
                    "sup_norm_per_arc": per_arc,
                    "impact_time_deltas": deltas,
                    "max_sup_norm": sup,
                    "max_impact_time_delta": dt,
                    "checks": checks,
                }),
            )?;
            (full.termination, full.events.len())
        }
        Mode::Verify => {
            let flow = simulate(&model.hybrid, &s0, s0.t + cfg.horizon, &opts)?;
            w.flow(&cfg, "", &flow)?;
            w.json(METADATA_FILE, &metadata(&cfg, &flow, None))?;
            checks = verify(&cfg, &model, &s0, &flow, &opts, &w.out)?;
            w.json(
                VERIFY_FILE,
                &json!({ "passed": checks.iter().all(|c| c.passed), "checks": checks }),
            )?;
            (flow.termination, flow.events.len())
        }
    };
    Ok(RunOutcome {
        out: w.out,
        files: w.files,
        termination,
        impacts,
        checks,
    })
}

fn verify(
    cfg: &RunConfig,
    model: &Model,
    s0: &State,
    flow: &HybridFlow<State>,
    opts: &SimOptions,
    out: &Path,
) -> Result<Vec<Check>, CliError> {
    let sys = model.sys();
    let mut checks = Vec::new();

    let p1 = check_prop1(sys, s0, s0.t + 1.0, STATE_TOL, opts.integrator)?;
    checks.push(Check::new("lagrangian_hamiltonian_flow", p1.max_discrepancy, STATE_TOL));

    let samples = sample_states(model, 100);
    let mut legendre = 0.0_f64;
    for s in &samples {
        let back = sys.inverse_legendre(&sys.legendre(s))?;
        let scale = s.v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let d = back.v.iter().zip(&s.v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        legendre = legendre.max(d / scale);
    }
    checks.push(Check::new("legendre_round_trip", legendre, 1e-10));
    let d = check_derivatives(sys, &samples);
    checks.push(Check::new("derivative_consistency", d.max_rel_dq.max(d.max_rel_dv), 1e-6));

    let p2 = check_prop2(&model.hybrid, s0, s0.t + cfg.horizon, STATE_TOL, opts)?;
    let p2_measure = if p2.lagrangian_events == p2.hamiltonian_events && p2.lagrangian_termination == p2.hamiltonian_termination {
        p2.max_state_discrepancy
    } else {
        f64::INFINITY
    };
    checks.push(Check::new("hybrid_correspondence_state", p2_measure, STATE_TOL));
    checks.push(Check::new("hybrid_correspondence_event_time", p2.max_event_time_delta, EVENT_TIME_TOL));

    if let Some(cs) = &model.cyclic {
        let (mut along, mut jump) = (0.0_f64, 0.0_f64);
        for arc in &flow.arcs {
            let mu = cs.momentum_map(arc.first());
            for s in &arc.samples {
                along = along.max((cs.momentum_map(s) - mu).abs());
            }
        }
        for e in &flow.events {
            jump = jump.max((cs.momentum_map(&e.post) - cs.momentum_map(&e.pre)).abs());
        }
        checks.push(Check::new("momentum_along_arcs", along, 1e-8));
        checks.push(Check::new("momentum_across_impacts", jump, 1e-12));

        let mu = cs.momentum_map(s0);
        let red = cs.reduce(mu)?;
        let reduced = simulate(&red.shape, &cs.project_state(s0), s0.t + cfg.horizon, opts)?;
        let sup = flow_discrepancy(&cs.project(flow), &reduced, |s| s.phase()).unwrap_or(f64::INFINITY);
        checks.push(Check::new("reduction_round_trip", sup, STATE_TOL));
        checks.push(Check::new(
            "reduction_event_time",
            event_time_delta(&cs.project(flow), &reduced),
            EVENT_TIME_TOL,
        ));
    }

    let n = sys.dim();
    let mut schema = true;
    if cfg.write_trajectory {
        schema &= csv_schema_ok(&out.join(TRAJECTORY_FILE), &io::trajectory_header(n, false))?;
    }
    if cfg.write_events {
        schema &= csv_schema_ok(&out.join(EVENTS_FILE), &io::events_header(n))?;
    }
    checks.push(Check::new("csv_schema", if schema { 0.0 } else { 1.0 }, 0.0));

    let again = simulate(&model.hybrid, s0, s0.t + cfg.horizon, opts)?;
    let render = |f: &HybridFlow<State>| {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        io::write_trajectory(&mut a, f).and_then(|_| io::write_events(&mut b, f)).map(|_| (a, b))
    };
    let same = render(flow).map_err(io_err(out))? == render(&again).map_err(io_err(out))?;
    checks.push(Check::new("determinism", if same { 0.0 } else { 1.0 }, 0.0));
    Ok(checks)
}

/// Re-runs the configuration recorded in a `run.json`, writing into `out`.
pub fn replay(metadata_path: &Path, out: &Path) -> Result<RunOutcome, CliError> {
    let text = fs::read_to_string(metadata_path).map_err(io_err(metadata_path))?;
    let meta: Value = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: metadata_path.to_path_buf(),
        source,
    })?;
    let config = meta
        .get("config")
        .ok_or_else(|| CliError::Usage(format!("{} has no 'config' record", metadata_path.display())))?;
    let mut cfg = parse_config(&config.to_string())?;
    cfg.out = out.to_path_buf();
    run(&cfg)
}

/// Model ids with their descriptions.
pub fn model_listing() -> Vec<(&'static str, &'static str)> {
    registry::MODEL_IDS
        .iter()
        .map(|id| (*id, registry::describe(id).unwrap_or("")))
        .collect()
}
