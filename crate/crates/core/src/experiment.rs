//! Config-driven runs of the verification checks.
//!
//! Every command writes CSV artifacts and a `report.json` into the output
//! directory. Both depend only on the config; wall-clock timings go to
//! `meta.json`. Exit contract: 0 when every asserted check passes, 1 when one
//! fails, 2 for an invalid config.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::covariance::{check_ds_quadratic_form, check_dt_quadratic_form, q_infinity, q_kernel, CovarianceKernel};
use crate::error::{Error, Result};
use crate::evolution::{evolve, fit_decay, lattice_pairs, DecayMode};
use crate::inequalities::{
    entropy_gap, hyper_cells, hyper_probes, kappa, probe_suite, ramp_family, sharpness_probe, HyperReport, HyperSetup,
    Integration, LogSobolevReport, LogSobolevSetup, LATTICE_HEADER,
};
use crate::io::{csv_row, fmt17};
use crate::linalg;
use crate::measures::{probe_set, verify_ergodic_limit, verify_invariance, EvolutionSystem, InvarianceReport, Shift};
use crate::mehler::{check_differentiation, gradient_estimate_check, trig_probes, SmoothObservable, TrigPolynomial};
use crate::model::{make_nonunique_demo, ModelSpec, OperatorFamily, Window};
use crate::rng::{seed_stream, StreamKey};
use crate::spde::{law_check, observable_check, simulate, Recording};

pub const SCHEMA_VERSION: &str = "oulab-report/1";
pub const OUTPUT_DIR_ENV: &str = "OULAB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; must fit in a signed 64-bit integer (a TOML integer).
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Initial point for diffcheck, spde and ergodic; e_1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub model: ModelSpec,
    pub window: Window,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub covariance: CovarianceConfig,
    #[serde(default)]
    pub invariance: InvarianceConfig,
    #[serde(default)]
    pub diffcheck: DiffcheckConfig,
    #[serde(default)]
    pub logsob: LogsobConfig,
    #[serde(default)]
    pub hyper: HyperConfig,
    #[serde(default)]
    pub spde: SpdeConfig,
    #[serde(default)]
    pub ergodic: ErgodicConfig,
}

fn default_workers() -> usize {
    1
}

fn default_output_dir() -> String {
    "oulab-out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Trace of the discarded tail of Q(t, −∞).
    pub tail: f64,
    pub chain: f64,
    /// Entrywise, against closed forms where the model has one.
    pub kernel: f64,
    pub trace: f64,
    pub invariance: f64,
    pub invariance_demo: f64,
    pub fd: f64,
    pub derivative: f64,
    pub order_low: f64,
    pub order_high: f64,
    pub kappa: f64,
    /// Monte Carlo agreement, in standard errors.
    pub mc_sigmas: f64,
    /// Inequality slack allowance, in standard errors.
    pub slack_sigmas: f64,
    pub z_max: f64,
    pub ergodic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tail: 1e-10,
            chain: 1e-8,
            kernel: 1e-10,
            trace: 1e-9,
            invariance: 1e-10,
            invariance_demo: 1e-6,
            fd: 1e-6,
            derivative: 1e-6,
            order_low: 3.5,
            order_high: 4.5,
            kappa: 1e-4,
            mc_sigmas: 4.0,
            slack_sigmas: 3.0,
            z_max: 5.0,
            ergodic: 1e-3,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 15] {
        [
            ("tail", self.tail),
            ("chain", self.chain),
            ("kernel", self.kernel),
            ("trace", self.trace),
            ("invariance", self.invariance),
            ("invariance_demo", self.invariance_demo),
            ("fd", self.fd),
            ("derivative", self.derivative),
            ("order_low", self.order_low),
            ("order_high", self.order_high),
            ("kappa", self.kappa),
            ("mc_sigmas", self.mc_sigmas),
            ("slack_sigmas", self.slack_sigmas),
            ("z_max", self.z_max),
            ("ergodic", self.ergodic),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    /// Random triples s < r < t in the window for the chain law.
    pub triples: usize,
    /// Pairs (s, t) whose U(t,s) is written out.
    pub pairs: Vec<[f64; 2]>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self { triples: 50, pairs: vec![[0.0, 1.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub pairs: Vec<[f64; 2]>,
    /// Times t of Q(t, −∞).
    pub infinity_times: Vec<f64>,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self { pairs: vec![[0.0, 1.0]], infinity_times: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub s_range: [f64; 2],
    pub t_range: [f64; 2],
    /// Grid points per axis; pairs with s > t are skipped.
    pub points: usize,
    pub probes: usize,
    /// Also run the two evolution systems of the non-uniqueness family.
    pub nonunique_demo: bool,
    pub demo_n: usize,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self { s_range: [-2.0, 0.0], t_range: [0.0, 2.0], points: 10, probes: 20, nonunique_demo: true, demo_n: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffcheckConfig {
    pub s: f64,
    pub t: f64,
    pub probes: usize,
    pub fd_step: f64,
    /// Samples for the gradient estimate; 0 skips it.
    pub gradient_samples: usize,
}

impl Default for DiffcheckConfig {
    fn default() -> Self {
        Self { s: 0.0, t: 1.0, probes: 20, fd_step: 1e-4, gradient_samples: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogsobConfig {
    pub t: f64,
    /// Fixed κ; derived from a Cameron–Martin decay certificate when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Expected κ, checked to `tolerances.kappa` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_expected: Option<f64>,
    /// Certificate grid: `certificate_points` times in [t − certificate_span, t].
    pub certificate_points: usize,
    pub certificate_span: f64,
    pub p_values: Vec<f64>,
    /// Monte Carlo cross-check budget; 0 skips it.
    pub mc_samples: usize,
}

impl Default for LogsobConfig {
    fn default() -> Self {
        Self {
            t: 0.0,
            kappa: None,
            kappa_expected: None,
            certificate_points: 6,
            certificate_span: 2.0,
            p_values: vec![1.5, 2.0, 3.0],
            mc_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub s: f64,
    pub t: f64,
    pub q: f64,
    pub p_values: Vec<f64>,
    /// Monte Carlo budget per norm; 0 uses tensor quadrature.
    pub mc_samples: usize,
    pub sharpness_p: Vec<f64>,
    pub ramp_lambdas: Vec<f64>,
    pub ramp_cap: f64,
    /// Treat p beyond the exponent curve as a failed check.
    pub assert: bool,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            s: 0.0,
            t: std::f64::consts::LN_2,
            q: 2.0,
            p_values: vec![2.0, 2.5, 3.0],
            mc_samples: 100_000,
            sharpness_p: vec![4.5, 5.5, 6.0],
            ramp_lambdas: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            ramp_cap: 60.0,
            assert: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdeConfig {
    pub s: f64,
    pub t: f64,
    pub step: f64,
    pub paths: usize,
    /// Paths written to `spde_paths.csv`, recorded every `record_every` steps.
    pub csv_paths: usize,
    pub record_every: usize,
}

impl Default for SpdeConfig {
    fn default() -> Self {
        Self { s: 0.0, t: 1.0, step: 0.01, paths: 100_000, csv_paths: 16, record_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicConfig {
    pub t: f64,
    pub s_values: Vec<f64>,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self { t: 0.0, s_values: vec![-1.0, -2.0, -4.0, -8.0] }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    /// The constant diagonal model (n = 8, λ = −1, b = 1) on [−10, 10].
    pub fn dc_default() -> Self {
        Self {
            seed: 20_240_601,
            workers: 1,
            output_dir: default_output_dir(),
            x0: None,
            model: ModelSpec::dc(),
            window: Window { t_min: -10.0, t_max: 10.0 },
            tolerances: Tolerances::default(),
            evolve: EvolveConfig::default(),
            covariance: CovarianceConfig::default(),
            invariance: InvarianceConfig::default(),
            diffcheck: DiffcheckConfig::default(),
            logsob: LogsobConfig { kappa_expected: Some(0.5), ..LogsobConfig::default() },
            hyper: HyperConfig::default(),
            spde: SpdeConfig::default(),
            ergodic: ErgodicConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.window;
        if !(w.t_min.is_finite() && w.t_max.is_finite() && w.t_min < w.t_max) {
            return Err(invalid(format!("window [{}, {}] is empty", w.t_min, w.t_max)));
        }
        if self.model.dim() == 0 {
            return Err(invalid("truncation n must be at least 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed must fit in a signed 64-bit integer"));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        for (name, v) in self.tolerances.entries() {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("tolerance {name} = {v} must be positive")));
            }
        }
        if self.tolerances.order_low >= self.tolerances.order_high {
            return Err(invalid("order_low must be below order_high"));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.model.dim() {
                return Err(invalid(format!("x0 has length {}, model dimension is {}", x0.len(), self.model.dim())));
            }
        }
        let in_window = |what: &str, t: f64| {
            if w.t_min <= t && t <= w.t_max {
                Ok(())
            } else {
                Err(invalid(format!("{what} = {t} lies outside the window [{}, {}]", w.t_min, w.t_max)))
            }
        };
        let ordered = |what: &str, s: f64, t: f64| {
            in_window(what, s)?;
            in_window(what, t)?;
            if s < t {
                Ok(())
            } else {
                Err(invalid(format!("{what} needs s < t, got ({s}, {t})")))
            }
        };
        for p in self.evolve.pairs.iter().chain(&self.covariance.pairs) {
            ordered("pair", p[0], p[1])?;
        }
        for &t in &self.covariance.infinity_times {
            in_window("infinity time", t)?;
        }
        let inv = &self.invariance;
        ordered("invariance.s_range", inv.s_range[0], inv.s_range[1])?;
        ordered("invariance.t_range", inv.t_range[0], inv.t_range[1])?;
        if inv.points < 2 || inv.probes == 0 {
            return Err(invalid("invariance needs points >= 2 and probes >= 1"));
        }
        let d = &self.diffcheck;
        ordered("diffcheck", d.s - d.fd_step, d.t + d.fd_step)?;
        if !(d.fd_step > 0.0) || d.probes == 0 {
            return Err(invalid("diffcheck needs fd_step > 0 and probes >= 1"));
        }
        let l = &self.logsob;
        in_window("logsob.t", l.t)?;
        if l.kappa.is_none() {
            in_window("logsob certificate start", l.t - l.certificate_span)?;
            if l.certificate_points < 2 || !(l.certificate_span > 0.0) {
                return Err(invalid("certificate needs at least 2 points and a positive span"));
            }
        }
        if l.kappa.is_some_and(|k| !(k > 0.0)) {
            return Err(invalid("logsob.kappa must be positive"));
        }
        if l.p_values.iter().any(|&p| !(p > 1.0)) {
            return Err(invalid("logsob.p_values must exceed 1"));
        }
        let h = &self.hyper;
        ordered("hyper", h.s, h.t)?;
        if !(h.q > 1.0) || h.p_values.iter().chain(&h.sharpness_p).any(|&p| !(p >= 1.0)) {
            return Err(invalid("hyper needs q > 1 and every p >= 1"));
        }
        if !(h.ramp_cap > 0.0) {
            return Err(invalid("hyper.ramp_cap must be positive"));
        }
        let sp = &self.spde;
        ordered("spde", sp.s, sp.t)?;
        if !(sp.step > 0.0) || sp.paths < 2 || sp.record_every == 0 {
            return Err(invalid("spde needs step > 0, paths >= 2, record_every >= 1"));
        }
        let e = &self.ergodic;
        in_window("ergodic.t", e.t)?;
        for &s in &e.s_values {
            in_window("ergodic s", s)?;
            if s >= e.t {
                return Err(invalid("ergodic s values must lie below t"));
            }
        }
        Ok(())
    }

    fn x0(&self) -> DVector<f64> {
        match &self.x0 {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_fn(self.model.dim(), |k, _| if k == 0 { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    Evolve,
    Covariance,
    Invariance,
    Diffcheck,
    Logsob,
    Hyper,
    Spde,
    Ergodic,
    ReportAll,
}

impl Command {
    /// The individual commands, in `report-all` order.
    pub const SUITE: [Command; 8] = [
        Command::Evolve,
        Command::Covariance,
        Command::Invariance,
        Command::Diffcheck,
        Command::Logsob,
        Command::Hyper,
        Command::Spde,
        Command::Ergodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Covariance => "covariance",
            Command::Invariance => "invariance",
            Command::Diffcheck => "diffcheck",
            Command::Logsob => "logsob",
            Command::Hyper => "hyper",
            Command::Spde => "spde",
            Command::Ergodic => "ergodic",
            Command::ReportAll => "report-all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::SUITE
            .into_iter()
            .chain([Command::ReportAll])
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::BadParameter(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    /// Evidence only; never affects the exit status.
    Report,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub command: String,
    pub status: Status,
    pub asserted: bool,
    pub summary: Value,
    pub failing_rows: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub header: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub output_dir: PathBuf,
    pub timings: BTreeMap<String, f64>,
}

impl RunOutcome {
    pub fn failures(&self) -> Vec<&CheckResult> {
        self.report.checks.iter().filter(|c| c.asserted && c.status == Status::Fail).collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures().is_empty() {
            0
        } else {
            1
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.report.checks.iter().find(|c| c.name == name)
    }
}

/// 2 for an invalid config, 1 for any other error.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigInvalid(_) => 2,
        _ => 1,
    }
}

/// The output directory: `OULAB_OUTPUT_DIR` if set, else the config's.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&config.output_dir),
    }
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunOutcome> {
    run_in(command, config, &resolve_output_dir(config))
}

/// Runs `command` on a pool of `config.workers` threads, writing into `out`.
pub fn run_in(command: Command, config: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::BadParameter(e.to_string()))?;
    let model = config.model.build(config.window).map_err(|e| invalid(format!("model: {e}")))?;
    let mut ctx = Context {
        config,
        model,
        x0: config.x0(),
        out: out.to_path_buf(),
        checks: Vec::new(),
        artifacts: Vec::new(),
        timings: BTreeMap::new(),
        kappa: None,
    };
    let commands: Vec<Command> = match command {
        Command::ReportAll => Command::SUITE.to_vec(),
        c => vec![c],
    };
    pool.install(|| -> Result<()> {
        for c in commands {
            let started = Instant::now();
            let before = ctx.checks.len();
            if let Err(e) = ctx.dispatch(c) {
                if let Error::Io(_) = e {
                    return Err(e);
                }
                ctx.checks.truncate(before);
                ctx.push(c, c.name(), Status::Fail, true, json!({ "error": e.to_string() }), vec![e.to_string()]);
            }
            ctx.timings.insert(c.name().into(), started.elapsed().as_secs_f64());
        }
        Ok(())
    })?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        config: config.clone(),
        checks: ctx.checks,
        artifacts: ctx.artifacts,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let meta = json!({
        "command": command.name(),
        "workers": config.workers,
        "finished_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        "timings_seconds": ctx.timings,
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(RunOutcome { report, output_dir: out.to_path_buf(), timings: ctx.timings })
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    model: OperatorFamily,
    x0: DVector<f64>,
    out: PathBuf,
    checks: Vec<CheckResult>,
    artifacts: Vec<Artifact>,
    timings: BTreeMap<String, f64>,
    kappa: Option<(f64, Value)>,
}

fn c_re_im(z: num_complex::Complex64) -> [f64; 2] {
    [z.re, z.im]
}

impl Context<'_> {
    fn key(&self, label: &str) -> StreamKey {
        seed_stream(self.config.seed, label)
    }

    fn tol(&self) -> &Tolerances {
        &self.config.tolerances
    }

    fn push(&mut self, command: Command, name: &str, status: Status, asserted: bool, summary: Value, failing_rows: Vec<String>) {
        self.checks.push(CheckResult {
            name: name.into(),
            command: command.name().into(),
            status,
            asserted,
            summary,
            failing_rows,
        });
    }

    fn write_csv(&mut self, file: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut body = String::from(header);
        body.push('\n');
        for row in rows {
            body.push_str(&row);
            body.push('\n');
        }
        fs::write(self.out.join(file), body)?;
        self.artifacts.retain(|a| a.file != file);
        self.artifacts.push(Artifact { file: file.into(), header: header.into() });
        Ok(())
    }

    fn dispatch(&mut self, command: Command) -> Result<()> {
        match command {
            Command::Evolve => self.evolve(),
            Command::Covariance => self.covariance(),
            Command::Invariance => self.invariance(),
            Command::Diffcheck => self.diffcheck(),
            Command::Logsob => self.logsob(),
            Command::Hyper => self.hyper(),
            Command::Spde => self.spde(),
            Command::Ergodic => self.ergodic(),
            Command::ReportAll => unreachable!("expanded by run_in"),
        }
    }

    fn evolve(&mut self) -> Result<()> {
        let w = self.config.window;
        let mut rng = self.key("evolve/triples").rng();
        let triples: Vec<[f64; 3]> = (0..self.config.evolve.triples)
            .map(|_| {
                let mut v = [0.0; 3].map(|_| w.t_min + (w.t_max - w.t_min) * rng.next_f64());
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let model = &self.model;
        let errors: Vec<f64> = triples
            .par_iter()
            .map(|&[s, r, t]| {
                let direct = evolve(model, s, t)?;
                let chained = &evolve(model, r, t)?.matrix * &evolve(model, s, r)?.matrix;
                Ok(linalg::operator_norm(&(direct.matrix - chained)))
            })
            .collect::<Result<_>>()?;
        let tol = self.tol().chain;
        let max = errors.iter().cloned().fold(0.0, f64::max);
        let failing = triples
            .iter()
            .zip(&errors)
            .filter(|(_, &e)| e > tol)
            .map(|(v, e)| format!("s={} r={} t={} error={e:.3e}", v[0], v[1], v[2]))
            .collect();
        self.write_csv(
            "evolve_chain.csv",
            "s,r,t,error",
            triples.iter().zip(&errors).map(|(v, &e)| csv_row([v[0], v[1], v[2], e])),
        )?;
        let mut rows = Vec::new();
        for &[s, t] in &self.config.evolve.pairs {
            let u = evolve(&self.model, s, t)?;
            for i in 0..u.matrix.nrows() {
                for j in 0..u.matrix.ncols() {
                    rows.push(format!("{},{},{i},{j},{}", fmt17(s), fmt17(t), fmt17(u.matrix[(i, j)])));
                }
            }
        }
        self.write_csv("evolve_maps.csv", "s,t,i,j,value", rows)?;
        self.push(
            Command::Evolve,
            "chain_law",
            Status::from_bool(max <= tol),
            true,
            json!({ "triples": errors.len(), "max_error": max, "tolerance": tol }),
            failing,
        );
        Ok(())
    }

    /// Closed-form q_k(t,s) of the constant diagonal model, if that is the model.
    fn constant_mode_variance(&self, tau: f64) -> Option<f64> {
        match self.config.model {
            ModelSpec::DiagonalConstant { lambda, b, .. } => Some(if lambda == 0.0 {
                b * b * tau
            } else if tau.is_infinite() {
                if lambda < 0.0 {
                    b * b / (-2.0 * lambda)
                } else {
                    f64::INFINITY
                }
            } else {
                b * b * (-(2.0 * lambda * tau).exp_m1()) / (-2.0 * lambda)
            }),
            _ => None,
        }
    }

    fn covariance(&mut self) -> Result<()> {
        let mut kernels: Vec<CovarianceKernel> = Vec::new();
        for &[s, t] in &self.config.covariance.pairs {
            kernels.push(q_kernel(&self.model, s, t)?);
        }
        for &t in &self.config.covariance.infinity_times {
            kernels.push(q_infinity(&self.model, t, self.tol().tail)?);
        }
        let mut entries = Vec::new();
        let mut summary_rows = Vec::new();
        let mut worst_entry: f64 = 0.0;
        let mut worst_trace: f64 = 0.0;
        let mut failing = Vec::new();
        let mut closed_form = true;
        for k in &kernels {
            let m = k.q.matrix();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    entries.push(format!("{},{},{i},{j},{}", fmt17(k.s), fmt17(k.t), fmt17(m[(i, j)])));
                }
            }
            let (s_star, bound) = k.tail.map_or((f64::NAN, 0.0), |t| (t.s_star, t.bound));
            summary_rows.push(csv_row([k.s, k.t, k.trace(), k.meta.error_estimate, k.meta.evaluations as f64, s_star, bound]));
            match self.constant_mode_variance(k.t - k.s) {
                Some(q) => {
                    let entry_tol = if k.s.is_infinite() { self.tol().tail } else { self.tol().kernel };
                    let expected = nalgebra::DMatrix::identity(m.nrows(), m.ncols()) * q;
                    let entry = (m - &expected).amax();
                    let trace = (k.trace() - q * m.nrows() as f64).abs();
                    worst_entry = worst_entry.max(entry);
                    worst_trace = worst_trace.max(trace);
                    if entry > entry_tol || trace > self.tol().trace {
                        failing.push(format!("s={} t={} entry_error={entry:.3e} trace_error={trace:.3e}", k.s, k.t));
                    }
                }
                None => closed_form = false,
            }
        }
        self.write_csv("covariance.csv", "s,t,i,j,value", entries)?;
        self.write_csv(
            "covariance_summary.csv",
            "s,t,trace,error_estimate,evaluations,s_star,tail_bound",
            summary_rows,
        )?;
        let traces: Vec<Value> = kernels.iter().map(|k| json!({ "s": fmt17(k.s), "t": k.t, "trace": k.trace() })).collect();
        let status = if closed_form { Status::from_bool(failing.is_empty()) } else { Status::Report };
        self.push(
            Command::Covariance,
            "covariance_kernel",
            status,
            closed_form,
            json!({
                "kernels": traces,
                "closed_form": closed_form,
                "max_entry_error": worst_entry,
                "max_trace_error": worst_trace,
            }),
            failing,
        );
        Ok(())
    }

    fn invariance(&mut self) -> Result<()> {
        let cfg = &self.config.invariance;
        let axis = |[lo, hi]: [f64; 2]| -> Vec<f64> {
            (0..cfg.points).map(|i| lo + (hi - lo) * i as f64 / (cfg.points - 1) as f64).collect()
        };
        let (s_axis, t_axis) = (axis(cfg.s_range), axis(cfg.t_range));
        let pairs: Vec<(f64, f64)> =
            s_axis.iter().flat_map(|&s| t_axis.iter().filter(move |&&t| s <= t).map(move |&t| (s, t))).collect();
        let tol = self.tol().clone();
        let mut rows = Vec::new();
        let record = |rows: &mut Vec<String>, rep: &InvarianceReport| {
            for r in &rep.rows {
                let [lr, li] = c_re_im(r.lhs);
                let [rr, ri] = c_re_im(r.rhs);
                let [dr, di] = c_re_im(r.dual_error);
                rows.push(format!("{},{}", rep.label, csv_row([r.s, r.t, r.probe as f64, lr, li, rr, ri, r.abs_error, dr, di])));
            }
        };
        let summary = |rep: &InvarianceReport| {
            json!({
                "pairs": pairs.len(),
                "probes": rep.probe_count,
                "max_abs_error": rep.max_abs_error,
                "max_rel_error": rep.max_rel_error,
                "max_form_gap": rep.max_form_gap,
                "tolerance": rep.tolerance,
            })
        };
        let failing = |rep: &InvarianceReport| -> Vec<String> {
            rep.rows
                .iter()
                .filter(|r| r.abs_error > rep.tolerance)
                .take(20)
                .map(|r| format!("{} s={} t={} probe={} error={:.3e}", rep.label, r.s, r.t, r.probe, r.abs_error))
                .collect()
        };

        let probes = probe_set(self.model.dim(), cfg.probes, self.key("invariance/probes"));
        let gamma = verify_invariance(&EvolutionSystem::gamma(&self.model, tol.tail), &pairs, &probes, tol.invariance)?;
        record(&mut rows, &gamma);
        let (g_summary, g_fail) = (summary(&gamma), failing(&gamma));
        self.push(Command::Invariance, "invariance_gamma", Status::from_bool(gamma.pass), true, g_summary, g_fail);

        if cfg.nonunique_demo {
            let demo = make_nonunique_demo(cfg.demo_n, self.config.window)?;
            let e1 = DVector::from_fn(cfg.demo_n, |k, _| if k == 0 { 1.0 } else { 0.0 });
            let demo_probes = probe_set(cfg.demo_n, cfg.probes, self.key("invariance/demo_probes"));
            let run = |shift: Shift, label: &str| {
                verify_invariance(&EvolutionSystem::with_shift(&demo, tol.tail, shift, label), &pairs, &demo_probes, tol.invariance_demo)
            };
            let base = run(Shift::None, "demo_gamma")?;
            let moved = run(Shift::Mass { direction: e1.clone() }, "demo_shifted")?;
            let reciprocal = run(Shift::ReciprocalMass { direction: e1 }, "demo_reciprocal")?;
            for rep in [&base, &moved, &reciprocal] {
                record(&mut rows, rep);
            }
            // the two systems differ, so the family has more than one evolution system
            let t_probe = pairs[0].1;
            let separation = (base.rows.iter().zip(&moved.rows))
                .filter(|(a, _)| a.t == t_probe)
                .map(|(a, b)| (a.lhs - b.lhs).norm())
                .fold(0.0, f64::max);
            let both = base.pass && moved.pass && separation > 10.0 * tol.invariance_demo;
            let mut fails = failing(&base);
            fails.extend(failing(&moved));
            self.push(
                Command::Invariance,
                "invariance_nonunique",
                Status::from_bool(both),
                true,
                json!({ "gamma": summary(&base), "shifted": summary(&moved), "separation": separation }),
                fails,
            );
            let rec_summary = summary(&reciprocal);
            self.push(Command::Invariance, "invariance_nonunique_reciprocal", Status::Report, false, rec_summary, Vec::new());
        }
        self.write_csv(
            "invariance.csv",
            "system,s,t,probe,lhs_re,lhs_im,rhs_re,rhs_im,abs_error,dual_re,dual_im",
            rows,
        )
    }

    fn diffcheck(&mut self) -> Result<()> {
        let cfg = self.config.diffcheck.clone();
        let tol = self.tol().clone();
        let (model, x0) = (&self.model.clone(), &self.x0.clone());
        let probes = trig_probes(model.dim(), cfg.probes, self.key("diffcheck/probes"));
        let reports = probes
            .par_iter()
            .map(|phi| check_differentiation(model, cfg.s, cfg.t, phi, x0, cfg.fd_step))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut failing = Vec::new();
        let mut max_error: f64 = 0.0;
        let mut max_gap: f64 = 0.0;
        let (mut ds_sum, mut ds_half, mut dt_sum, mut dt_half) = (0.0, 0.0, 0.0, 0.0);
        for (i, r) in reports.iter().enumerate() {
            for (name, step, c) in [
                ("ds", r.fd_step, r.ds),
                ("dt", r.fd_step, r.dt),
                ("ds", r.fd_step / 2.0, r.ds_half),
                ("dt", r.fd_step / 2.0, r.dt_half),
            ] {
                let [fr, fi] = c_re_im(c.finite_difference);
                let [cr, ci] = c_re_im(c.formula);
                rows.push(format!("{i},{name},{}", csv_row([step, fr, fi, cr, ci, c.error])));
            }
            let gap = r.l_outside_gap.max(r.l_inside_gap);
            max_error = max_error.max(r.max_error());
            max_gap = max_gap.max(gap);
            if r.max_error() > tol.fd || gap > tol.fd {
                failing.push(format!("probe {i}: fd error {:.3e}, closed-form gap {gap:.3e}", r.max_error()));
            }
            ds_sum += r.ds.error;
            ds_half += r.ds_half.error;
            dt_sum += r.dt.error;
            dt_half += r.dt_half.error;
        }
        self.write_csv("diffcheck.csv", "probe,derivative,step,fd_re,fd_im,formula_re,formula_im,error", rows)?;
        let fd_ok = failing.is_empty();
        self.push(
            Command::Diffcheck,
            "differentiation",
            Status::from_bool(fd_ok),
            true,
            json!({ "probes": reports.len(), "fd_step": cfg.fd_step, "max_error": max_error, "max_closed_form_gap": max_gap, "tolerance": tol.fd }),
            failing,
        );

        let ratios = [ds_sum / ds_half, dt_sum / dt_half];
        let band = tol.order_low..=tol.order_high;
        let order_ok = ratios.iter().all(|r| band.contains(r));
        self.push(
            Command::Diffcheck,
            "differentiation_order",
            Status::from_bool(order_ok),
            true,
            json!({ "ds_ratio": ratios[0], "dt_ratio": ratios[1], "band": [tol.order_low, tol.order_high] }),
            if order_ok { Vec::new() } else { vec![format!("halving ratios {ratios:?}")] },
        );

        let directions = probe_set(model.dim(), cfg.probes, self.key("diffcheck/directions"));
        let checks = directions
            .par_iter()
            .map(|h| {
                Ok((
                    check_dt_quadratic_form(model, cfg.s, cfg.t, h, cfg.fd_step)?,
                    check_ds_quadratic_form(model, cfg.s, cfg.t, h, cfg.fd_step)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut failing = Vec::new();
        let mut worst: f64 = 0.0;
        for (i, (dt, ds)) in checks.iter().enumerate() {
            for (name, c) in [("dt", dt), ("ds", ds)] {
                rows.push(format!("{i},{name},{}", csv_row([c.finite_difference, c.formula, c.abs_error])));
                worst = worst.max(c.abs_error);
                if c.abs_error > tol.derivative {
                    failing.push(format!("direction {i} {name}: error {:.3e}", c.abs_error));
                }
            }
        }
        self.write_csv("qform_derivatives.csv", "direction,derivative,fd,formula,abs_error", rows)?;
        let ok = failing.is_empty();
        self.push(
            Command::Diffcheck,
            "covariance_derivatives",
            Status::from_bool(ok),
            true,
            json!({ "directions": checks.len(), "max_error": worst, "tolerance": tol.derivative }),
            failing,
        );

        if cfg.gradient_samples > 0 {
            let mut rows = Vec::new();
            let mut failing = Vec::new();
            for (i, phi) in probes.iter().take(3).enumerate() {
                let obs = SmoothObservable::from_trig(phi.clone());
                let key = self.key("diffcheck/gradient").substream(i as u64);
                let r = gradient_estimate_check(&self.model, cfg.s, cfg.t, &obs, &self.x0, cfg.gradient_samples, key)?;
                rows.push(format!("{i},{}", csv_row([r.lhs, r.lhs_stderr, r.cm_norm, r.smoothed_gradient, r.rhs, r.combined_stderr])));
                if !r.pass {
                    failing.push(format!("probe {i}: lhs {} > rhs {}", r.lhs, r.rhs));
                }
            }
            let ok = failing.is_empty();
            let probes = rows.len();
            self.write_csv("gradient.csv", "probe,lhs,lhs_stderr,cm_norm,smoothed_gradient,rhs,combined_stderr", rows)?;
            self.push(
                Command::Diffcheck,
                "gradient_estimate",
                Status::from_bool(ok),
                true,
                json!({ "probes": probes, "samples": cfg.gradient_samples }),
                failing,
            );
        }
        Ok(())
    }

    /// κ from the config, or from a Cameron–Martin decay certificate ending at logsob.t.
    fn resolve_kappa(&mut self) -> Result<f64> {
        if let Some((k, _)) = &self.kappa {
            return Ok(*k);
        }
        let cfg = &self.config.logsob;
        let (k, summary) = match cfg.kappa {
            Some(k) => (k, json!({ "kappa": k, "source": "config" })),
            None => {
                let grid = lattice_pairs(cfg.t - cfg.certificate_span, cfg.t, cfg.certificate_points);
                let cert = fit_decay(&self.model, &grid, DecayMode::CameronMartin)?;
                let k = kappa(&cert)?;
                let summary = json!({
                    "kappa": k,
                    "source": "certificate",
                    "constant": cert.constant,
                    "rate": cert.rate,
                    "alpha": cert.alpha,
                    "residual": cert.residual,
                    "sound": cert.is_sound(),
                });
                (k, summary)
            }
        };
        let mut summary = summary;
        let status = match cfg.kappa_expected {
            Some(e) => {
                summary["expected"] = json!(e);
                summary["tolerance"] = json!(self.tol().kappa);
                Status::from_bool((k - e).abs() <= self.tol().kappa)
            }
            None => Status::Report,
        };
        let failing = if status == Status::Fail { vec![format!("kappa {k} vs expected {:?}", cfg.kappa_expected)] } else { Vec::new() };
        let command = Command::Logsob;
        self.push(command, "kappa_certificate", status, status != Status::Report, summary.clone(), failing);
        self.kappa = Some((k, summary));
        Ok(k)
    }

    fn logsob(&mut self) -> Result<()> {
        let k = self.resolve_kappa()?;
        let cfg = self.config.logsob.clone();
        let tol = self.tol().clone();
        let setup = LogSobolevSetup::new(&self.model, cfg.t, k, tol.tail)?;
        let suite = probe_suite(self.model.dim())?;
        let cells: Vec<(usize, f64)> = (0..suite.len()).flat_map(|i| cfg.p_values.iter().map(move |&p| (i, p))).collect();
        let key = self.key("logsob/mc");
        let results = cells
            .par_iter()
            .enumerate()
            .map(|(c, &(i, p))| {
                let (label, phi) = &suite[i];
                let quad = entropy_gap(&setup, label, phi, p, Integration::Quadrature)?;
                let mc = if cfg.mc_samples > 0 {
                    let method = Integration::MonteCarlo { count: cfg.mc_samples, key: key.substream(c as u64) };
                    Some(entropy_gap(&setup, label, phi, p, method)?)
                } else {
                    None
                };
                Ok((phi.directions().len(), quad, mc))
            })
            .collect::<Result<Vec<_>>>()?;
        let slack_ok = |r: &LogSobolevReport| r.slack >= -tol.slack_sigmas * r.error - r.rounding;
        let mut rows = Vec::new();
        let mut failing = Vec::new();
        let mut agree_fail = Vec::new();
        let mut min_slack = f64::INFINITY;
        for (dims, quad, mc) in &results {
            for r in std::iter::once(quad).chain(mc) {
                let verdict = if slack_ok(r) { "PASS" } else { "FAIL" };
                rows.push(format!(
                    "{},{},{},{verdict}",
                    r.label,
                    r.method,
                    csv_row([r.p, r.lhs, r.lhs_error, r.energy, r.rhs, r.rhs_error, r.slack, r.error])
                ));
                min_slack = min_slack.min(r.slack);
                if !slack_ok(r) {
                    failing.push(format!("{} p={} {}: slack {:.3e}, error {:.3e}", r.label, r.p, r.method, r.slack, r.error));
                }
            }
            if let (1, Some(m)) = (dims, mc) {
                let lhs_gap = (quad.lhs - m.lhs).abs();
                let rhs_gap = (quad.rhs - m.rhs).abs();
                if lhs_gap > tol.mc_sigmas * (m.lhs_error + quad.lhs_error) + 1e-12
                    || rhs_gap > tol.mc_sigmas * (m.rhs_error + quad.rhs_error) + 1e-12
                {
                    agree_fail.push(format!("{} p={}: lhs gap {lhs_gap:.3e}, rhs gap {rhs_gap:.3e}", quad.label, quad.p));
                }
            }
        }
        self.write_csv(
            "logsob.csv",
            "probe,method,p,lhs,lhs_error,energy,rhs,rhs_error,slack,error,verdict",
            rows,
        )?;
        let ok = failing.is_empty();
        self.push(
            Command::Logsob,
            "log_sobolev",
            Status::from_bool(ok),
            true,
            json!({ "kappa": k, "probes": suite.len(), "p_values": cfg.p_values, "min_slack": min_slack }),
            failing,
        );
        if cfg.mc_samples > 0 {
            let ok = agree_fail.is_empty();
            let one_dim = results.iter().filter(|r| r.0 == 1).count();
            self.push(
                Command::Logsob,
                "log_sobolev_mc_agreement",
                Status::from_bool(ok),
                true,
                json!({ "one_dimensional_cases": one_dim, "samples": cfg.mc_samples, "sigmas": tol.mc_sigmas }),
                agree_fail,
            );
        }
        Ok(())
    }

    fn hyper(&mut self) -> Result<()> {
        let k = self.resolve_kappa()?;
        let cfg = self.config.hyper.clone();
        let tol = self.tol().clone();
        let setup = HyperSetup::new(&self.model, cfg.s, cfg.t, k, tol.tail)?;
        let p_max = setup.p_max(cfg.q);
        let probes = hyper_probes(self.model.dim())?;
        let mut exponents: Vec<f64> = cfg.p_values.clone();
        if !exponents.contains(&cfg.q) {
            exponents.push(cfg.q);
        }
        let cells: Vec<(f64, f64)> = exponents.iter().map(|&p| (cfg.q, p)).collect();
        let method = if cfg.mc_samples > 0 {
            Integration::MonteCarlo { count: cfg.mc_samples, key: self.key("hyper/mc") }
        } else {
            Integration::Quadrature
        };
        let reports = hyper_cells(&setup, &cells, &probes, method)?;
        // within 3 errors, and p on or under the curve up to the κ tolerance
        let holds = |r: &HyperReport| r.slack >= -tol.slack_sigmas * r.error;
        let beyond = |r: &HyperReport| r.p > r.p_max * (1.0 + 1e-9);
        let row_text = |r: &HyperReport| format!("{} q={} p={} p_max={:.6} lhs={:.6e} rhs={:.6e}", r.label, r.q, r.p, r.p_max, r.lhs, r.rhs);
        self.write_csv(
            "hyper.csv",
            &format!("probe,{LATTICE_HEADER}"),
            reports.iter().map(|r| {
                let verdict = if holds(r) && !beyond(r) { "PASS" } else { "FAIL" };
                format!("{},{},{verdict}", r.label, csv_row([r.s, r.t, r.q, r.p, r.p_max, r.lhs, r.rhs, r.slack, r.error]))
            }),
        )?;

        let inside: Vec<&HyperReport> = reports.iter().filter(|r| !beyond(r)).collect();
        let failing: Vec<String> = inside.iter().filter(|r| !holds(r)).map(|r| row_text(r)).collect();
        let ok = failing.is_empty();
        self.push(
            Command::Hyper,
            "hyper_norm",
            Status::from_bool(ok),
            true,
            json!({ "kappa": k, "q": cfg.q, "p_max": p_max, "rows": inside.len(), "probes": probes.len() }),
            failing,
        );
        let contraction: Vec<&HyperReport> = reports.iter().filter(|r| r.p == cfg.q).collect();
        let failing: Vec<String> = contraction.iter().filter(|r| !holds(r)).map(|r| row_text(r)).collect();
        let ok = failing.is_empty();
        self.push(Command::Hyper, "hyper_contraction", Status::from_bool(ok), true, json!({ "rows": contraction.len() }), failing);

        let family = ramp_family(self.model.dim(), &cfg.ramp_lambdas, cfg.ramp_cap);
        let sharp = sharpness_probe(&setup, cfg.q, &cfg.sharpness_p, &family);
        self.write_csv(
            "sharpness.csv",
            "p,p_max,best,ratio,error,violation",
            sharp.iter().map(|r| format!("{},{},{},{},{},{}", fmt17(r.p), fmt17(r.p_max), r.best, fmt17(r.ratio), fmt17(r.error), r.violation)),
        )?;
        let sharp_rows: Vec<String> = sharp
            .iter()
            .map(|r| format!("sharpness p={} ratio={:.6} error={:.1e} ({}) violation={}", r.p, r.ratio, r.error, r.best, r.violation))
            .collect();
        self.push(
            Command::Hyper,
            "hyper_sharpness",
            Status::Report,
            false,
            json!({
                "p_max": p_max,
                "rows": sharp.iter().map(|r| json!({ "p": r.p, "ratio": r.ratio, "error": r.error, "best": r.best, "violation": r.violation })).collect::<Vec<_>>(),
            }),
            Vec::new(),
        );

        let outside: Vec<&HyperReport> = reports.iter().filter(|r| beyond(r)).collect();
        if !outside.is_empty() {
            let mut rows: Vec<String> = outside.iter().map(|r| row_text(r)).collect();
            rows.extend(sharp_rows);
            let status = if cfg.assert { Status::Fail } else { Status::Report };
            self.push(
                Command::Hyper,
                "hyper_curve",
                status,
                cfg.assert,
                json!({ "p_max": p_max, "beyond_curve": outside.iter().map(|r| r.p).collect::<Vec<_>>() }),
                rows,
            );
        }
        Ok(())
    }

    fn spde(&mut self) -> Result<()> {
        let cfg = self.config.spde.clone();
        let tol = self.tol().clone();
        let ens = simulate(&self.model, cfg.s, cfg.t, &self.x0, cfg.step, cfg.paths, self.key("spde/law"), Recording::Terminal)?;
        let law = law_check(&ens, &self.model, tol.z_max)?;
        let n = ens.dim;
        let mut rows = Vec::new();
        let mut failing = Vec::new();
        for i in 0..n {
            rows.push(format!("mean,{i},{i},{}", csv_row([law.empirical_mean[i], law.expected_mean[i], law.mean_z[i]])));
            if law.mean_z[i].abs() > tol.z_max {
                failing.push(format!("mean[{i}] z = {:.3}", law.mean_z[i]));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let z = law.cov_z[i * n + j];
                rows.push(format!("cov,{i},{j},{}", csv_row([law.empirical_cov[(i, j)], law.expected_cov[(i, j)], z])));
                if z.abs() > tol.z_max {
                    failing.push(format!("cov[{i},{j}] z = {z:.3}"));
                }
            }
        }
        self.write_csv("spde_law.csv", "quantity,i,j,empirical,expected,z", rows)?;
        self.push(
            Command::Spde,
            "spde_law",
            Status::from_bool(law.pass),
            true,
            json!({ "paths": ens.count, "scheme": format!("{:?}", ens.scheme), "step": ens.step, "max_abs_z": law.max_abs_z, "bias_allowance": law.bias_allowance, "z_max": tol.z_max }),
            failing,
        );

        let h = DVector::from_fn(n, |k, _| if k == 0 { 1.0 } else { 0.0 });
        let phi = TrigPolynomial::cos(h);
        let obs = observable_check(&ens, &self.model, &phi, tol.mc_sigmas, law.bias_allowance)?;
        let text = format!("empirical {:.6} vs exact {:.6}, stderr {:.2e}", obs.empirical.re, obs.exact.re, obs.stderr);
        self.push(
            Command::Spde,
            "spde_observable",
            Status::from_bool(obs.pass),
            true,
            json!({ "observable": "cos<e_1,x>", "empirical": c_re_im(obs.empirical), "exact": c_re_im(obs.exact), "stderr": obs.stderr }),
            if obs.pass { Vec::new() } else { vec![text] },
        );

        if cfg.csv_paths > 0 {
            let sample = simulate(
                &self.model,
                cfg.s,
                cfg.t,
                &self.x0,
                cfg.step,
                cfg.csv_paths,
                self.key("spde/paths"),
                Recording::Every(cfg.record_every),
            )?;
            let body = sample.to_csv();
            let mut lines = body.lines();
            let header = lines.next().unwrap_or_default().to_string();
            let rows: Vec<String> = lines.map(str::to_string).collect();
            self.write_csv("spde_paths.csv", &header, rows)?;
        }
        Ok(())
    }

    fn ergodic(&mut self) -> Result<()> {
        let cfg = self.config.ergodic.clone();
        let n = self.model.dim();
        let phi = TrigPolynomial::exponential(DVector::from_fn(n, |k, _| if k == 0 { 1.0 } else { 0.0 }));
        let rep = verify_ergodic_limit(&self.model, cfg.t, &self.x0, &cfg.s_values, &phi, self.tol().tail)?;
        self.write_csv(
            "ergodic.csv",
            "s,value_re,value_im,gap,envelope",
            rep.rows.iter().map(|r| csv_row([r.s, r.value.re, r.value.im, r.gap, r.envelope])),
        )?;
        let tol = self.tol().ergodic;
        let ok = rep.monotone && rep.final_gap <= tol;
        let failing = if ok {
            Vec::new()
        } else {
            rep.rows.iter().map(|r| format!("s={} gap={:.3e} envelope={:.3e}", r.s, r.gap, r.envelope)).collect()
        };
        self.push(
            Command::Ergodic,
            "ergodic_limit",
            Status::from_bool(ok),
            true,
            json!({
                "limit": c_re_im(rep.limit),
                "monotone": rep.monotone,
                "within_envelope": rep.within_envelope,
                "final_gap": rep.final_gap,
                "tolerance": tol,
            }),
            failing,
        );
        Ok(())
    }
}
