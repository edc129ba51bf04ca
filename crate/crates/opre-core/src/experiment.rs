//! Experiment configs, the replication runner and result emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::contact::{cppr_instance, survival_probe, CpprModel};
use crate::couplings::{random_small_instance, validate_coupling, CouplingKind};
use crate::environment::{build_embedding, sample_stretches, ChiMode, Distribution, StretchSpec};
use crate::error::{Error, Result};
use crate::kernels::{check_kernel_bounds, ConnectionFamily};
use crate::multiscale::{build_schedule, first_block_bad, ScheduleParams, BAD_PROB_MAX_SCALE};
use crate::percolation::{
    crossing_reduced, reduce_rectangle, sample_opre, sample_temporal_stretches, survival_depth,
    temporal_survival_depth, CrossingKind, Ground, Rectangle,
};
use crate::rng::Seed;
use crate::stats::wilson_ci;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Percolate,
    Crossing,
    Blocks,
    Contact,
    Couple,
    Temporal,
    KernelAudit,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Percolate => "percolate",
            ExperimentKind::Crossing => "crossing",
            ExperimentKind::Blocks => "blocks",
            ExperimentKind::Contact => "contact",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Temporal => "temporal",
            ExperimentKind::KernelAudit => "kernel-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "one_u64")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "one_usize")]
    pub workers: usize,
    #[serde(default)]
    pub format: OutputFormat,
    /// Keep one row of raw values per replication.
    #[serde(default)]
    pub raw_samples: bool,
    /// Record wall time; off by default so result files are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub params: Value,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, params: Value) -> Self {
        ExperimentConfig {
            experiment,
            replications: 1,
            seed: 0,
            output: None,
            workers: 1,
            format: OutputFormat::Csv,
            raw_samples: false,
            timing: false,
            params,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form, ignoring fields that cannot change results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(m) = &mut v {
            for k in ["workers", "output", "format"] {
                m.remove(k);
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<Params> {
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        Params::parse(self.experiment, &self.params)
    }
}

/// Parameters used when no config file is given.
pub fn default_params(kind: ExperimentKind) -> Value {
    match kind {
        ExperimentKind::Percolate => serde_json::json!({
            "vertex": {"kind": "constant", "p": 0.9},
            "edge": {"kind": "constant", "p": 0.9},
            "depth": 200
        }),
        ExperimentKind::Crossing => serde_json::json!({
            "stretches": {"xi": {"kind": "constant", "value": 0.0}, "nu": {"kind": "exponential", "rate": 1.0}},
            "vertex": {"kind": "power", "lambda": 3.0},
            "edge": {"kind": "power", "lambda": 3.0},
            "rect": {"t0": 0, "t1": 40, "a": 0, "b": 20},
            "columns": 60
        }),
        ExperimentKind::Blocks => serde_json::json!({
            "stretches": {"xi": {"kind": "constant", "value": 0.0}, "nu": {"kind": "geometric", "p": 0.1}},
            "schedule": {"epsilon": 4.0, "alpha": 2.0, "gamma": 1.5, "l0": 32, "mu": 0.7, "beta": 0.8},
            "k": 1
        }),
        ExperimentKind::Contact => serde_json::json!({
            "model": {"kind": "uniform"},
            "lambda": [1.0, 5.0, 20.0],
            "n": 400,
            "horizon": 200.0
        }),
        ExperimentKind::Couple => serde_json::json!({"kind": "cppr_uni"}),
        ExperimentKind::Temporal => serde_json::json!({
            "p": 0.9,
            "nu": {"kind": "stretched_exp", "a": 0.5},
            "depths": [10, 100, 1000]
        }),
        ExperimentKind::KernelAudit => serde_json::json!({
            "family": {"kind": "cppr_uniform", "lambda": 2.0},
            "s_hi": 10000
        }),
    }
}

fn parse_at<T: DeserializeOwned>(v: &Value) -> Result<T> {
    serde_path_to_error::deserialize(v.clone()).map_err(|e| {
        let p = e.path().to_string();
        let path = if p == "." { "params".to_string() } else { format!("params.{p}") };
        Error::config(path, e.into_inner().to_string())
    })
}

/// Re-anchor a library validation error at a config path.
fn at(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("{prefix}.{name}"), reason),
        other => Error::config(prefix, other.to_string()),
    })
}

fn zero_stretches() -> StretchSpec {
    StretchSpec::new(Distribution::Constant { value: 0.0 }, Distribution::Constant { value: 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercolateParams {
    #[serde(default = "zero_stretches")]
    pub stretches: StretchSpec,
    pub vertex: ConnectionFamily,
    pub edge: ConnectionFamily,
    pub depth: u32,
    /// Right-most column; defaults to `2 * depth`.
    #[serde(default)]
    pub width: Option<u32>,
    /// Columns sit on renewal points instead of every integer.
    #[serde(default)]
    pub embedded: bool,
    /// One environment for all replications instead of a fresh one each.
    #[serde(default)]
    pub fixed_environment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingParams {
    #[serde(default = "zero_stretches")]
    pub stretches: StretchSpec,
    pub vertex: ConnectionFamily,
    pub edge: ConnectionFamily,
    pub rect: Rectangle,
    #[serde(default)]
    pub chi: ChiMode,
    /// Number of environment columns to sample.
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksParams {
    pub stretches: StretchSpec,
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub relaxed: bool,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    pub model: CpprModel,
    pub lambda: Vec<f64>,
    pub n: usize,
    pub horizon: f64,
}

fn default_paths() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleParams {
    pub kind: CouplingKind,
    #[serde(default = "default_paths")]
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalParams {
    pub p: f64,
    pub nu: Distribution,
    pub depths: Vec<u32>,
    #[serde(default)]
    pub width: Option<u32>,
}

fn one_u64_s() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelAuditParams {
    pub family: ConnectionFamily,
    #[serde(default = "one_u64_s")]
    pub s_lo: u64,
    pub s_hi: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Percolate(PercolateParams),
    Crossing(CrossingParams),
    Blocks(BlocksParams),
    Contact(ContactParams),
    Couple(CoupleParams),
    Temporal(TemporalParams),
    KernelAudit(KernelAuditParams),
}

fn check_stretches(prefix: &str, s: &StretchSpec) -> Result<()> {
    at(&format!("{prefix}.xi"), s.xi.validate())?;
    at(&format!("{prefix}.nu"), s.nu.validate())?;
    at(prefix, s.validate())
}

impl Params {
    pub fn parse(kind: ExperimentKind, v: &Value) -> Result<Params> {
        let p = match kind {
            ExperimentKind::Percolate => {
                let p: PercolateParams = parse_at(v)?;
                check_stretches("params.stretches", &p.stretches)?;
                at("params.vertex", p.vertex.validate())?;
                at("params.edge", p.edge.validate())?;
                if p.depth == 0 {
                    return Err(Error::config("params.depth", "must be at least 1"));
                }
                if p.width == Some(0) {
                    return Err(Error::config("params.width", "must be at least 1"));
                }
                Params::Percolate(p)
            }
            ExperimentKind::Crossing => {
                let p: CrossingParams = parse_at(v)?;
                check_stretches("params.stretches", &p.stretches)?;
                at("params.vertex", p.vertex.validate())?;
                at("params.edge", p.edge.validate())?;
                let r = p.rect;
                if r.t0 >= r.t1 || r.a >= r.b || r.a < 0 {
                    return Err(Error::config("params.rect", "need t0 < t1 and 0 <= a < b"));
                }
                if p.columns < 2 {
                    return Err(Error::config("params.columns", "must be at least 2"));
                }
                if let ChiMode::BurnIn(b) = p.chi {
                    if b as usize + 2 > p.columns {
                        return Err(Error::config("params.chi", "burn-in must leave columns to embed"));
                    }
                }
                Params::Crossing(p)
            }
            ExperimentKind::Blocks => {
                let p: BlocksParams = parse_at(v)?;
                check_stretches("params.stretches", &p.stretches)?;
                if p.k > BAD_PROB_MAX_SCALE {
                    return Err(Error::config("params.k", format!("at most {BAD_PROB_MAX_SCALE}")));
                }
                build_schedule(p.schedule, p.k, p.relaxed).map_err(|e| Error::config("params.schedule", e.to_string()))?;
                Params::Blocks(p)
            }
            ExperimentKind::Contact => {
                let p: ContactParams = parse_at(v)?;
                if p.lambda.is_empty() {
                    return Err(Error::config("params.lambda", "need at least one rate"));
                }
                for (i, &l) in p.lambda.iter().enumerate() {
                    if !(l >= 0.0 && l.is_finite()) {
                        return Err(Error::config(format!("params.lambda[{i}]"), format!("must be finite and >= 0, got {l}")));
                    }
                }
                at("params.model", p.model.recovery_spec().validate())?;
                if p.n == 0 {
                    return Err(Error::config("params.n", "must be at least 1"));
                }
                if !(p.horizon > 0.0 && p.horizon.is_finite()) {
                    return Err(Error::config("params.horizon", "must be positive and finite"));
                }
                Params::Contact(p)
            }
            ExperimentKind::Couple => {
                let p: CoupleParams = parse_at(v)?;
                if p.paths == 0 {
                    return Err(Error::config("params.paths", "must be at least 1"));
                }
                Params::Couple(p)
            }
            ExperimentKind::Temporal => {
                let p: TemporalParams = parse_at(v)?;
                if !(p.p > 0.0 && p.p < 1.0) {
                    return Err(Error::config("params.p", format!("must lie in (0, 1), got {}", p.p)));
                }
                at("params.nu", p.nu.validate())?;
                if p.depths.is_empty() || p.depths.contains(&0) {
                    return Err(Error::config("params.depths", "need positive depths"));
                }
                if p.width == Some(0) {
                    return Err(Error::config("params.width", "must be at least 1"));
                }
                Params::Temporal(p)
            }
            ExperimentKind::KernelAudit => {
                let p: KernelAuditParams = parse_at(v)?;
                at("params.family", p.family.validate())?;
                if p.s_lo == 0 || p.s_hi < p.s_lo {
                    return Err(Error::config("params.s_hi", "need 1 <= s_lo <= s_hi"));
                }
                Params::KernelAudit(p)
            }
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub name: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
    pub seconds: f64,
}

impl EstimateRecord {
    /// Frequency with a 95% Wilson interval.
    pub fn frequency(name: impl Into<String>, successes: u64, n: u64, seconds: f64) -> Result<Self> {
        let (ci_lo, ci_hi) = wilson_ci(successes, n, 0.95)?;
        Ok(EstimateRecord {
            name: name.into(),
            estimate: successes as f64 / n as f64,
            ci_lo,
            ci_hi,
            n,
            seconds,
        })
    }

    /// A deterministic quantity, reported with a degenerate interval.
    pub fn exact(name: impl Into<String>, value: f64, n: u64, seconds: f64) -> Self {
        EstimateRecord {
            name: name.into(),
            estimate: value,
            ci_lo: value,
            ci_hi: value,
            n,
            seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub replications: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub meta: ResultMeta,
    pub records: Vec<EstimateRecord>,
    #[serde(default)]
    pub details: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<Vec<f64>>>,
}

pub const CSV_HEADER: &str = "name,estimate,ci_lo,ci_hi,n,seconds";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn records_csv(records: &[EstimateRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.name),
            r.estimate,
            r.ci_lo,
            r.ci_hi,
            r.n,
            r.seconds
        ));
    }
    out
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        format!(
            "# experiment={} version={} config_hash={} seed={} replications={}\n{}",
            m.experiment,
            m.version,
            m.config_hash,
            m.seed,
            m.replications,
            records_csv(&self.records)
        )
    }

    pub fn raw_csv(&self) -> Option<String> {
        self.raw.as_ref().map(|rows| {
            let mut out = format!("# config_hash={} seed={}\n", self.meta.config_hash, self.meta.seed);
            for (i, row) in rows.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                out.push_str(&format!("{i},{}\n", cells.join(",")));
            }
            out
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialises") + "\n"
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Write the result (and the raw dump next to it, for CSV) to `path`.
    pub fn write(&self, path: &Path, format: OutputFormat) -> Result<()> {
        std::fs::write(path, self.render(format)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if format == OutputFormat::Csv {
            if let Some(raw) = self.raw_csv() {
                let p = path.with_extension("raw.csv");
                std::fs::write(&p, raw).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            }
        }
        Ok(())
    }
}

/// Map replication indices to results on a pool of `workers` threads. The
/// output order is the index order whatever the scheduling.
pub fn par_reps<T, F>(workers: usize, reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Io(format!("thread pool: {e}")))?;
    pool.install(|| (0..reps).into_par_iter().map(&f).collect())
}

struct Clock {
    start: Instant,
    on: bool,
}

impl Clock {
    fn seconds(&self) -> f64 {
        if self.on {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = cfg.validate()?;
    let clock = Clock { start: Instant::now(), on: cfg.timing };
    let seed = Seed(cfg.seed);
    let reps = cfg.replications;
    let w = cfg.workers;
    let mut details = Value::Null;
    let (records, raw): (Vec<EstimateRecord>, Vec<Vec<f64>>) = match &params {
        Params::Percolate(p) => {
            let width = p.width.unwrap_or(2 * p.depth);
            let fixed = if p.fixed_environment {
                Some(sample_stretches(&p.stretches, width as usize + 1, seed.child("environment"))?)
            } else {
                None
            };
            let depths = par_reps(w, reps, |r| {
                let s = seed.derive(r, "percolate");
                let fresh;
                let env = match &fixed {
                    Some(e) => e,
                    None => {
                        fresh = sample_stretches(&p.stretches, width as usize + 1, s.child("environment"))?;
                        &fresh
                    }
                };
                let cfg = if p.embedded {
                    let emb = build_embedding(env, s, ChiMode::Zero)?;
                    sample_opre(Ground::Embedded(&emb), &p.vertex, &p.edge, p.depth, width, s)?
                } else {
                    sample_opre(Ground::Plain(env), &p.vertex, &p.edge, p.depth, width, s)?
                };
                Ok(survival_depth(&cfg, (0, 0)))
            })?;
            let hits = depths.iter().filter(|d| **d == Some(p.depth)).count() as u64;
            let rec = EstimateRecord::frequency(format!("survival(depth={})", p.depth), hits, reps, clock.seconds())?;
            let raw = depths.iter().map(|d| vec![d.map_or(-1.0, |d| d as f64)]).collect();
            (vec![rec], raw)
        }
        Params::Crossing(p) => {
            let rows = par_reps(w, reps, |r| {
                let s = seed.derive(r, "crossing");
                let env = sample_stretches(&p.stretches, p.columns, s.child("environment"))?;
                let emb = build_embedding(&env, s, p.chi)?;
                let red = match reduce_rectangle(&emb, &p.rect) {
                    Ok(red) => red,
                    Err(Error::InsufficientColumns { .. }) => return Ok(vec![1.0, 0.0, 0.0, 0.0]),
                    Err(e) => return Err(e),
                };
                let x_max = (red.ib + 1).min(emb.len() - 1).max(1) as u32;
                let cfg = sample_opre(Ground::Embedded(&emb), &p.vertex, &p.edge, p.rect.t1, x_max, s)?;
                let mut row = vec![0.0];
                for kind in CrossingKind::ALL {
                    row.push(if crossing_reduced(&cfg, &red, kind)? { 1.0 } else { 0.0 });
                }
                Ok(row)
            })?;
            let count = |i: usize| rows.iter().filter(|r| r[i] == 1.0).count() as u64;
            let mut recs = vec![EstimateRecord::frequency("degenerate", count(0), reps, clock.seconds())?];
            for (i, kind) in CrossingKind::ALL.iter().enumerate() {
                recs.push(EstimateRecord::frequency(format!("{kind:?}").to_uppercase(), count(i + 1), reps, clock.seconds())?);
            }
            (recs, rows)
        }
        Params::Blocks(p) => {
            let sched = build_schedule(p.schedule, p.k, p.relaxed)?;
            let bad = par_reps(w, reps, |r| first_block_bad(&p.stretches, &sched, p.k, seed.derive(r, "bad-block")))?;
            let hits = bad.iter().filter(|&&b| b).count() as u64;
            let rec = EstimateRecord::frequency(format!("bad(k={})", p.k), hits, reps, clock.seconds())?;
            let bound = (sched.l[p.k] as f64).powf(-sched.params.alpha);
            details = serde_json::json!({
                "l_k": sched.l[p.k],
                "bound": bound,
                "relaxed": sched.relaxed,
                "violations": sched.violations,
            });
            let raw = bad.iter().map(|&b| vec![if b { 1.0 } else { 0.0 }]).collect();
            (vec![rec, EstimateRecord::exact(format!("bound(k={})", p.k), bound, 0, 0.0)], raw)
        }
        Params::Contact(p) => {
            let rows = par_reps(w, reps, |r| {
                let s = seed.derive(r, "contact");
                p.lambda
                    .iter()
                    .map(|&l| Ok(if survival_probe(&cppr_instance(p.model, l, p.n, p.horizon, s)?) { 1.0 } else { 0.0 }))
                    .collect::<Result<Vec<f64>>>()
            })?;
            let recs = p
                .lambda
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let hits = rows.iter().filter(|r| r[i] == 1.0).count() as u64;
                    EstimateRecord::frequency(format!("survival(lambda={l})"), hits, reps, clock.seconds())
                })
                .collect::<Result<_>>()?;
            (recs, rows)
        }
        Params::Couple(p) => {
            let reports = par_reps(w, reps, |r| {
                let s = seed.derive(r, "couple");
                validate_coupling(&random_small_instance(p.kind, s)?, p.paths, s.child("replay"))
            })?;
            let ok: u64 = reports.iter().map(|r| r.replay_ok).sum();
            let sampled: u64 = reports.iter().map(|r| r.paths_sampled).sum();
            let checked: u64 = reports.iter().map(|r| r.identities_checked).sum();
            let viol: u64 = reports.iter().map(|r| r.bound_violations).sum();
            let max_err = reports.iter().map(|r| r.identity_max_error).fold(0.0, f64::max);
            let mut recs = Vec::new();
            if sampled > 0 {
                recs.push(EstimateRecord::frequency("replay_ok", ok, sampled, clock.seconds())?);
            }
            if checked > 0 {
                recs.push(EstimateRecord::frequency("bound_violation", viol, checked, clock.seconds())?);
            }
            recs.push(EstimateRecord::exact("identity_max_error", max_err, checked, clock.seconds()));
            let raw = reports
                .iter()
                .map(|r| vec![r.paths_sampled as f64, r.replay_ok as f64, r.bound_violations as f64, r.identity_max_error])
                .collect();
            (recs, raw)
        }
        Params::Temporal(p) => {
            let t_max = *p.depths.iter().max().unwrap();
            let width = p.width.unwrap_or(t_max);
            let spec = StretchSpec::new(Distribution::Constant { value: 0.0 }, p.nu.clone());
            let depths = par_reps(w, reps, |r| {
                let s = seed.derive(r, "temporal");
                let nus = sample_temporal_stretches(&spec, t_max as usize, s)?;
                temporal_survival_depth(p.p, &nus, t_max, width, s)
            })?;
            let recs = p
                .depths
                .iter()
                .map(|&t| {
                    let hits = depths.iter().filter(|&&d| d >= t).count() as u64;
                    EstimateRecord::frequency(format!("depth>={t}"), hits, reps, clock.seconds())
                })
                .collect::<Result<_>>()?;
            (recs, depths.iter().map(|&d| vec![d as f64]).collect())
        }
        Params::KernelAudit(p) => {
            let rep = check_kernel_bounds(&p.family, p.s_lo, p.s_hi)?;
            let n = p.s_hi - p.s_lo + 1;
            details = serde_json::to_value(&rep).expect("report serialises");
            let recs = vec![
                EstimateRecord::frequency("violations", rep.violations, n, clock.seconds())?,
                EstimateRecord::exact("min_log_margin", rep.min_margin, n, clock.seconds()),
            ];
            (recs, Vec::new())
        }
    };
    Ok(ExperimentResult {
        meta: ResultMeta {
            experiment: cfg.experiment.name().to_string(),
            version: VERSION.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            replications: reps,
        },
        records,
        details,
        raw: cfg.raw_samples.then_some(raw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn percolate_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            ExperimentKind::Percolate,
            json!({
                "vertex": {"kind": "constant", "p": 0.9},
                "edge": {"kind": "constant", "p": 0.9},
                "depth": 200
            }),
        );
        c.replications = 1000;
        c.seed = 42;
        c
    }

    #[test]
    fn percolate_is_worker_invariant() {
        let mut c = percolate_cfg();
        let a = run_experiment(&c).unwrap();
        c.workers = 8;
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.meta.config_hash, b.meta.config_hash);
        let r = &a.records[0];
        assert!(r.ci_lo <= r.estimate && r.estimate <= r.ci_hi);
        assert!(r.estimate > 0.5, "{r:?}");
    }

    #[test]
    fn kernel_audit_clean() {
        let c = ExperimentConfig::new(
            ExperimentKind::KernelAudit,
            json!({"family": {"kind": "cppr_uniform", "lambda": 2.0}, "s_hi": 10000}),
        );
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.records[0].name, "violations");
        assert_eq!(r.records[0].estimate, 0.0);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let c = ExperimentConfig::new(
            ExperimentKind::KernelAudit,
            json!({"family": {"kind": "power", "lambda": -1.0}, "s_hi": 10}),
        );
        match run_experiment(&c).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "params.family.lambda"),
            e => panic!("{e:?}"),
        }
        let c = ExperimentConfig::new(
            ExperimentKind::Contact,
            json!({"model": {"kind": "uniform"}, "lambda": [1.0, -2.0], "n": 10, "horizon": 5.0}),
        );
        match run_experiment(&c).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "params.lambda[1]"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected_with_paths() {
        let e = ExperimentConfig::from_json(r#"{"experiment": "percolate", "reps": 3}"#).unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e:?}");
        let c = ExperimentConfig::new(ExperimentKind::Couple, json!({"kind": "cppr_uni", "pathz": 3}));
        match c.validate().unwrap_err() {
            Error::Config { path, .. } => assert!(path.starts_with("params"), "{path}"),
            e => panic!("{e:?}"),
        }
        let e = ExperimentConfig::from_json(r#"{"experiment": "percolate", "seed": "x"}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "seed"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = percolate_cfg();
        let mut b = a.clone();
        b.workers = 8;
        b.output = Some("x.csv".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn every_kind_runs() {
        let cases = [
            (ExperimentKind::Temporal, json!({"p": 0.9, "nu": {"kind": "stretched_exp", "a": 0.5}, "depths": [10, 50]})),
            (ExperimentKind::Couple, json!({"kind": "cpre"})),
            (ExperimentKind::Contact, json!({"model": {"kind": "bernoulli", "q": 0.5}, "lambda": [5.0], "n": 50, "horizon": 20.0})),
            (
                ExperimentKind::Blocks,
                json!({
                    "stretches": {"xi": {"kind": "constant", "value": 0.0}, "nu": {"kind": "geometric", "p": 0.1}},
                    "schedule": {"epsilon": 4.0, "alpha": 2.0, "gamma": 1.5, "l0": 32, "mu": 0.7, "beta": 0.8},
                    "k": 0
                }),
            ),
            (
                ExperimentKind::Crossing,
                json!({
                    "vertex": {"kind": "constant", "p": 1.0},
                    "edge": {"kind": "constant", "p": 1.0},
                    "rect": {"t0": 0, "t1": 20, "a": 0, "b": 10},
                    "columns": 30
                }),
            ),
        ];
        for (kind, params) in cases {
            let mut c = ExperimentConfig::new(kind, params);
            c.replications = 20;
            c.raw_samples = true;
            let r = run_experiment(&c).unwrap_or_else(|e| panic!("{kind:?}: {e}"));
            assert!(!r.records.is_empty());
            assert_eq!(r.raw.as_ref().unwrap().len(), 20);
            let back: ExperimentResult = serde_json::from_str(&r.to_json()).unwrap();
            assert_eq!(back.records.len(), r.records.len());
        }
    }

    #[test]
    fn defaults_validate() {
        for kind in [
            ExperimentKind::Percolate,
            ExperimentKind::Crossing,
            ExperimentKind::Blocks,
            ExperimentKind::Contact,
            ExperimentKind::Couple,
            ExperimentKind::Temporal,
            ExperimentKind::KernelAudit,
        ] {
            ExperimentConfig::new(kind, default_params(kind)).validate().unwrap_or_else(|e| panic!("{kind:?}: {e}"));
        }
    }

    #[test]
    fn all_open_crossings_occur() {
        let mut c = ExperimentConfig::new(
            ExperimentKind::Crossing,
            json!({
                "vertex": {"kind": "constant", "p": 1.0},
                "edge": {"kind": "constant", "p": 1.0},
                "rect": {"t0": 0, "t1": 20, "a": 0, "b": 10},
                "columns": 30
            }),
        );
        c.replications = 5;
        let r = run_experiment(&c).unwrap();
        for rec in &r.records[1..] {
            assert_eq!(rec.estimate, 1.0, "{rec:?}");
        }
    }
}
