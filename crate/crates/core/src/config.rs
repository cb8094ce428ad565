//! Run configuration: JSON file plus `--key=value` overrides.
//!
//! Overrides name a leaf by its dotted path or any unambiguous suffix of it,
//! so `--epsilon=1e-2` and `--certificate.witness.epsilon=1e-2` are the same
//! flag. Values are parsed as JSON, falling back to a plain string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certificate::{LossHyper, PartitionPlan, RwaTask, SampleCounts, Schedule, Witness};
use crate::dynamics::DynParams;
use crate::error::{Error, Result};
use crate::kinduction::KindParams;
use crate::netgraph::{load_network, Mlp};
use crate::properties::{GoalSpec, SafetySpec};
use crate::reachability::CalibrationOptions;
use crate::verifier::{Budget, Hyperbox};

/// Shipped desk-scale controller, used when no controller path is given.
pub const DESK_CONTROLLER: &str = include_str!("../data/desk_controller.json");

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub start: [f64; 4],
    pub steps: usize,
    /// Also integrate the polar-coordinate model and report divergence.
    pub polar: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            start: [4.0, -3.0, 0.0, 0.0],
            steps: 200,
            polar: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinductConfig {
    pub domain: Hyperbox,
    /// Positional grid `[nx, ny]`.
    pub grid: [usize; 2],
    pub params: KindParams,
    pub empirical_samples: usize,
}

impl Default for KinductConfig {
    fn default() -> Self {
        Self {
            domain: Hyperbox::symmetric(&[5.0, 5.0, 0.2, 0.2]).unwrap(),
            grid: [5, 5],
            params: KindParams::default(),
            empirical_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub domain: Hyperbox,
    pub k: usize,
    /// Resolution of the per-dimension displacement search.
    pub tol: f64,
    pub calibration: CalibrationOptions,
    /// Cells counted as the goal for the liveness check.
    pub goal: Hyperbox,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            domain: Hyperbox::symmetric(&[10.0, 10.0, 1.6, 1.6]).unwrap(),
            k: 1,
            tol: 0.01,
            calibration: CalibrationOptions::default(),
            goal: Hyperbox::symmetric(&[0.35, 0.35, 1.6, 1.6]).unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeConfig {
    pub start: Hyperbox,
    pub k: usize,
    pub iterations: usize,
    pub domain: Hyperbox,
}

impl Default for TubeConfig {
    fn default() -> Self {
        Self {
            start: Hyperbox::new(vec![4.0, 4.0, -0.05, -0.05], vec![4.1, 4.1, 0.05, 0.05]).unwrap(),
            k: 1,
            iterations: 50,
            domain: Hyperbox::symmetric(&[25.0, 25.0, 1.6, 1.6]).unwrap(),
        }
    }
}

/// Toy reach-while-avoid task and certificate pipeline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertConfig {
    pub task: RwaTask,
    pub dt: f64,
    pub kp: f64,
    pub kd: f64,
    /// Hidden layer widths of the certificate network.
    pub hidden: Vec<usize>,
    pub witness: Witness,
    pub hyper: LossHyper,
    pub schedule: Schedule,
    pub counts: SampleCounts,
    pub partitions: PartitionPlan,
    pub gamma_tol: f64,
    pub budget: Budget,
    pub max_rounds: usize,
    pub retrain_schedule: Schedule,
    /// Certificate weights; when unset, `cert-verify`, `cert-retrain` and
    /// `gamma` train one first.
    pub certificate: Option<PathBuf>,
    /// Dent the certificate here before retraining.
    pub inject: Option<Vec<f64>>,
    pub inject_radius: f64,
    pub inject_depth: f64,
    pub lemma1_rollouts: usize,
    pub lemma1_horizon: usize,
}

impl Default for CertConfig {
    fn default() -> Self {
        let margins = 0.05;
        Self {
            task: RwaTask::toy(),
            dt: 0.5,
            kp: 0.5,
            kd: 1.0,
            hidden: vec![32, 32],
            witness: Witness::default(),
            hyper: LossHyper {
                delta1: margins,
                delta2: margins,
                delta3: margins,
                ..LossHyper::default()
            },
            schedule: Schedule {
                iterations: 3000,
                warmup: 200,
                step_size: 0.01,
                ..Schedule::default()
            },
            counts: SampleCounts::default(),
            partitions: PartitionPlan::uniform(2, 4),
            gamma_tol: 1e-3,
            budget: Budget::branches(200_000),
            max_rounds: 10,
            retrain_schedule: Schedule {
                iterations: 1000,
                warmup: 0,
                step_size: 0.01,
                ..Schedule::default()
            },
            certificate: None,
            inject: None,
            inject_radius: 0.2,
            inject_depth: 1.0,
            lemma1_rollouts: 1000,
            lemma1_horizon: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Controller weights; the shipped desk controller when unset.
    pub controller: Option<PathBuf>,
    pub dynamics: DynParams,
    pub f_max: f64,
    pub safety: SafetySpec,
    pub goal: GoalSpec,
    pub simulate: SimulateConfig,
    pub kinduction: KinductConfig,
    pub grid: GridConfig,
    pub tube: TubeConfig,
    pub certificate: CertConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 10,
            output_dir: PathBuf::from("dockver-out"),
            controller: None,
            dynamics: DynParams::default(),
            f_max: 1.0,
            safety: SafetySpec::default(),
            goal: GoalSpec::default(),
            simulate: SimulateConfig::default(),
            kinduction: KinductConfig::default(),
            grid: GridConfig::default(),
            tube: TubeConfig::default(),
            certificate: CertConfig::default(),
        }
    }
}

fn in_range(name: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(cfg_err(format!("{name} out of range")))
    }
}

impl RunConfig {
    /// Range checks plus existence of referenced files.
    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, r: Result<()>| r.map_err(|e| cfg_err(format!("{what}: {e}")));
        in_range("workers", self.workers >= 1)?;
        in_range("f_max", self.f_max > 0.0 && self.f_max.is_finite())?;
        wrap("dynamics", self.dynamics.validate())?;
        wrap("safety", self.safety.validate())?;
        wrap("goal", self.goal.validate())?;
        for p in self.controller.iter().chain(&self.certificate.certificate) {
            if !p.is_file() {
                return Err(cfg_err(format!("file not found: {}", p.display())));
            }
        }
        in_range("simulate.steps", self.simulate.steps >= 1)?;
        let k = &self.kinduction;
        wrap("kinduction.params", k.params.validate())?;
        in_range("kinduction.domain", k.domain.dim() == 4)?;
        in_range("kinduction.grid", k.grid[0] >= 1 && k.grid[1] >= 1)?;
        let g = &self.grid;
        in_range("grid.domain", g.domain.dim() == 4)?;
        in_range("grid.goal", g.goal.dim() == 4)?;
        in_range("grid.k", g.k >= 1)?;
        in_range("grid.tol", g.tol > 0.0)?;
        in_range(
            "grid.calibration.coarse_factor",
            g.calibration.coarse_factor >= 1.0 && g.calibration.max_cells_per_dim >= 1,
        )?;
        let t = &self.tube;
        in_range("tube.start", t.start.dim() == 4 && t.domain.dim() == 4)?;
        in_range("tube.k", t.k >= 1)?;
        let c = &self.certificate;
        wrap("certificate.task", c.task.validate())?;
        wrap("certificate.witness", c.witness.validate())?;
        wrap("certificate.hyper", c.hyper.validate())?;
        in_range("certificate.dt", c.dt > 0.0 && c.dt.is_finite())?;
        in_range("certificate.hidden", !c.hidden.is_empty() && c.hidden.iter().all(|&h| h >= 1))?;
        in_range("certificate.schedule.step_size", c.schedule.step_size > 0.0)?;
        in_range("certificate.retrain_schedule.step_size", c.retrain_schedule.step_size > 0.0)?;
        in_range("certificate.gamma_tol", c.gamma_tol > 0.0)?;
        in_range("certificate.max_rounds", c.max_rounds >= 1)?;
        in_range("certificate.inject_radius", c.inject_radius > 0.0)?;
        let n = c.task.dim();
        for (name, counts) in [
            ("lower_bound", &c.partitions.lower_bound),
            ("initial", &c.partitions.initial),
            ("decrease", &c.partitions.decrease),
            ("unsafe_", &c.partitions.unsafe_),
        ] {
            in_range(
                &format!("certificate.partitions.{name}"),
                counts.len() == n && counts.iter().all(|&k| k >= 1),
            )?;
        }
        if let Some(x) = &c.inject {
            in_range("certificate.inject", x.len() == n)?;
        }
        Ok(())
    }

    /// The configured controller, or the shipped one.
    pub fn load_controller(&self) -> Result<Mlp> {
        match &self.controller {
            Some(p) => load_network(p),
            None => Mlp::from_json(&serde_json::from_str(DESK_CONTROLLER)?),
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One `--key=value` override.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: String,
}

impl Override {
    /// Parses `key=value` or `--key=value`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.strip_prefix("--").unwrap_or(s);
        match s.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok(Self {
                key: k.to_string(),
                value: v.to_string(),
            }),
            _ => Err(cfg_err(format!("override must look like key=value, got {s:?}"))),
        }
    }
}

fn leaf_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                prefix.push(k.clone());
                leaf_paths(child, prefix, out);
                prefix.pop();
            }
        }
        _ => out.push(prefix.clone()),
    }
}

fn resolve(root: &Value, key: &str) -> Result<Vec<String>> {
    let want: Vec<&str> = key.split('.').collect();
    let mut paths = Vec::new();
    leaf_paths(root, &mut Vec::new(), &mut paths);
    let hits: Vec<Vec<String>> = paths
        .into_iter()
        .filter(|p| p.len() >= want.len() && p[p.len() - want.len()..].iter().zip(&want).all(|(a, b)| a == b))
        .collect();
    match hits.len() {
        0 => Err(cfg_err(format!("unknown key {key:?}"))),
        1 => Ok(hits.into_iter().next().unwrap()),
        _ => Err(cfg_err(format!(
            "ambiguous key {key:?}: {}",
            hits.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) {
    let mut cur = root;
    for seg in path {
        cur = &mut cur[seg.as_str()];
    }
    *cur = value;
}

fn from_value(v: Value) -> Result<RunConfig> {
    serde_json::from_value(v).map_err(|e| cfg_err(e.to_string()))
}

/// Builds a config from optional file contents and overrides, then
/// validates it. Unknown keys are rejected in both.
pub fn parse_config_str(file: Option<&str>, overrides: &[Override]) -> Result<RunConfig> {
    let raw: Value = match file {
        Some(text) => serde_json::from_str(text).map_err(|e| cfg_err(format!("config is not valid JSON: {e}")))?,
        None => Value::Object(Default::default()),
    };
    let base = from_value(raw)?;
    let mut full = serde_json::to_value(&base)?;
    for o in overrides {
        let path = resolve(&full, &o.key)?;
        let value = serde_json::from_str(&o.value).unwrap_or_else(|_| Value::String(o.value.clone()));
        set_path(&mut full, &path, value);
    }
    let cfg = from_value(full)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the config file, if any, and applies overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| cfg_err(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    parse_config_str(text.as_deref(), overrides)
}
