//! Experiment configuration and its `key = value` text format.
//!
//! ```text
//! # comment
//! [graph]
//! graph = erdos-renyi
//! V = 20
//! p = 0.3
//!
//! [run]
//! T = 500
//! policies = coop, eager, independent
//! ```
//!
//! Section headers only group keys for readability; every key is global.
//! The same keys are accepted as command-line flags.

use std::path::PathBuf;

use crate::agents::PolicyKind;
use crate::environment::NetworkContextModel;
use crate::kernel::KernelSpec;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    ErdosRenyi { vertices: usize, p: f64 },
    Complete { vertices: usize },
    Star { vertices: usize },
    Path { vertices: usize },
    EdgeList { path: PathBuf, subsample: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KzMode {
    Oracle,
    /// Network kernel estimated from played actions, re-estimated every
    /// `refresh_every` rounds.
    Empirical {
        sigma_z: f64,
        squared: bool,
        refresh_every: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// `eta / sqrt(lambda)`.
    Eta,
    /// Self-normalized confidence width with failure probability `delta`.
    Theoretical { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    /// `None` means `ceil(diameter / 2)`.
    pub gamma: Option<usize>,
    pub rounds: usize,
    pub trials: usize,
    pub policies: Vec<PolicyKind>,
    pub kernel_x: KernelSpec,
    pub kernel_z: KernelSpec,
    pub kz_mode: KzMode,
    pub contexts: NetworkContextModel,
    pub arms: usize,
    pub dim: usize,
    pub fixed_decision_set: bool,
    pub anchors: usize,
    pub lambda: f64,
    pub eta: f64,
    pub beta: BetaMode,
    pub norm_bound: f64,
    pub noise: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::ErdosRenyi { vertices: 20, p: 0.3 },
            gamma: None,
            rounds: 500,
            trials: 20,
            policies: vec![
                PolicyKind::Coop,
                PolicyKind::Eager,
                PolicyKind::Independent,
                PolicyKind::Naive,
            ],
            kernel_x: KernelSpec::Linear,
            kernel_z: KernelSpec::Linear,
            kz_mode: KzMode::Oracle,
            contexts: NetworkContextModel::Clustered {
                similarity: 0.5,
                max_clusters: None,
            },
            arms: 8,
            dim: 10,
            fixed_decision_set: false,
            anchors: 50,
            lambda: 1.0,
            eta: 1.0,
            beta: BetaMode::Eta,
            norm_bound: 1.0,
            noise: 0.1,
            seed: 0,
            out: None,
            metrics_out: None,
        }
    }
}

/// Keys understood by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "graph",
    "V",
    "p",
    "edge-list",
    "subsample",
    "gamma",
    "T",
    "trials",
    "policies",
    "kernel-x",
    "kernel-z",
    "kz-mode",
    "sigma-z",
    "kz-squared",
    "kz-refresh",
    "contexts",
    "similarity",
    "max-clusters",
    "z-dim",
    "arms",
    "dim",
    "fixed-decision-set",
    "anchors",
    "lambda",
    "eta",
    "beta",
    "delta",
    "B",
    "R",
    "seed",
    "out",
    "metrics-out",
];

fn bad(key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl ExperimentConfig {
    pub fn vertex_count_hint(&self) -> Option<usize> {
        match &self.graph {
            GraphSource::ErdosRenyi { vertices, .. }
            | GraphSource::Complete { vertices }
            | GraphSource::Star { vertices }
            | GraphSource::Path { vertices } => Some(*vertices),
            GraphSource::EdgeList { subsample, .. } => *subsample,
        }
    }

    fn set_vertices(&mut self, n: usize) {
        match &mut self.graph {
            GraphSource::ErdosRenyi { vertices, .. }
            | GraphSource::Complete { vertices }
            | GraphSource::Star { vertices }
            | GraphSource::Path { vertices } => *vertices = n,
            GraphSource::EdgeList { subsample, .. } => *subsample = Some(n),
        }
    }

    fn empirical_mut(&mut self) -> (&mut f64, &mut bool, &mut usize) {
        if self.kz_mode == KzMode::Oracle {
            self.kz_mode = KzMode::Empirical {
                sigma_z: 1.0,
                squared: false,
                refresh_every: 50,
            };
        }
        match &mut self.kz_mode {
            KzMode::Empirical {
                sigma_z,
                squared,
                refresh_every,
            } => (sigma_z, squared, refresh_every),
            KzMode::Oracle => unreachable!(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        let n = self.vertex_count_hint().unwrap_or(20);
        match key {
            "graph" | "kind" => {
                self.graph = match v.to_ascii_lowercase().as_str() {
                    "erdos-renyi" | "er" => {
                        let p = match self.graph {
                            GraphSource::ErdosRenyi { p, .. } => p,
                            _ => 0.3,
                        };
                        GraphSource::ErdosRenyi { vertices: n, p }
                    }
                    "complete" => GraphSource::Complete { vertices: n },
                    "star" => GraphSource::Star { vertices: n },
                    "path" => GraphSource::Path { vertices: n },
                    "edge-list" => GraphSource::EdgeList {
                        path: PathBuf::new(),
                        subsample: self.vertex_count_hint(),
                    },
                    _ => return Err(bad(key, value)),
                }
            }
            "V" => self.set_vertices(num(key, v)?),
            "p" => match &mut self.graph {
                GraphSource::ErdosRenyi { p, .. } => *p = num(key, v)?,
                _ => {
                    self.graph = GraphSource::ErdosRenyi {
                        vertices: n,
                        p: num(key, v)?,
                    }
                }
            },
            "edge-list" => {
                let subsample = match &self.graph {
                    GraphSource::EdgeList { subsample, .. } => *subsample,
                    _ => None,
                };
                self.graph = GraphSource::EdgeList {
                    path: PathBuf::from(v),
                    subsample,
                };
            }
            "subsample" => {
                if let GraphSource::EdgeList { subsample, .. } = &mut self.graph {
                    *subsample = Some(num(key, v)?);
                } else {
                    return Err(HarnessError::Config("`subsample` needs an edge-list graph".into()));
                }
            }
            "gamma" => {
                self.gamma = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "T" => self.rounds = num(key, v)?,
            "trials" => self.trials = num(key, v)?,
            "policies" => {
                let mut ps = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<PolicyKind>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad(key, value))?;
                ps.sort();
                ps.dedup();
                self.policies = ps;
            }
            "kernel-x" => self.kernel_x = v.parse().map_err(|_| bad(key, value))?,
            "kernel-z" => self.kernel_z = v.parse().map_err(|_| bad(key, value))?,
            "kz-mode" => match v.to_ascii_lowercase().as_str() {
                "oracle" => self.kz_mode = KzMode::Oracle,
                "empirical" => {
                    self.empirical_mut();
                }
                _ => return Err(bad(key, value)),
            },
            "sigma-z" => *self.empirical_mut().0 = num(key, v)?,
            "kz-squared" => *self.empirical_mut().1 = flag(key, v)?,
            "kz-refresh" => *self.empirical_mut().2 = num(key, v)?,
            "contexts" => {
                self.contexts = match v.to_ascii_lowercase().as_str() {
                    "identical" => NetworkContextModel::Identical,
                    "clustered" => NetworkContextModel::Clustered {
                        similarity: 0.5,
                        max_clusters: None,
                    },
                    "random-unit" => NetworkContextModel::RandomUnit { dim: 5 },
                    _ => return Err(bad(key, value)),
                }
            }
            "similarity" | "max-clusters" => {
                let (mut s, mut m) = match self.contexts {
                    NetworkContextModel::Clustered {
                        similarity,
                        max_clusters,
                    } => (similarity, max_clusters),
                    _ => (0.5, None),
                };
                if key == "similarity" {
                    s = num(key, v)?;
                } else {
                    m = if v.eq_ignore_ascii_case("none") { None } else { Some(num(key, v)?) };
                }
                self.contexts = NetworkContextModel::Clustered {
                    similarity: s,
                    max_clusters: m,
                };
            }
            "z-dim" => {
                self.contexts = NetworkContextModel::RandomUnit { dim: num(key, v)? };
            }
            "arms" => self.arms = num(key, v)?,
            "dim" => self.dim = num(key, v)?,
            "fixed-decision-set" => self.fixed_decision_set = flag(key, v)?,
            "anchors" => self.anchors = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "eta" => self.eta = num(key, v)?,
            "beta" => {
                self.beta = match v.to_ascii_lowercase().as_str() {
                    "eta" => BetaMode::Eta,
                    "theoretical" => match self.beta {
                        BetaMode::Theoretical { .. } => self.beta,
                        BetaMode::Eta => BetaMode::Theoretical { delta: 0.1 },
                    },
                    _ => return Err(bad(key, value)),
                }
            }
            "delta" => {
                self.beta = BetaMode::Theoretical { delta: num(key, v)? };
            }
            "B" => self.norm_bound = num(key, v)?,
            "R" => self.noise = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "metrics-out" => self.metrics_out = Some(PathBuf::from(v)),
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every setting in a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.rounds == 0 {
            return err("T must be at least 1");
        }
        if self.trials == 0 {
            return err("trials must be at least 1");
        }
        if !(self.lambda > 0.0) {
            return err("lambda must be positive");
        }
        if self.gamma == Some(0) {
            return err("gamma must be at least 1");
        }
        if self.policies.is_empty() {
            return err("no policies selected");
        }
        if self.arms == 0 || self.dim == 0 {
            return err("arms and dim must be positive");
        }
        if self.anchors == 0 {
            return err("anchors must be positive");
        }
        if !(self.norm_bound > 0.0) || !(self.noise >= 0.0) || !(self.eta >= 0.0) {
            return err("B must be positive, R and eta non-negative");
        }
        if let BetaMode::Theoretical { delta } = self.beta {
            if !(delta > 0.0 && delta < 1.0) {
                return err("delta must be in (0, 1)");
            }
        }
        if self.policies.contains(&PolicyKind::Dist) && !self.fixed_decision_set {
            return err("the dist policy needs fixed-decision-set = true");
        }
        if let KzMode::Empirical {
            sigma_z, refresh_every, ..
        } = self.kz_mode
        {
            if !(sigma_z > 0.0) || refresh_every == 0 {
                return err("sigma-z and kz-refresh must be positive");
            }
        }
        self.kernel_x.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.kernel_z.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
