use serde::Serialize;

use crate::agents::PolicyKind;
use crate::kernel::{build_base_gram, numerical_rank, AugmentedContext, ComposedKernel, NetworkKernel, DEFAULT_RANK_TOL};
use crate::regression::RegressionState;
use std::sync::Arc;

use super::{ExperimentConfig, ExperimentOutput, HarnessError, KzMode, PolicyRun, Setup};

/// Summed posterior variance of one clique against its information-gain
/// bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliqueCheck {
    pub members: Vec<usize>,
    /// `log det(I + K_{C,T} / λ)` over every context the clique played.
    pub log_det: f64,
    /// `Σ_{t >= γ} Σ_{v in C} σ²_{v,t}`.
    pub measured: f64,
    /// `γ |C| B + max(1, 1/λ) log det(I + K_{C,T} / λ)`.
    pub bound: f64,
    pub holds: bool,
}

/// Relative slack allowed when comparing the two sides.
pub const BOUND_SLACK: f64 = 1e-6;

pub fn clique_variance_checks(
    cfg: &ExperimentConfig,
    setup: &Setup,
    run: &PolicyRun,
    kernel: &ComposedKernel,
) -> Result<Vec<CliqueCheck>, HarnessError> {
    let gamma = setup.gamma;
    let mut out = Vec::new();
    for members in setup.cover.cliques() {
        let mut state = RegressionState::new(kernel.clone(), cfg.lambda)?;
        state.set_refresh_interval(0);
        let mut measured = 0.0;
        for (t0, played) in run.played.iter().enumerate() {
            for &v in members {
                let p = AugmentedContext::new(v, Arc::clone(&setup.contexts.z[v]), Arc::clone(&played[v]));
                state.incorporate(p, 0.0)?;
                if t0 + 1 >= gamma {
                    measured += run.variances[t0][v];
                }
            }
        }
        let log_det = state.log_det_regularized();
        let bound = (gamma * members.len()) as f64 * cfg.norm_bound + (1.0f64).max(1.0 / cfg.lambda) * log_det;
        out.push(CliqueCheck {
            members: members.clone(),
            log_det,
            measured,
            bound,
            holds: measured <= bound * (1.0 + BOUND_SLACK),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub final_mean_per_agent_regret: f64,
    pub final_std_per_agent_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub vertices: usize,
    pub edges: usize,
    pub diameter: usize,
    pub gamma: usize,
    /// Greedy clique cover size of `G_gamma`.
    pub clique_cover_size: usize,
    /// Greedy independent set size of `G_gamma`.
    pub independent_set_size: usize,
    /// Numerical rank of the network-kernel matrix over agents.
    pub upsilon_z: usize,
    pub kz_mode: String,
    /// Smallest eigenvalue of the final empirical network-kernel table
    /// (empirical mode only). Negative values mean the estimate is not PSD.
    pub empirical_kz_min_eigenvalue: Option<f64>,
    pub policies: Vec<PolicySummary>,
    /// SHA-256 of the first trial's environment, per policy.
    pub env_digests: Vec<(String, String)>,
    pub env_digests_match: bool,
    /// Per-clique checks for the cooperative policy on the first trial.
    pub coop_cliques: Option<Vec<CliqueCheck>>,
    pub variance_bound_holds: Option<bool>,
}

impl MetricsReport {
    /// Pretty-printed JSON.
    pub fn to_json(&self) -> Result<String, HarnessError> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Aggregate(e.to_string()))
    }
}

pub fn metrics_report(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<MetricsReport, HarnessError> {
    let setup = &out.setup;
    let first = out.trials.first();
    let zs: Vec<&[f64]> = setup.contexts.z.iter().map(|z| &z[..]).collect();
    let mut kz_min_eig = None;
    let (upsilon_z, kz_mode) = match cfg.kz_mode {
        KzMode::Oracle => (
            numerical_rank(&build_base_gram(&cfg.kernel_z, &zs)?, DEFAULT_RANK_TOL)?,
            "oracle",
        ),
        KzMode::Empirical { .. } => {
            let table = first.and_then(|tr| tr.runs.iter().find_map(|r| r.final_table.as_ref()));
            let rank = match table {
                Some(t) => {
                    let m = t.as_matrix();
                    kz_min_eig = Some(m.min_eigenvalue()?);
                    numerical_rank(&m, DEFAULT_RANK_TOL)?
                }
                None => 1,
            };
            (rank, "empirical")
        }
    };
    let coop_cliques = match first.and_then(|tr| tr.run(PolicyKind::Coop)) {
        Some(run) => {
            let kernel = match (&cfg.kz_mode, &run.final_table) {
                (KzMode::Empirical { .. }, Some(t)) => {
                    ComposedKernel::new(NetworkKernel::Empirical(Arc::new(t.clone())), cfg.kernel_x)
                }
                _ => setup.oracle_kernel.clone(),
            };
            Some(clique_variance_checks(cfg, setup, run, &kernel)?)
        }
        None => None,
    };
    let variance_bound_holds = coop_cliques.as_ref().map(|cs| cs.iter().all(|c| c.holds));
    Ok(MetricsReport {
        vertices: setup.agents(),
        edges: setup.graph.edge_count(),
        diameter: setup.distances.diameter(),
        gamma: setup.gamma,
        clique_cover_size: setup.cover.len(),
        independent_set_size: setup.partition.centrals.len(),
        upsilon_z,
        kz_mode: kz_mode.to_string(),
        empirical_kz_min_eigenvalue: kz_min_eig,
        policies: out
            .trace
            .policies
            .iter()
            .map(|&p| PolicySummary {
                policy: p.to_string(),
                final_mean_per_agent_regret: out.trace.final_mean(p).unwrap_or(f64::NAN),
                final_std_per_agent_regret: out.trace.final_std(p).unwrap_or(f64::NAN),
            })
            .collect(),
        env_digests: first
            .map(|tr| tr.runs.iter().map(|r| (r.policy.to_string(), r.env_digest.clone())).collect())
            .unwrap_or_default(),
        env_digests_match: out.trials.iter().all(|tr| tr.digests_match()),
        coop_cliques,
        variance_bound_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::super::run_experiment;
    use super::*;

    #[test]
    fn complete_graph_identical_contexts() {
        let cfg = ExperimentConfig::parse(
            "graph = complete\nV = 5\ngamma = 1\nT = 20\ntrials = 1\ndim = 3\nanchors = 5\n\
             policies = coop, independent\ncontexts = identical",
        )
        .unwrap();
        let out = run_experiment(&cfg).unwrap();
        let m = metrics_report(&cfg, &out).unwrap();
        assert_eq!(m.clique_cover_size, 1);
        assert_eq!(m.independent_set_size, 1);
        assert_eq!(m.upsilon_z, 1);
        assert!(m.env_digests_match);
        let cliques = m.coop_cliques.clone().unwrap();
        assert_eq!(cliques.len(), 1);
        assert!(cliques[0].log_det > 0.0);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"clique_cover_size\":1"));
    }
}
