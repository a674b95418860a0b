//! Experiment orchestration: builds the network and per-trial environments,
//! runs every policy on identical realizations, aggregates regret and
//! writes CSV and metrics.

mod config;
mod metrics;
mod output;

use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentError, AgentState, PolicyKind, Role};
use crate::embedding::{EmbeddingError, EmbeddingState};
use crate::environment::{gen_network_contexts, make_ground_truth, BanditEnv, DecisionSetSpec, EnvError, NetworkContexts, RoundData};
use crate::graph::{
    all_pairs_distances, central_partition, gen_erdos_renyi, graph_power, greedy_clique_cover, load_edge_list,
    CentralAssignment, CliqueCover, DistanceMatrix, Graph, GraphError,
};
use crate::kernel::{ComposedKernel, EmpiricalTable, KernelError, NetworkKernel};
use crate::network::NetworkSim;
use crate::regression::{ConfidenceParams, RegressionError, UcbParams};
use crate::rng::{derive_seed, Purpose};

pub use config::{BetaMode, ExperimentConfig, GraphSource, KzMode, KEYS};
pub use metrics::{clique_variance_checks, metrics_report, CliqueCheck, MetricsReport};
pub use output::{aggregate, csv_string, write_csv, RegretTrace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("aggregation error: {0}")]
    Aggregate(String),
}

/// Everything shared by all trials of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub graph: Graph,
    pub gamma: usize,
    pub distances: DistanceMatrix,
    pub power: Graph,
    pub cover: CliqueCover,
    pub partition: CentralAssignment,
    pub contexts: NetworkContexts,
    /// `K_z * K_x` with the configured oracle network kernel.
    pub oracle_kernel: ComposedKernel,
}

impl Setup {
    pub fn agents(&self) -> usize {
        self.graph.vertex_count()
    }
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph, HarnessError> {
    Ok(match &cfg.graph {
        GraphSource::ErdosRenyi { vertices, p } => {
            gen_erdos_renyi(*vertices, *p, derive_seed(cfg.seed, &[Purpose::Graph as u64]))?
        }
        GraphSource::Complete { vertices } => Graph::complete(*vertices)?,
        GraphSource::Star { vertices } => Graph::star(*vertices)?,
        GraphSource::Path { vertices } => Graph::path(*vertices)?,
        GraphSource::EdgeList { path, subsample } => {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            load_edge_list(&text, *subsample)?
        }
    })
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
    cfg.validate()?;
    let graph = build_graph(cfg)?;
    let distances = all_pairs_distances(&graph);
    let gamma = cfg.gamma.unwrap_or_else(|| distances.diameter().div_ceil(2).max(1));
    let power = graph_power(&graph, gamma)?;
    let cover = greedy_clique_cover(&power);
    let partition = central_partition(&graph, gamma)?;
    let contexts = gen_network_contexts(
        cfg.contexts,
        &graph,
        gamma,
        derive_seed(cfg.seed, &[Purpose::NetworkContexts as u64]),
    )?;
    Ok(Setup {
        graph,
        gamma,
        distances,
        power,
        cover,
        partition,
        contexts,
        oracle_kernel: ComposedKernel::oracle(cfg.kernel_z, cfg.kernel_x),
    })
}

/// The environment realization of one trial.
pub fn make_env(cfg: &ExperimentConfig, setup: &Setup, trial: u64) -> Result<BanditEnv, HarnessError> {
    let truth = make_ground_truth(
        &setup.oracle_kernel,
        &setup.contexts.z,
        cfg.dim,
        cfg.anchors,
        cfg.norm_bound,
        derive_seed(cfg.seed, &[trial, Purpose::GroundTruth as u64]),
    )?;
    Ok(BanditEnv {
        truth,
        contexts: setup.contexts.clone(),
        decision: DecisionSetSpec {
            arms: cfg.arms,
            dim: cfg.dim,
            fixed: cfg.fixed_decision_set,
        },
        noise: cfg.noise,
        master: cfg.seed,
        trial,
    })
}

pub fn ucb_params(cfg: &ExperimentConfig, agents: usize) -> UcbParams {
    match cfg.beta {
        BetaMode::Eta => UcbParams::with_eta(cfg.eta),
        BetaMode::Theoretical { delta } => UcbParams::theoretical(ConfidenceParams {
            norm_bound: cfg.norm_bound,
            noise: cfg.noise,
            delta,
            agents,
        }),
    }
}

/// One policy's run on one trial.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    /// Cumulative group regret divided by the number of agents, per round.
    pub regret: Vec<f64>,
    /// `actions[t - 1][v]`
    pub actions: Vec<Vec<usize>>,
    /// `played[t - 1][v]`: the chosen action context.
    pub played: Vec<Vec<Arc<[f64]>>>,
    /// `variances[t - 1][v]`: posterior variance of the chosen context at
    /// selection time (`NaN` for policies without one).
    pub variances: Vec<Vec<f64>>,
    /// `instant[t - 1][v]`: noise-free instantaneous regret.
    pub instant: Vec<Vec<f64>>,
    pub state_sizes: Vec<usize>,
    /// SHA-256 of everything the environment showed this policy.
    pub env_digest: String,
    /// Final empirical network kernel, in empirical mode.
    pub final_table: Option<EmpiricalTable>,
}

fn hash_round(h: &mut Sha256, data: &RoundData) {
    h.update((data.round as u64).to_le_bytes());
    for ((set, vals), noise) in data.decision_sets.iter().zip(&data.values).zip(&data.noise) {
        for x in set {
            for c in x.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        for v in vals {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(noise.to_bits().to_le_bytes());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_policy(
    cfg: &ExperimentConfig,
    setup: &Setup,
    env: &BanditEnv,
    policy: PolicyKind,
) -> Result<PolicyRun, HarnessError> {
    let n = setup.agents();
    if policy == PolicyKind::Dist && !env.decision.fixed {
        return Err(HarnessError::Config("the dist policy needs a fixed decision set".into()));
    }
    let params = ucb_params(cfg, n);
    let agent_kernel = match cfg.kz_mode {
        KzMode::Oracle => setup.oracle_kernel.clone(),
        KzMode::Empirical { .. } => ComposedKernel::new(
            NetworkKernel::Empirical(Arc::new(EmpiricalTable::uninformed(n))),
            cfg.kernel_x,
        ),
    };
    let mut agents = (0..n)
        .map(|v| {
            let role = if policy == PolicyKind::Dist {
                match setup.partition.assigned[v] {
                    None => Role::Central,
                    Some((central, delay)) => Role::Peripheral { central, delay },
                }
            } else {
                Role::Plain
            };
            AgentState::new(v, Arc::clone(&setup.contexts.z[v]), policy, role, agent_kernel.clone(), cfg.lambda)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut sim = NetworkSim::from_distances(setup.distances.clone(), setup.gamma)?;
    let mut embedding = match cfg.kz_mode {
        KzMode::Empirical { .. } if policy.uses_kernel() => Some(EmbeddingState::new(n, cfg.kernel_x)),
        _ => None,
    };
    let mut final_table = None;

    let mut hasher = Sha256::new();
    let mut cumulative = 0.0;
    let mut run = PolicyRun {
        policy,
        regret: Vec::with_capacity(cfg.rounds),
        actions: Vec::with_capacity(cfg.rounds),
        played: Vec::with_capacity(cfg.rounds),
        variances: Vec::with_capacity(cfg.rounds),
        instant: Vec::with_capacity(cfg.rounds),
        state_sizes: Vec::new(),
        env_digest: String::new(),
        final_table: None,
    };
    for t in 1..=cfg.rounds {
        let data = env.round(t)?;
        hash_round(&mut hasher, &data);
        let mut actions = Vec::with_capacity(n);
        let mut played = Vec::with_capacity(n);
        let mut variances = Vec::with_capacity(n);
        let mut instant = Vec::with_capacity(n);
        for agent in agents.iter_mut() {
            let out = agent.step(&data, &mut sim, &setup.cover, &params, cfg.seed, env.trial)?;
            let r = data.regret(agent.id, out.arm)?;
            instant.push(r);
            actions.push(out.arm);
            played.push(Arc::clone(&data.decision_sets[agent.id][out.arm]));
            variances.push(out.variance.unwrap_or(f64::NAN));
        }
        cumulative += instant.iter().sum::<f64>() / n as f64;
        if let (Some(state), KzMode::Empirical { sigma_z, squared, refresh_every }) = (&mut embedding, cfg.kz_mode) {
            for (v, x) in played.iter().enumerate() {
                state.observe(v, Arc::clone(x))?;
            }
            if t % refresh_every == 0 || t == cfg.rounds {
                let table = state.table(sigma_z, squared)?;
                if t % refresh_every == 0 {
                    let kernel = ComposedKernel::new(NetworkKernel::Empirical(Arc::new(table.clone())), cfg.kernel_x);
                    for agent in agents.iter_mut() {
                        agent.set_kernel(kernel.clone())?;
                    }
                }
                final_table = Some(table);
            }
        }
        run.regret.push(cumulative);
        run.actions.push(actions);
        run.played.push(played);
        run.variances.push(variances);
        run.instant.push(instant);
    }
    run.state_sizes = agents.iter().map(AgentState::state_len).collect();
    run.env_digest = hex(&hasher.finalize());
    run.final_table = final_table;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: u64,
    pub env: BanditEnv,
    pub runs: Vec<PolicyRun>,
}

impl TrialResult {
    pub fn run(&self, policy: PolicyKind) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.policy == policy)
    }

    /// Whether every policy saw a bitwise-identical environment.
    pub fn digests_match(&self) -> bool {
        self.runs.windows(2).all(|w| w[0].env_digest == w[1].env_digest)
    }
}

pub fn run_trial(cfg: &ExperimentConfig, setup: &Setup, trial: u64) -> Result<TrialResult, HarnessError> {
    let env = make_env(cfg, setup, trial)?;
    let runs = cfg
        .policies
        .iter()
        .map(|&p| run_policy(cfg, setup, &env, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrialResult { trial, env, runs })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub setup: Setup,
    pub trials: Vec<TrialResult>,
    pub trace: RegretTrace,
}

impl ExperimentOutput {
    /// Mean cumulative per-agent regret at the final round.
    pub fn final_mean(&self, policy: PolicyKind) -> Option<f64> {
        self.trace.final_mean(policy)
    }
}

/// Runs all trials and aggregates them. Output files are not written; see
/// [`write_outputs`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let setup = build_setup(cfg)?;
    let trials = (0..cfg.trials as u64)
        .map(|t| run_trial(cfg, &setup, t))
        .collect::<Result<Vec<_>, _>>()?;
    let per_policy: Vec<(PolicyKind, Vec<Vec<f64>>)> = cfg
        .policies
        .iter()
        .map(|&p| {
            let traces = trials
                .iter()
                .map(|tr| tr.run(p).map(|r| r.regret.clone()).unwrap_or_default())
                .collect();
            (p, traces)
        })
        .collect();
    let trace = aggregate(&per_policy)?;
    Ok(ExperimentOutput { setup, trials, trace })
}

/// Writes the CSV and metrics files named in the config, if any.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<(), HarnessError> {
    if let Some(path) = &cfg.out {
        write_csv(&out.trace, path)?;
    }
    if let Some(path) = &cfg.metrics_out {
        let report = metrics_report(cfg, out)?;
        let text = report.to_json()?;
        std::fs::write(path, text + "\n").map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}
