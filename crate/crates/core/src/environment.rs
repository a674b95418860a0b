//! Reward functions with a known RKHS norm, network-context generators,
//! decision-set sampling and noise-free regret accounting.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::graph::{graph_power, Graph, GraphError};
use crate::kernel::{build_gram, AugmentedContext, ComposedKernel, KernelError, NetworkKernel};
use crate::rng::{derive_seed, stream, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid environment parameter: {0}")]
    Invalid(String),
    #[error("anchor Gram matrix stayed degenerate after {0} resamples")]
    Degenerate(usize),
    #[error("empty decision set")]
    EmptyDecisionSet,
    #[error("arm index {index} out of range for {len} arms")]
    ArmOutOfRange { index: usize, len: usize },
}

/// Draws a point uniformly from the closed unit ball in `dim` dimensions.
pub fn sample_unit_ball(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let mut v = sample_unit_sphere(rng, dim);
    let r = rng.random::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|c| *c *= r);
    v
}

/// Draws a point uniformly from the unit sphere in `dim` dimensions.
pub fn sample_unit_sphere(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// `F(p) = Σ_j α_j K(p, c_j)`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    anchors: Vec<AugmentedContext>,
    weights: Vec<f64>,
    kernel: ComposedKernel,
    norm_bound: f64,
}

/// Resamples allowed when the anchor expansion has zero norm.
pub const GROUND_TRUTH_RETRIES: usize = 100;

impl GroundTruth {
    /// Builds `F` from explicit anchors and weights, rescaling the weights
    /// so that `sqrt(αᵀ K α) = norm_bound`.
    pub fn from_anchors(
        kernel: ComposedKernel,
        anchors: Vec<AugmentedContext>,
        weights: Vec<f64>,
        norm_bound: f64,
    ) -> Result<Self, EnvError> {
        if anchors.is_empty() || anchors.len() != weights.len() {
            return Err(EnvError::Invalid("anchors and weights must be nonempty and equal length".into()));
        }
        if !(norm_bound > 0.0) {
            return Err(EnvError::Invalid(format!("norm bound must be positive, got {norm_bound}")));
        }
        if matches!(kernel.network, NetworkKernel::Empirical(_)) {
            return Err(EnvError::Invalid("ground truth needs an oracle network kernel".into()));
        }
        let mut gt = Self {
            anchors,
            weights,
            kernel,
            norm_bound,
        };
        let norm = gt.rkhs_norm()?;
        if !(norm > 1e-12) {
            return Err(EnvError::Degenerate(0));
        }
        let scale = norm_bound / norm;
        gt.weights.iter_mut().for_each(|w| *w *= scale);
        Ok(gt)
    }

    pub fn anchors(&self) -> &[AugmentedContext] {
        &self.anchors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel(&self) -> &ComposedKernel {
        &self.kernel
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// `sqrt(αᵀ K_anchor α)`.
    pub fn rkhs_norm(&self) -> Result<f64, EnvError> {
        let gram = build_gram(&self.kernel, &self.anchors)?;
        let a = DVector::from_column_slice(&self.weights);
        Ok((a.dot(&(&gram.0 * &a))).max(0.0).sqrt())
    }

    pub fn eval(&self, p: &AugmentedContext) -> Result<f64, EnvError> {
        let mut acc = 0.0;
        for (c, w) in self.anchors.iter().zip(&self.weights) {
            acc += w * self.kernel.eval(p, c)?;
        }
        Ok(acc)
    }
}

/// Random ground truth with `m` anchors. Anchor network contexts are drawn
/// from `agent_z` (so `F` lives on the same network contexts the agents
/// have), action parts uniformly from the unit ball of dimension `dim`.
pub fn make_ground_truth(
    kernel: &ComposedKernel,
    agent_z: &[Arc<[f64]>],
    dim: usize,
    m: usize,
    norm_bound: f64,
    seed: u64,
) -> Result<GroundTruth, EnvError> {
    if m == 0 || agent_z.is_empty() || dim == 0 {
        return Err(EnvError::Invalid("need m >= 1, at least one agent and dim >= 1".into()));
    }
    for attempt in 0..GROUND_TRUTH_RETRIES {
        let mut rng = rand_chacha_from(derive_seed(seed, &[attempt as u64]));
        let mut anchors = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for _ in 0..m {
            let agent = rng.random_range(0..agent_z.len());
            let x = sample_unit_ball(&mut rng, dim);
            anchors.push(AugmentedContext::new(agent, Arc::clone(&agent_z[agent]), Arc::from(x)));
            weights.push(StandardNormal.sample(&mut rng));
        }
        match GroundTruth::from_anchors(kernel.clone(), anchors, weights, norm_bound) {
            Err(EnvError::Degenerate(_)) => continue,
            other => return other,
        }
    }
    Err(EnvError::Degenerate(GROUND_TRUTH_RETRIES))
}

fn rand_chacha_from(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// `F(p) + ε`, `ε ~ N(0, R²)`.
pub fn reward(gt: &GroundTruth, p: &AugmentedContext, noise: f64, rng: &mut impl Rng) -> Result<f64, EnvError> {
    Ok(gt.eval(p)? + sample_noise(noise, rng)?)
}

fn sample_noise(noise: f64, rng: &mut impl Rng) -> Result<f64, EnvError> {
    if !(noise >= 0.0) {
        return Err(EnvError::Invalid(format!("noise scale must be non-negative, got {noise}")));
    }
    if noise == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, noise).map_err(|e| EnvError::Invalid(e.to_string()))?;
    Ok(normal.sample(rng))
}

/// `max_x F(z, x) - F(z, x_chosen)` over the decision set.
pub fn instant_regret(
    gt: &GroundTruth,
    agent: usize,
    z: &Arc<[f64]>,
    decision_set: &[Arc<[f64]>],
    chosen: usize,
) -> Result<f64, EnvError> {
    let values = arm_values(gt, agent, z, decision_set)?;
    regret_from_values(&values, chosen)
}

/// Noise-free value of every arm for one agent.
pub fn arm_values(
    gt: &GroundTruth,
    agent: usize,
    z: &Arc<[f64]>,
    decision_set: &[Arc<[f64]>],
) -> Result<Vec<f64>, EnvError> {
    if decision_set.is_empty() {
        return Err(EnvError::EmptyDecisionSet);
    }
    decision_set
        .iter()
        .map(|x| gt.eval(&AugmentedContext::new(agent, Arc::clone(z), Arc::clone(x))))
        .collect()
}

pub fn regret_from_values(values: &[f64], chosen: usize) -> Result<f64, EnvError> {
    let chosen_value = *values.get(chosen).ok_or(EnvError::ArmOutOfRange {
        index: chosen,
        len: values.len(),
    })?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best - chosen_value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetworkContextModel {
    /// Every agent has `z = [1]`.
    Identical,
    /// Agents are grouped by repeatedly extracting independent sets of
    /// `G_gamma`. Cluster `c` gets `sqrt(s) e_0 + sqrt(1 - s) e_{c+1}`, so
    /// distinct clusters have inner product `similarity`. With
    /// `max_clusters`, cluster ids wrap modulo the cap.
    Clustered {
        similarity: f64,
        max_clusters: Option<usize>,
    },
    /// Independent uniform draws on the unit sphere.
    RandomUnit { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkContexts {
    pub z: Vec<Arc<[f64]>>,
    /// Cluster label per agent (clustered mode only).
    pub clusters: Option<Vec<usize>>,
}

impl NetworkContexts {
    pub fn cluster_count(&self) -> Option<usize> {
        self.clusters.as_ref().map(|c| c.iter().copied().max().map_or(0, |m| m + 1))
    }
}

/// Colour classes obtained by peeling off greedy independent sets of `g`
/// (highest remaining degree first, ties to the lowest id).
pub fn independent_set_coloring(g: &Graph) -> Vec<usize> {
    let n = g.vertex_count();
    let mut color = vec![usize::MAX; n];
    let mut next = 0;
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let degree = |v: usize| remaining.iter().filter(|&&w| g.has_edge(v, w)).count();
        let mut order = remaining.clone();
        order.sort_by(|&a, &b| degree(b).cmp(&degree(a)).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = Vec::new();
        for v in order {
            if chosen.iter().all(|&c| !g.has_edge(c, v)) {
                chosen.push(v);
            }
        }
        for &v in &chosen {
            color[v] = next;
        }
        remaining.retain(|v| color[*v] == usize::MAX);
        next += 1;
    }
    color
}

pub fn gen_network_contexts(
    model: NetworkContextModel,
    graph: &Graph,
    gamma: usize,
    seed: u64,
) -> Result<NetworkContexts, EnvError> {
    let n = graph.vertex_count();
    match model {
        NetworkContextModel::Identical => {
            let z: Arc<[f64]> = Arc::from(vec![1.0]);
            Ok(NetworkContexts {
                z: vec![z; n],
                clusters: None,
            })
        }
        NetworkContextModel::Clustered {
            similarity,
            max_clusters,
        } => {
            if !(0.0..=1.0).contains(&similarity) {
                return Err(EnvError::Invalid(format!("similarity must be in [0, 1], got {similarity}")));
            }
            if max_clusters == Some(0) {
                return Err(EnvError::Invalid("max_clusters must be positive".into()));
            }
            let gpow = graph_power(graph, gamma)?;
            let mut labels = independent_set_coloring(&gpow);
            if let Some(cap) = max_clusters {
                labels.iter_mut().for_each(|c| *c %= cap);
            }
            let count = labels.iter().copied().max().map_or(0, |m| m + 1);
            let reps: Vec<Arc<[f64]>> = (0..count)
                .map(|c| {
                    let mut z = vec![0.0; count + 1];
                    z[0] = similarity.sqrt();
                    z[c + 1] = (1.0 - similarity).sqrt();
                    Arc::from(z)
                })
                .collect();
            Ok(NetworkContexts {
                z: labels.iter().map(|&c| Arc::clone(&reps[c])).collect(),
                clusters: Some(labels),
            })
        }
        NetworkContextModel::RandomUnit { dim } => {
            if dim == 0 {
                return Err(EnvError::Invalid("network context dimension must be positive".into()));
            }
            let mut rng = rand_chacha_from(seed);
            Ok(NetworkContexts {
                z: (0..n).map(|_| Arc::from(sample_unit_sphere(&mut rng, dim))).collect(),
                clusters: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionSetSpec {
    pub arms: usize,
    pub dim: usize,
    /// One set shared by every agent and round.
    pub fixed: bool,
}

impl DecisionSetSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.arms == 0 || self.dim == 0 {
            return Err(EnvError::Invalid("arms and dim must be positive".into()));
        }
        Ok(())
    }
}

/// Decision set of `agent` at `round`, from its derived stream.
pub fn sample_decision_set(
    spec: &DecisionSetSpec,
    master: u64,
    trial: u64,
    agent: usize,
    round: usize,
) -> Vec<Arc<[f64]>> {
    let (agent, round) = if spec.fixed { (0, 0) } else { (agent as u64, round as u64) };
    let mut rng = stream(master, trial, agent, round, Purpose::DecisionSet);
    (0..spec.arms)
        .map(|_| Arc::from(sample_unit_ball(&mut rng, spec.dim)))
        .collect()
}

/// Everything one round of one trial looks like from the outside.
#[derive(Debug, Clone)]
pub struct RoundData {
    pub round: usize,
    /// `decision_sets[v]`
    pub decision_sets: Vec<Vec<Arc<[f64]>>>,
    /// `values[v][i] = F(z_v, x_i)`
    pub values: Vec<Vec<f64>>,
    /// `noise[v]`: the noise added to whatever `v` pulls this round.
    pub noise: Vec<f64>,
}

impl RoundData {
    pub fn reward(&self, agent: usize, arm: usize) -> f64 {
        self.values[agent][arm] + self.noise[agent]
    }

    pub fn regret(&self, agent: usize, arm: usize) -> Result<f64, EnvError> {
        regret_from_values(&self.values[agent], arm)
    }

    pub fn best_arm(&self, agent: usize) -> usize {
        argmax(&self.values[agent])
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One trial's environment realization.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub truth: GroundTruth,
    pub contexts: NetworkContexts,
    pub decision: DecisionSetSpec,
    pub noise: f64,
    pub master: u64,
    pub trial: u64,
}

impl BanditEnv {
    pub fn agents(&self) -> usize {
        self.contexts.z.len()
    }

    pub fn z(&self, agent: usize) -> &Arc<[f64]> {
        &self.contexts.z[agent]
    }

    pub fn round(&self, round: usize) -> Result<RoundData, EnvError> {
        let n = self.agents();
        let mut decision_sets = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        let mut shared: Option<Vec<Arc<[f64]>>> = None;
        for v in 0..n {
            let set = match (&shared, self.decision.fixed) {
                (Some(s), true) => s.clone(),
                _ => sample_decision_set(&self.decision, self.master, self.trial, v, round),
            };
            if self.decision.fixed {
                shared = Some(set.clone());
            }
            values.push(arm_values(&self.truth, v, self.z(v), &set)?);
            decision_sets.push(set);
            let mut rng = stream(self.master, self.trial, v as u64, round as u64, Purpose::Noise);
            noise.push(sample_noise(self.noise, &mut rng)?);
        }
        Ok(RoundData {
            round,
            decision_sets,
            values,
            noise,
        })
    }
}
