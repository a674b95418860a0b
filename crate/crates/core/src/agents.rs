//! Decision policies and the per-agent round loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::environment::{argmax, EnvError, RoundData};
use crate::graph::CliqueCover;
use crate::kernel::{AugmentedContext, ComposedKernel};
use crate::network::{Message, NetworkSim};
use crate::regression::{RegressionError, RegressionState, UcbParams};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("empty decision set")]
    EmptyDecisionSet,
    #[error("agent {agent} has no replayable central action at round {round}")]
    MissingReplay { agent: usize, round: usize },
    #[error("replayed action of agent {0} is not in its decision set; the dist policy needs a fixed decision set")]
    ReplayNotInDecisionSet(usize),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Coop,
    Dist,
    Eager,
    Independent,
    LinUcb,
    Naive,
    /// Reference policy that plays the true best arm.
    Omniscient,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Coop,
        PolicyKind::Dist,
        PolicyKind::Eager,
        PolicyKind::Independent,
        PolicyKind::LinUcb,
        PolicyKind::Naive,
        PolicyKind::Omniscient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Coop => "coop",
            PolicyKind::Dist => "dist",
            PolicyKind::Eager => "eager",
            PolicyKind::Independent => "independent",
            PolicyKind::LinUcb => "linucb",
            PolicyKind::Naive => "naive",
            PolicyKind::Omniscient => "omniscient",
        }
    }

    /// Whether the policy learns through the composed-kernel regression.
    pub fn uses_kernel(self) -> bool {
        !matches!(self, PolicyKind::LinUcb | PolicyKind::Omniscient)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == t)
            .ok_or_else(|| AgentError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Plain,
    Central,
    Peripheral { central: usize, delay: usize },
}

/// Ridge-regression UCB on raw action vectors, kept separate from the
/// kernel machinery so the two can cross-check each other.
#[derive(Debug, Clone)]
pub struct LinUcbState {
    a_inv: DMatrix<f64>,
    b: DVector<f64>,
    theta: DVector<f64>,
    count: usize,
}

impl LinUcbState {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            a_inv: DMatrix::identity(dim, dim) / lambda,
            b: DVector::zeros(dim),
            theta: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `(θᵀx, xᵀA⁻¹x)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let x = DVector::from_column_slice(x);
        let mean = self.theta.dot(&x);
        let width = x.dot(&(&self.a_inv * &x)).max(0.0);
        (mean, width)
    }

    pub fn score(&self, x: &[f64], alpha: f64) -> f64 {
        let (mean, w) = self.predict(x);
        mean + alpha * w.sqrt()
    }

    pub fn update(&mut self, x: &[f64], y: f64) {
        let x = DVector::from_column_slice(x);
        let ax = &self.a_inv * &x;
        let denom = 1.0 + x.dot(&ax);
        self.a_inv -= &ax * ax.transpose() / denom;
        self.b += &x * y;
        self.theta = &self.a_inv * &self.b;
        self.count += 1;
    }
}

/// Argmax of `scores` with ties to the lowest index.
pub fn linucb_select(state: &LinUcbState, decision_set: &[Arc<[f64]>], alpha: f64) -> Result<usize, AgentError> {
    if decision_set.is_empty() {
        return Err(AgentError::EmptyDecisionSet);
    }
    let scores: Vec<f64> = decision_set.iter().map(|x| state.score(x, alpha)).collect();
    Ok(argmax(&scores))
}

#[derive(Debug, Clone)]
enum Model {
    Kernel(RegressionState),
    Linear(Option<LinUcbState>),
    None,
}

/// Result of one agent's round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub arm: usize,
    pub reward: f64,
    /// Posterior variance of the played context just before it was played
    /// (kernel policies only).
    pub variance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub z: Arc<[f64]>,
    pub kind: PolicyKind,
    pub role: Role,
    model: Model,
    lambda: f64,
    replay: Option<Message>,
}

impl AgentState {
    pub fn new(
        id: usize,
        z: Arc<[f64]>,
        kind: PolicyKind,
        role: Role,
        kernel: ComposedKernel,
        lambda: f64,
    ) -> Result<Self, AgentError> {
        let model = match kind {
            PolicyKind::LinUcb => Model::Linear(None),
            PolicyKind::Omniscient => Model::None,
            _ => Model::Kernel(RegressionState::new(kernel, lambda)?),
        };
        Ok(Self {
            id,
            z,
            kind,
            role,
            model,
            lambda,
            replay: None,
        })
    }

    /// Number of observations incorporated so far.
    pub fn state_len(&self) -> usize {
        match &self.model {
            Model::Kernel(r) => r.len(),
            Model::Linear(l) => l.as_ref().map_or(0, LinUcbState::len),
            Model::None => 0,
        }
    }

    pub fn regression(&self) -> Option<&RegressionState> {
        match &self.model {
            Model::Kernel(r) => Some(r),
            _ => None,
        }
    }

    /// Replaces the composed kernel (used when the empirical network kernel
    /// is re-estimated).
    pub fn set_kernel(&mut self, kernel: ComposedKernel) -> Result<(), AgentError> {
        if let Model::Kernel(r) = &mut self.model {
            r.set_kernel(kernel)?;
        }
        Ok(())
    }

    pub fn context(&self, x: &Arc<[f64]>) -> AugmentedContext {
        AugmentedContext::new(self.id, Arc::clone(&self.z), Arc::clone(x))
    }

    /// Policy score of every arm (kernel UCB or LinUCB).
    pub fn scores(&self, decision_set: &[Arc<[f64]>], params: &UcbParams) -> Result<Vec<f64>, AgentError> {
        Ok(self.scored(decision_set, params)?.into_iter().map(|(s, _)| s).collect())
    }

    fn scored(&self, decision_set: &[Arc<[f64]>], params: &UcbParams) -> Result<Vec<(f64, Option<f64>)>, AgentError> {
        match &self.model {
            Model::Kernel(r) => {
                let width = r.exploration_width(params);
                decision_set
                    .iter()
                    .map(|x| {
                        let (m, v) = r.predict(&self.context(x))?;
                        Ok((m + width * v.sqrt(), Some(v)))
                    })
                    .collect()
            }
            Model::Linear(l) => {
                let fresh;
                let state = match l {
                    Some(s) => s,
                    None => {
                        fresh = LinUcbState::new(decision_set.first().map_or(0, |x| x.len()), self.lambda);
                        &fresh
                    }
                };
                Ok(decision_set.iter().map(|x| (state.score(x, params.eta), None)).collect())
            }
            Model::None => Ok(vec![(0.0, None); decision_set.len()]),
        }
    }

    /// Round 1 or an empty state: a uniformly random arm from the agent's
    /// derived stream. Otherwise the UCB argmax, ties to the lowest index.
    pub fn select_action(
        &self,
        decision_set: &[Arc<[f64]>],
        round: usize,
        params: &UcbParams,
        rng: &mut impl Rng,
    ) -> Result<usize, AgentError> {
        self.select_with_variance(decision_set, round, params, rng).map(|(i, _)| i)
    }

    fn select_with_variance(
        &self,
        decision_set: &[Arc<[f64]>],
        round: usize,
        params: &UcbParams,
        rng: &mut impl Rng,
    ) -> Result<(usize, Option<f64>), AgentError> {
        if decision_set.is_empty() {
            return Err(AgentError::EmptyDecisionSet);
        }
        if round <= 1 || self.state_len() == 0 {
            let i = rng.random_range(0..decision_set.len());
            let var = match &self.model {
                Model::Kernel(r) => Some(r.predict_variance(&self.context(&decision_set[i]))?),
                _ => None,
            };
            return Ok((i, var));
        }
        let scored = self.scored(decision_set, params)?;
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let i = argmax(&scores);
        Ok((i, scored[i].1))
    }

    /// Filters delivered messages according to the policy.
    pub fn accept_messages(&self, msgs: Vec<Message>, cover: &CliqueCover) -> Vec<Message> {
        match (self.kind, self.role) {
            (PolicyKind::Coop, _) => msgs
                .into_iter()
                .filter(|m| cover.same_clique(m.origin, self.id))
                .collect(),
            (PolicyKind::Eager | PolicyKind::Naive, _) => msgs,
            (PolicyKind::Dist, Role::Central) => msgs,
            _ => Vec::new(),
        }
    }

    fn incorporate(&mut self, p: AugmentedContext, y: f64) -> Result<(), AgentError> {
        let lambda = self.lambda;
        match &mut self.model {
            Model::Kernel(r) => r.incorporate(p, y)?,
            Model::Linear(l) => l.get_or_insert_with(|| LinUcbState::new(p.x.len(), lambda)).update(&p.x, y),
            Model::None => {}
        }
        Ok(())
    }

    fn replay_arm(&self, decision_set: &[Arc<[f64]>], round: usize) -> Result<usize, AgentError> {
        let m = self.replay.as_ref().ok_or(AgentError::MissingReplay { agent: self.id, round })?;
        decision_set
            .iter()
            .position(|x| x[..] == m.payload.x[..])
            .ok_or(AgentError::ReplayNotInDecisionSet(self.id))
    }

    /// One full round: select, pull, broadcast, learn from the own
    /// observation, then from accepted messages in delivery order.
    pub fn step(
        &mut self,
        data: &RoundData,
        sim: &mut NetworkSim,
        cover: &CliqueCover,
        params: &UcbParams,
        master: u64,
        trial: u64,
    ) -> Result<StepOutcome, AgentError> {
        let round = data.round;
        let decision_set = &data.decision_sets[self.id];
        let mut early = None;
        if let Role::Peripheral { central, .. } = self.role {
            // Drain before acting so the central's round t - d action is
            // available at round t.
            let msgs = sim.deliver(round, self.id);
            if let Some(m) = msgs.into_iter().filter(|m| m.origin == central).last() {
                self.replay = Some(m);
            }
            early = Some(());
        }

        let (arm, variance) = match (self.kind, self.role) {
            (PolicyKind::Omniscient, _) => (data.best_arm(self.id), None),
            (PolicyKind::Dist, Role::Peripheral { delay, .. }) if round > delay => {
                let arm = self.replay_arm(decision_set, round)?;
                let var = match &self.model {
                    Model::Kernel(r) => Some(r.predict_variance(&self.context(&decision_set[arm]))?),
                    _ => None,
                };
                (arm, var)
            }
            _ => {
                let mut rng = stream(master, trial, self.id as u64, round as u64, Purpose::Policy);
                self.select_with_variance(decision_set, round, params, &mut rng)?
            }
        };

        let reward = data.reward(self.id, arm);
        let own = self.context(&decision_set[arm]);
        sim.broadcast(Message {
            round,
            origin: self.id,
            payload: own.clone(),
            reward,
        });
        self.incorporate(own, reward)?;

        if early.is_none() {
            let msgs = sim.deliver(round, self.id);
            for m in self.accept_messages(msgs, cover) {
                let p = if self.kind == PolicyKind::Naive {
                    m.payload.with_agent(self.id, Arc::clone(&self.z))
                } else {
                    m.payload
                };
                self.incorporate(p, m.reward)?;
            }
        }
        Ok(StepOutcome { arm, reward, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::kernel::KernelSpec;
    use crate::regression::UcbParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(kind: PolicyKind, id: usize) -> AgentState {
        let k = ComposedKernel::oracle(KernelSpec::Linear, KernelSpec::Linear);
        AgentState::new(id, Arc::from(vec![1.0]), kind, Role::Plain, k, 1.0).unwrap()
    }

    fn msg(origin: usize) -> Message {
        Message {
            round: 1,
            origin,
            payload: AugmentedContext::new(origin, Arc::from(vec![1.0]), Arc::from(vec![0.5])),
            reward: 1.0,
        }
    }

    #[test]
    fn filters_by_policy() {
        let cover = CliqueCover::from_parts(3, vec![vec![0, 1], vec![2]]);
        let msgs = vec![msg(1), msg(2)];
        let got = agent(PolicyKind::Coop, 0).accept_messages(msgs.clone(), &cover);
        assert_eq!(got.iter().map(|m| m.origin).collect::<Vec<_>>(), vec![1]);
        assert_eq!(agent(PolicyKind::Eager, 0).accept_messages(msgs.clone(), &cover).len(), 2);
        assert_eq!(agent(PolicyKind::Naive, 0).accept_messages(msgs.clone(), &cover).len(), 2);
        assert!(agent(PolicyKind::Independent, 0).accept_messages(msgs.clone(), &cover).is_empty());
        assert!(agent(PolicyKind::LinUcb, 0).accept_messages(msgs, &cover).is_empty());
    }

    #[test]
    fn round_one_is_reproducible_random() {
        let a = agent(PolicyKind::Independent, 0);
        let set: Vec<Arc<[f64]>> = (0..8).map(|i| Arc::from(vec![i as f64 / 8.0])).collect();
        let u = UcbParams::with_eta(1.0);
        let i = a.select_action(&set, 1, &u, &mut stream(3, 0, 0, 1, Purpose::Policy)).unwrap();
        let j = a.select_action(&set, 1, &u, &mut stream(3, 0, 0, 1, Purpose::Policy)).unwrap();
        assert_eq!(i, j);
        assert!(a.select_action(&[], 1, &u, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn greedy_picks_best_mean() {
        let mut a = agent(PolicyKind::Independent, 0);
        a.incorporate(a.context(&Arc::from(vec![1.0])), 2.0).unwrap();
        let set: Vec<Arc<[f64]>> = vec![Arc::from(vec![-1.0]), Arc::from(vec![0.5]), Arc::from(vec![0.2])];
        let i = a
            .select_action(&set, 2, &UcbParams::with_eta(0.0), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(i, 1);
    }

    #[test]
    fn linucb_zero_alpha_is_greedy() {
        let mut s = LinUcbState::new(2, 1.0);
        s.update(&[1.0, 0.0], 1.0);
        s.update(&[0.0, 1.0], -1.0);
        let set: Vec<Arc<[f64]>> = vec![Arc::from(vec![0.0, 1.0]), Arc::from(vec![0.7, 0.0])];
        assert_eq!(linucb_select(&s, &set, 0.0).unwrap(), 1);
    }

    #[test]
    fn independent_state_grows_by_one_per_round() {
        use crate::environment::RoundData;
        let g = Graph::complete(2).unwrap();
        let mut sim = NetworkSim::new(&g, 1).unwrap();
        let cover = CliqueCover::from_parts(2, vec![vec![0, 1]]);
        let mut a = agent(PolicyKind::Independent, 0);
        let set: Vec<Arc<[f64]>> = vec![Arc::from(vec![0.1]), Arc::from(vec![0.4])];
        for t in 1..=5 {
            let data = RoundData {
                round: t,
                decision_sets: vec![set.clone(), set.clone()],
                values: vec![vec![0.1, 0.4]; 2],
                noise: vec![0.0; 2],
            };
            a.step(&data, &mut sim, &cover, &UcbParams::with_eta(1.0), 0, 0).unwrap();
            assert_eq!(a.state_len(), t);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
