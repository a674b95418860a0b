//! Round-synchronous message passing with distance-exact delays.
//!
//! A message created by `v` at round `t` reaches every `v'` with
//! `1 <= d(v, v') <= gamma` at round `t + d(v, v')`, and never reaches the
//! others. Hop-by-hop forwarding is not simulated; the distance cutoff has
//! the same observable effect.

use std::collections::BTreeMap;

use crate::graph::{all_pairs_distances, DistanceMatrix, Graph, GraphError};
use crate::kernel::AugmentedContext;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: usize,
    pub origin: usize,
    pub payload: AugmentedContext,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkSim {
    distances: DistanceMatrix,
    gamma: usize,
    // destination -> delivery round -> messages
    inbox: Vec<BTreeMap<usize, Vec<Message>>>,
    sent: u64,
    delivered: u64,
}

impl NetworkSim {
    pub fn new(graph: &Graph, gamma: usize) -> Result<Self, GraphError> {
        Self::from_distances(all_pairs_distances(graph), gamma)
    }

    pub fn from_distances(distances: DistanceMatrix, gamma: usize) -> Result<Self, GraphError> {
        if gamma == 0 {
            return Err(GraphError::ZeroGamma);
        }
        let n = distances.vertex_count();
        Ok(Self {
            distances,
            gamma,
            inbox: vec![BTreeMap::new(); n],
            sent: 0,
            delivered: 0,
        })
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Schedules `m` for every agent within `gamma` hops of its origin.
    pub fn broadcast(&mut self, m: Message) {
        let origin = m.origin;
        let n = self.inbox.len();
        for dest in 0..n {
            let d = self.distances.get(origin, dest);
            if d == 0 || d > self.gamma {
                continue;
            }
            self.inbox[dest].entry(m.round + d).or_default().push(m.clone());
            self.sent += 1;
        }
    }

    /// Removes and returns everything due for `agent` at `round`, ordered by
    /// creation round and then origin.
    pub fn deliver(&mut self, round: usize, agent: usize) -> Vec<Message> {
        let mut due = self.inbox[agent].remove(&round).unwrap_or_default();
        due.sort_by_key(|m| (m.round, m.origin));
        self.delivered += due.len() as u64;
        due
    }

    /// Copies scheduled so far (one per destination).
    pub fn sent_count(&self) -> u64 {
        self.sent
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    /// Copies scheduled but not yet delivered.
    pub fn pending_count(&self) -> usize {
        self.inbox.iter().flat_map(|b| b.values()).map(Vec::len).sum()
    }
}
