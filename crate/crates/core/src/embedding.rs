//! Online estimate of the network kernel from the action contexts each agent
//! has played, via empirical mean embeddings and their MMD.

use std::sync::Arc;

use thiserror::Error;

use crate::kernel::{EmpiricalTable, KernelError, KernelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("agent {0} has no observations")]
    NoObservations(usize),
    #[error("agent {0} is out of range")]
    UnknownAgent(usize),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
}

/// Running double sums `S_vw = Σ_i Σ_j K_x(x_{v,i}, x_{w,j})` for all agent
/// pairs, updated in time linear in the stored history per observation.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    kernel: KernelSpec,
    history: Vec<Vec<Arc<[f64]>>>,
    // row-major V x V, symmetric; the diagonal holds S_vv
    sums: Vec<f64>,
}

impl EmbeddingState {
    pub fn new(agents: usize, kernel: KernelSpec) -> Self {
        Self {
            kernel,
            history: vec![Vec::new(); agents],
            sums: vec![0.0; agents * agents],
        }
    }

    pub fn agents(&self) -> usize {
        self.history.len()
    }

    pub fn count(&self, agent: usize) -> usize {
        self.history.get(agent).map_or(0, Vec::len)
    }

    pub fn history(&self, agent: usize) -> &[Arc<[f64]>] {
        &self.history[agent]
    }

    pub fn sum(&self, v: usize, w: usize) -> f64 {
        self.sums[v * self.agents() + w]
    }

    pub fn observe(&mut self, agent: usize, x: Arc<[f64]>) -> Result<(), EmbeddingError> {
        let n = self.agents();
        if agent >= n {
            return Err(EmbeddingError::UnknownAgent(agent));
        }
        for w in 0..n {
            let mut cross = 0.0;
            for y in &self.history[w] {
                cross += self.kernel.eval(&x, y)?;
            }
            if w == agent {
                let own = self.kernel.eval(&x, &x)?;
                self.sums[agent * n + agent] += 2.0 * cross + own;
            } else {
                self.sums[agent * n + w] += cross;
                self.sums[w * n + agent] += cross;
            }
        }
        self.history[agent].push(x);
        Ok(())
    }

    /// Biased MMD estimate between the two agents' empirical embeddings.
    pub fn empirical_mmd(&self, v: usize, w: usize) -> Result<f64, EmbeddingError> {
        Ok(self.empirical_mmd_squared(v, w)?.max(0.0).sqrt())
    }

    /// The squared estimate before clamping; rounding can make it slightly
    /// negative.
    pub fn empirical_mmd_squared(&self, v: usize, w: usize) -> Result<f64, EmbeddingError> {
        for a in [v, w] {
            if a >= self.agents() {
                return Err(EmbeddingError::UnknownAgent(a));
            }
            if self.count(a) == 0 {
                return Err(EmbeddingError::NoObservations(a));
            }
        }
        if v == w {
            return Ok(0.0);
        }
        let tv = self.count(v) as f64;
        let tw = self.count(w) as f64;
        Ok(self.sum(v, v) / (tv * tv) + self.sum(w, w) / (tw * tw) - 2.0 * self.sum(v, w) / (tv * tw))
    }

    /// `exp(-MMD / (2 σ_z²))`, or with `MMD²` in the exponent when
    /// `squared` is set.
    pub fn empirical_network_kernel(&self, v: usize, w: usize, sigma_z: f64, squared: bool) -> Result<f64, EmbeddingError> {
        if !(sigma_z > 0.0) {
            return Err(EmbeddingError::InvalidBandwidth(sigma_z));
        }
        let mmd = self.empirical_mmd(v, w)?;
        let d = if squared { mmd * mmd } else { mmd };
        Ok((-d / (2.0 * sigma_z * sigma_z)).exp())
    }

    /// Full `V x V` table. Pairs where either agent has no data yet get 1.
    pub fn table(&self, sigma_z: f64, squared: bool) -> Result<EmpiricalTable, EmbeddingError> {
        if !(sigma_z > 0.0) {
            return Err(EmbeddingError::InvalidBandwidth(sigma_z));
        }
        let n = self.agents();
        let mut values = vec![1.0; n * n];
        for v in 0..n {
            for w in v + 1..n {
                if self.count(v) == 0 || self.count(w) == 0 {
                    continue;
                }
                let k = self.empirical_network_kernel(v, w, sigma_z, squared)?;
                values[v * n + w] = k;
                values[w * n + v] = k;
            }
        }
        Ok(EmpiricalTable::new(n, values))
    }
}
