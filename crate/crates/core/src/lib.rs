//! Cooperative multi-agent kernel UCB over delayed communication networks.
//!
//! Agents sit on the vertices of a graph, see messages from agents within
//! `gamma` hops after a delay equal to their hop distance, and learn a
//! reward function over augmented contexts `(z, x)` with the composed
//! kernel `K_z * K_x`.

pub mod agents;
pub mod embedding;
pub mod environment;
pub mod graph;
pub mod harness;
pub mod kernel;
pub mod network;
pub mod regression;
pub mod rng;

pub use agents::{AgentError, AgentState, LinUcbState, PolicyKind, Role, StepOutcome};
pub use embedding::{EmbeddingError, EmbeddingState};
pub use environment::{BanditEnv, DecisionSetSpec, EnvError, GroundTruth, NetworkContextModel, RoundData};
pub use graph::{CentralAssignment, CliqueCover, DistanceMatrix, Graph, GraphError};
pub use harness::{ExperimentConfig, HarnessError};
pub use kernel::{AugmentedContext, ComposedKernel, GramMatrix, KernelError, KernelSpec, NetworkKernel};
pub use network::{Message, NetworkSim};
pub use regression::{BackendKind, ConfidenceParams, RegressionError, RegressionState, UcbParams};
