//! Kernels on action and network contexts, their Hadamard composition, and
//! Gram-matrix utilities (composition at the matrix level, numerical rank,
//! PSD diagnostics).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("kernel parameter `{name}` must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("unsupported Matérn smoothness {0}; closed forms exist for 0.5, 1.5 and 2.5")]
    UnsupportedSmoothness(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("empirical network kernel has no entry for agent {0}")]
    UnknownAgent(usize),
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("cannot parse kernel spec `{0}`")]
    Parse(String),
}

/// Matérn smoothness values that admit closed forms without Bessel functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternSmoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternSmoothness {
    pub fn from_nu(nu: f64) -> Result<Self, KernelError> {
        if nu == 0.5 {
            Ok(Self::Half)
        } else if nu == 1.5 {
            Ok(Self::ThreeHalves)
        } else if nu == 2.5 {
            Ok(Self::FiveHalves)
        } else {
            Err(KernelError::UnsupportedSmoothness(nu))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }
}

/// A base kernel on real vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `<a, b>`. Not normalized: callers keep inputs inside the unit ball.
    Linear,
    /// `exp(-|a - b|^2 / (2 bandwidth^2))`.
    Rbf { bandwidth: f64 },
    Matern {
        lengthscale: f64,
        smoothness: MaternSmoothness,
    },
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self, KernelError> {
        let spec = Self::Rbf { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern(lengthscale: f64, nu: f64) -> Result<Self, KernelError> {
        let spec = Self::Matern {
            lengthscale,
            smoothness: MaternSmoothness::from_nu(nu)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            Self::Linear => Ok(()),
            Self::Rbf { bandwidth } => positive("bandwidth", bandwidth),
            Self::Matern { lengthscale, .. } => positive("lengthscale", lengthscale),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear)
    }

    /// Evaluates `K(a, b)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
        if a.len() != b.len() {
            return Err(KernelError::DimensionMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        self.validate()?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Evaluation without parameter or dimension checks; `a` and `b` must
    /// have equal length and the spec must be valid.
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Self::Linear => dot(a, b),
            Self::Rbf { bandwidth } => {
                (-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()
            }
            Self::Matern {
                lengthscale,
                smoothness,
            } => {
                let r = squared_distance(a, b).sqrt() / lengthscale;
                match smoothness {
                    MaternSmoothness::Half => (-r).exp(),
                    MaternSmoothness::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternSmoothness::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
                    }
                }
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => write!(f, "linear"),
            Self::Rbf { bandwidth } => write!(f, "rbf:{bandwidth}"),
            Self::Matern {
                lengthscale,
                smoothness,
            } => write!(f, "matern:{lengthscale}:{}", smoothness.nu()),
        }
    }
}

/// Parses `linear`, `rbf[:bandwidth]` or `matern[:lengthscale[:nu]]`.
impl FromStr for KernelSpec {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, default: f64| -> Result<f64, KernelError> {
            match parts.get(i) {
                None => Ok(default),
                Some(p) => p.trim().parse().map_err(|_| KernelError::Parse(s.to_string())),
            }
        };
        match parts[0].trim().to_ascii_lowercase().as_str() {
            "linear" if parts.len() == 1 => Ok(Self::Linear),
            "rbf" | "gaussian" if parts.len() <= 2 => Self::rbf(num(1, 1.0)?),
            "matern" if parts.len() <= 3 => Self::matern(num(1, 1.0)?, num(2, 2.5)?),
            _ => Err(KernelError::Parse(s.to_string())),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), KernelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(KernelError::NonPositiveParameter { name, value })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// An agent's network context paired with an action context.
///
/// `agent` identifies whose network context `z` is; the empirical network
/// kernel is indexed by it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedContext {
    pub agent: usize,
    pub z: Arc<[f64]>,
    pub x: Arc<[f64]>,
}

impl AugmentedContext {
    pub fn new(agent: usize, z: Arc<[f64]>, x: Arc<[f64]>) -> Self {
        Self { agent, z, x }
    }

    /// The same action context seen from another agent's network context.
    pub fn with_agent(&self, agent: usize, z: Arc<[f64]>) -> Self {
        Self {
            agent,
            z,
            x: Arc::clone(&self.x),
        }
    }
}

/// Pairwise network-kernel values estimated online, indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    agents: usize,
    values: Vec<f64>,
}

impl EmpiricalTable {
    /// `values` is a row-major `agents x agents` matrix.
    pub fn new(agents: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), agents * agents, "empirical table shape");
        Self { agents, values }
    }

    /// Table with every entry equal to one (no information yet).
    pub fn uninformed(agents: usize) -> Self {
        Self::new(agents, vec![1.0; agents * agents])
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn get(&self, v: usize, w: usize) -> Result<f64, KernelError> {
        if v >= self.agents {
            return Err(KernelError::UnknownAgent(v));
        }
        if w >= self.agents {
            return Err(KernelError::UnknownAgent(w));
        }
        Ok(self.values[v * self.agents + w])
    }

    pub fn as_matrix(&self) -> GramMatrix {
        GramMatrix(DMatrix::from_row_slice(self.agents, self.agents, &self.values))
    }
}

/// Source of network-kernel values: an oracle kernel on `z` vectors, or an
/// empirical estimate keyed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkKernel {
    Oracle(KernelSpec),
    Empirical(Arc<EmpiricalTable>),
}

impl NetworkKernel {
    pub fn eval(&self, p: &AugmentedContext, q: &AugmentedContext) -> Result<f64, KernelError> {
        match self {
            Self::Oracle(spec) => spec.eval(&p.z, &q.z),
            Self::Empirical(table) => table.get(p.agent, q.agent),
        }
    }
}

/// `K((z, x), (z', x')) = K_z(z, z') * K_x(x, x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedKernel {
    pub network: NetworkKernel,
    pub action: KernelSpec,
}

impl ComposedKernel {
    pub fn new(network: NetworkKernel, action: KernelSpec) -> Self {
        Self { network, action }
    }

    pub fn oracle(network: KernelSpec, action: KernelSpec) -> Self {
        Self::new(NetworkKernel::Oracle(network), action)
    }

    pub fn eval(&self, p: &AugmentedContext, q: &AugmentedContext) -> Result<f64, KernelError> {
        let kz = self.network.eval(p, q)?;
        let kx = self.action.eval(&p.x, &q.x)?;
        Ok(kz * kx)
    }

    /// True when both factors are linear oracle kernels, in which case the
    /// composed kernel is the inner product of `z ⊗ x` features.
    pub fn has_finite_features(&self) -> bool {
        matches!(self.network, NetworkKernel::Oracle(KernelSpec::Linear)) && self.action.is_linear()
    }

    /// Feature vector `z ⊗ x` (row-major over `z`), when one exists.
    pub fn features(&self, p: &AugmentedContext) -> Option<Vec<f64>> {
        if !self.has_finite_features() {
            return None;
        }
        let mut out = Vec::with_capacity(p.z.len() * p.x.len());
        for zi in p.z.iter() {
            out.extend(p.x.iter().map(|xj| zi * xj));
        }
        Some(out)
    }
}

/// Square symmetric matrix of kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub DMatrix<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    Hadamard,
    Sum,
    Kronecker,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..i).all(|j| (self.0[(i, j)] - self.0[(j, i)]).abs() <= tol))
    }

    pub fn min_eigenvalue(&self) -> Result<f64, KernelError> {
        if self.dim() == 0 {
            return Err(KernelError::EmptyMatrix);
        }
        let eig = self.0.clone().symmetric_eigen();
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn is_psd(&self, tol: f64) -> Result<bool, KernelError> {
        Ok(self.min_eigenvalue()? >= -tol)
    }
}

pub fn build_gram(kernel: &ComposedKernel, points: &[AugmentedContext]) -> Result<GramMatrix, KernelError> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(&points[i], &points[j])?;
            m[(i, j)] = k;
            m[(j, i)] = k;
        }
    }
    Ok(GramMatrix(m))
}

/// Gram matrix of a single base kernel over plain vectors.
pub fn build_base_gram(kernel: &KernelSpec, points: &[&[f64]]) -> Result<GramMatrix, KernelError> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(points[i], points[j])?;
            m[(i, j)] = k;
            m[(j, i)] = k;
        }
    }
    Ok(GramMatrix(m))
}

pub fn gram_compose(a: &GramMatrix, b: &GramMatrix, mode: CompositionMode) -> Result<GramMatrix, KernelError> {
    let shape = |g: &GramMatrix| (g.0.nrows(), g.0.ncols());
    match mode {
        CompositionMode::Hadamard | CompositionMode::Sum if shape(a) != shape(b) => {
            Err(KernelError::ShapeMismatch(shape(a), shape(b)))
        }
        CompositionMode::Hadamard => Ok(GramMatrix(a.0.component_mul(&b.0))),
        CompositionMode::Sum => Ok(GramMatrix(&a.0 + &b.0)),
        CompositionMode::Kronecker => Ok(GramMatrix(a.0.kronecker(&b.0))),
    }
}

/// Default relative tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Number of singular values above `tol` times the largest one. Applied to
/// the agent network-kernel matrix this is the heterogeneity of the agents.
pub fn numerical_rank(g: &GramMatrix, tol: f64) -> Result<usize, KernelError> {
    positive("tol", tol)?;
    if g.0.nrows() == 0 || g.0.ncols() == 0 {
        return Err(KernelError::EmptyMatrix);
    }
    let sv = g.0.clone().singular_values();
    let largest = sv.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * largest).count())
}
