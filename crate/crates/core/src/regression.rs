//! Incremental kernel ridge regression on augmented contexts.
//!
//! The general path keeps `M = (K + λI)^-1` and grows it one point at a
//! time by a Schur-complement block update. When both factors of the
//! composed kernel are linear the kernel has the finite feature map
//! `z ⊗ x`, and the same estimator is carried in feature space instead
//! (`A = ΦᵀΦ + λI`, rank-one updates of `A^-1`), which costs `O(D²)` per
//! point rather than `O(n²)`. Both paths expose identical predictions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernel::{dot, AugmentedContext, ComposedKernel, KernelError};

/// Negative variances down to this value are clamped to zero.
pub const VARIANCE_TOLERANCE: f64 = 1e-10;

/// Incorporations between dense refreshes of the maintained inverse.
pub const REFRESH_INTERVAL: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("regularizer must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("non-positive Schur complement {0}")]
    NonPositiveSchur(f64),
    #[error("variance {0} is below tolerance")]
    NegativeVariance(f64),
    #[error("regularized Gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("the composed kernel has no finite feature map")]
    NoFeatureMap,
    #[error("feature dimension changed from {expected} to {got}")]
    FeatureDimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    /// Feature space when the kernel allows it, Gram inverse otherwise.
    #[default]
    Auto,
    Dual,
    Primal,
}

/// Confidence-width constants from the kernelized self-normalized bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    /// RKHS norm bound `B`.
    pub norm_bound: f64,
    /// Sub-Gaussian noise scale `R`.
    pub noise: f64,
    pub delta: f64,
    /// Number of agents the bound is made uniform over.
    pub agents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbParams {
    pub eta: f64,
    /// When set, the exploration multiplier is the theoretical width
    /// instead of `eta / sqrt(lambda)`.
    pub confidence: Option<ConfidenceParams>,
}

impl UcbParams {
    pub fn with_eta(eta: f64) -> Self {
        Self { eta, confidence: None }
    }

    pub fn theoretical(confidence: ConfidenceParams) -> Self {
        Self {
            eta: 0.0,
            confidence: Some(confidence),
        }
    }
}

#[derive(Debug, Clone)]
struct DualSolver {
    // row-major n x n
    inverse: Vec<f64>,
    // M y
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PrimalSolver {
    dim: usize,
    precision: Vec<f64>,
    covariance: Vec<f64>,
    moment: Vec<f64>,
    coef: Vec<f64>,
}

impl PrimalSolver {
    fn new(dim: usize, lambda: f64) -> Self {
        let mut precision = vec![0.0; dim * dim];
        let mut covariance = vec![0.0; dim * dim];
        for i in 0..dim {
            precision[i * dim + i] = lambda;
            covariance[i * dim + i] = 1.0 / lambda;
        }
        Self {
            dim,
            precision,
            covariance,
            moment: vec![0.0; dim],
            coef: vec![0.0; dim],
        }
    }

    fn quad(&self, phi: &[f64]) -> f64 {
        let d = self.dim;
        let nz = nonzeros(phi);
        let mut acc = 0.0;
        for &i in &nz {
            let row = &self.covariance[i * d..(i + 1) * d];
            acc += phi[i] * nz.iter().map(|&j| row[j] * phi[j]).sum::<f64>();
        }
        acc
    }
}

// Feature vectors built from sparse network contexts are mostly zeros.
fn nonzeros(phi: &[f64]) -> Vec<usize> {
    (0..phi.len()).filter(|&i| phi[i] != 0.0).collect()
}

#[derive(Debug, Clone)]
enum Solver {
    Dual(DualSolver),
    // feature dimension is fixed by the first point
    Primal(Option<PrimalSolver>),
}

/// Per-agent regression state.
#[derive(Debug, Clone)]
pub struct RegressionState {
    kernel: ComposedKernel,
    lambda: f64,
    points: Vec<AugmentedContext>,
    targets: Vec<f64>,
    // log det(I + K / λ)
    log_det: f64,
    since_refresh: usize,
    refresh_interval: usize,
    solver: Solver,
}

impl RegressionState {
    pub fn new(kernel: ComposedKernel, lambda: f64) -> Result<Self, RegressionError> {
        Self::with_backend(kernel, lambda, BackendKind::Auto)
    }

    pub fn with_backend(kernel: ComposedKernel, lambda: f64, backend: BackendKind) -> Result<Self, RegressionError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(RegressionError::InvalidLambda(lambda));
        }
        let primal = match backend {
            BackendKind::Auto => kernel.has_finite_features(),
            BackendKind::Dual => false,
            BackendKind::Primal if kernel.has_finite_features() => true,
            BackendKind::Primal => return Err(RegressionError::NoFeatureMap),
        };
        let solver = if primal {
            Solver::Primal(None)
        } else {
            Solver::Dual(DualSolver {
                inverse: Vec::new(),
                weights: Vec::new(),
            })
        };
        Ok(Self {
            kernel,
            lambda,
            points: Vec::new(),
            targets: Vec::new(),
            log_det: 0.0,
            since_refresh: 0,
            refresh_interval: REFRESH_INTERVAL,
            solver,
        })
    }

    /// One-point state: `M = [1 / (K(p, p) + λ)]`.
    pub fn init_state(
        point: AugmentedContext,
        y: f64,
        lambda: f64,
        kernel: ComposedKernel,
    ) -> Result<Self, RegressionError> {
        let mut s = Self::new(kernel, lambda)?;
        s.incorporate(point, y)?;
        Ok(s)
    }

    /// Overrides the number of incorporations between dense refreshes
    /// (`0` disables them).
    pub fn set_refresh_interval(&mut self, interval: usize) {
        self.refresh_interval = interval;
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &ComposedKernel {
        &self.kernel
    }

    pub fn points(&self) -> &[AugmentedContext] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn is_primal(&self) -> bool {
        matches!(self.solver, Solver::Primal(_))
    }

    /// The maintained `(K + λI)^-1`, for the Gram-inverse backend.
    pub fn inverse_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.solver {
            Solver::Dual(d) => {
                let n = self.points.len();
                Some(DMatrix::from_row_slice(n, n, &d.inverse))
            }
            Solver::Primal(_) => None,
        }
    }

    fn features(&self, p: &AugmentedContext) -> Result<Vec<f64>, RegressionError> {
        self.kernel.features(p).ok_or(RegressionError::NoFeatureMap)
    }

    fn kappa(&self, p: &AugmentedContext) -> Result<Vec<f64>, RegressionError> {
        self.points
            .iter()
            .map(|q| self.kernel.eval(q, p).map_err(RegressionError::from))
            .collect()
    }

    /// Adds one observation.
    pub fn incorporate(&mut self, point: AugmentedContext, y: f64) -> Result<(), RegressionError> {
        let lambda = self.lambda;
        match &mut self.solver {
            Solver::Dual(_) => {
                let kappa = self.kappa(&point)?;
                let kpp = self.kernel.eval(&point, &point)?;
                let Solver::Dual(dual) = &mut self.solver else { unreachable!() };
                let n = kappa.len();
                // b = M κ
                let b: Vec<f64> = (0..n).map(|i| dot(&dual.inverse[i * n..(i + 1) * n], &kappa)).collect();
                let schur = kpp + lambda - dot(&kappa, &b);
                if !(schur > 0.0 && schur.is_finite()) {
                    return Err(RegressionError::NonPositiveSchur(schur));
                }
                let m = n + 1;
                let mut grown = vec![0.0; m * m];
                for i in 0..n {
                    let bi = b[i] / schur;
                    let src = &dual.inverse[i * n..(i + 1) * n];
                    let dst = &mut grown[i * m..i * m + n];
                    for j in 0..n {
                        dst[j] = src[j] + bi * b[j];
                    }
                    grown[i * m + n] = -bi;
                    grown[n * m + i] = -bi;
                }
                grown[n * m + n] = 1.0 / schur;
                dual.inverse = grown;
                // M_new [y; y_n]
                let residual = (y - dot(&b, &self.targets)) / schur;
                for (w, bi) in dual.weights.iter_mut().zip(&b) {
                    *w -= bi * residual;
                }
                dual.weights.push(residual);
                self.log_det += schur.ln() - lambda.ln();
            }
            Solver::Primal(_) => {
                let phi = self.features(&point)?;
                let Solver::Primal(slot) = &mut self.solver else { unreachable!() };
                let primal = slot.get_or_insert_with(|| PrimalSolver::new(phi.len(), lambda));
                let d = primal.dim;
                if phi.len() != d {
                    return Err(RegressionError::FeatureDimension {
                        expected: d,
                        got: phi.len(),
                    });
                }
                let nz = nonzeros(&phi);
                // u = A^-1 φ, using the symmetry of A^-1 to sum rows
                let mut u = vec![0.0; d];
                for &j in &nz {
                    let row = &primal.covariance[j * d..(j + 1) * d];
                    u.iter_mut().zip(row).for_each(|(ui, r)| *ui += phi[j] * r);
                }
                let c = 1.0 + nz.iter().map(|&j| phi[j] * u[j]).sum::<f64>();
                for i in 0..d {
                    let f = u[i] / c;
                    if f == 0.0 {
                        continue;
                    }
                    let row = &mut primal.covariance[i * d..(i + 1) * d];
                    row.iter_mut().zip(&u).for_each(|(r, uj)| *r -= f * uj);
                }
                for &i in &nz {
                    for &j in &nz {
                        primal.precision[i * d + j] += phi[i] * phi[j];
                    }
                    primal.moment[i] += y * phi[i];
                }
                let fitted: f64 = nz.iter().map(|&j| phi[j] * primal.coef[j]).sum();
                let residual = (y - fitted) / c;
                primal.coef.iter_mut().zip(&u).for_each(|(t, ui)| *t += ui * residual);
                self.log_det += c.ln();
            }
        }
        self.points.push(point);
        self.targets.push(y);
        self.since_refresh += 1;
        if self.refresh_interval > 0 && self.since_refresh >= self.refresh_interval {
            self.refresh()?;
        }
        Ok(())
    }

    /// Recomputes the maintained inverse, weights and log-determinant from
    /// scratch.
    pub fn refresh(&mut self) -> Result<(), RegressionError> {
        self.since_refresh = 0;
        let lambda = self.lambda;
        match &mut self.solver {
            Solver::Dual(_) => {
                let n = self.points.len();
                if n == 0 {
                    return Ok(());
                }
                let mut a = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let k = self.kernel.eval(&self.points[i], &self.points[j])?;
                        a[(i, j)] = k;
                        a[(j, i)] = k;
                    }
                    a[(i, i)] += lambda;
                }
                let chol = a.cholesky().ok_or(RegressionError::NotPositiveDefinite)?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() - n as f64 * lambda.ln();
                let inv = chol.inverse();
                let weights = &inv * DVector::from_column_slice(&self.targets);
                let Solver::Dual(dual) = &mut self.solver else { unreachable!() };
                dual.inverse = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
                dual.weights = weights.iter().copied().collect();
                self.log_det = log_det;
            }
            Solver::Primal(Some(primal)) => {
                let d = primal.dim;
                let a = DMatrix::from_row_slice(d, d, &primal.precision);
                let chol = a.cholesky().ok_or(RegressionError::NotPositiveDefinite)?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>() - d as f64 * lambda.ln();
                let inv = chol.inverse();
                let coef = &inv * DVector::from_column_slice(&primal.moment);
                primal.covariance = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
                primal.coef = coef.iter().copied().collect();
                self.log_det = log_det;
            }
            Solver::Primal(None) => {}
        }
        Ok(())
    }

    /// Swaps in a new kernel (e.g. an updated empirical network kernel) and
    /// rebuilds the state from the stored points.
    pub fn set_kernel(&mut self, kernel: ComposedKernel) -> Result<(), RegressionError> {
        if self.is_primal() && !kernel.has_finite_features() {
            return Err(RegressionError::NoFeatureMap);
        }
        self.kernel = kernel;
        if let Solver::Primal(Some(_)) = self.solver {
            let points = std::mem::take(&mut self.points);
            let targets = std::mem::take(&mut self.targets);
            self.solver = Solver::Primal(None);
            self.log_det = 0.0;
            for (p, y) in points.into_iter().zip(targets) {
                self.incorporate(p, y)?;
            }
            return Ok(());
        }
        self.refresh()
    }

    /// Mean and variance at `p` in one pass.
    pub fn predict(&self, p: &AugmentedContext) -> Result<(f64, f64), RegressionError> {
        let (mean, raw_var) = match &self.solver {
            Solver::Dual(dual) => {
                let kpp = self.kernel.eval(p, p)?;
                if self.points.is_empty() {
                    return Ok((0.0, kpp));
                }
                let kappa = self.kappa(p)?;
                let n = kappa.len();
                let mean = dot(&kappa, &dual.weights);
                let mut quad = 0.0;
                for i in 0..n {
                    quad += kappa[i] * dot(&dual.inverse[i * n..(i + 1) * n], &kappa);
                }
                (mean, kpp - quad)
            }
            Solver::Primal(primal) => {
                let phi = self.features(p)?;
                match primal {
                    None => return Ok((0.0, dot(&phi, &phi))),
                    Some(s) => {
                        if phi.len() != s.dim {
                            return Err(RegressionError::FeatureDimension {
                                expected: s.dim,
                                got: phi.len(),
                            });
                        }
                        (dot(&phi, &s.coef), self.lambda * s.quad(&phi))
                    }
                }
            }
        };
        Ok((mean, clamp_variance(raw_var)?))
    }

    /// `κ(p)ᵀ M y`.
    pub fn predict_mean(&self, p: &AugmentedContext) -> Result<f64, RegressionError> {
        match &self.solver {
            Solver::Dual(dual) => {
                if self.points.is_empty() {
                    return Ok(0.0);
                }
                Ok(dot(&self.kappa(p)?, &dual.weights))
            }
            Solver::Primal(None) => Ok(0.0),
            Solver::Primal(Some(s)) => Ok(dot(&self.features(p)?, &s.coef)),
        }
    }

    /// `K(p, p) - κ(p)ᵀ M κ(p)`, clamped at zero within tolerance.
    pub fn predict_variance(&self, p: &AugmentedContext) -> Result<f64, RegressionError> {
        self.predict(p).map(|(_, v)| v)
    }

    /// `log det(K / λ + I)`.
    pub fn log_det_regularized(&self) -> f64 {
        self.log_det
    }

    /// Exploration multiplier applied to the standard deviation.
    pub fn exploration_width(&self, params: &UcbParams) -> f64 {
        match params.confidence {
            None => params.eta / self.lambda.sqrt(),
            Some(c) => {
                let inner = self.log_det + 2.0 * (c.agents as f64 / c.delta).ln();
                c.norm_bound + c.noise / self.lambda.sqrt() * inner.max(0.0).sqrt()
            }
        }
    }

    pub fn ucb_score(&self, p: &AugmentedContext, params: &UcbParams) -> Result<f64, RegressionError> {
        let (mean, var) = self.predict(p)?;
        Ok(mean + self.exploration_width(params) * var.sqrt())
    }
}

fn clamp_variance(v: f64) -> Result<f64, RegressionError> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(RegressionError::NegativeVariance(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelSpec, NetworkKernel};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn rbf_kernel() -> ComposedKernel {
        let rbf = KernelSpec::rbf(1.0).unwrap();
        ComposedKernel::oracle(rbf, rbf)
    }

    fn ctx(x: &[f64]) -> AugmentedContext {
        AugmentedContext::new(0, Arc::from(vec![0.0]), Arc::from(x.to_vec()))
    }

    #[test]
    fn init_state_inverse() {
        let s = RegressionState::init_state(ctx(&[0.1]), 1.0, 1.0, rbf_kernel()).unwrap();
        assert_eq!(s.inverse_matrix().unwrap()[(0, 0)], 0.5);
        let s = RegressionState::init_state(ctx(&[0.1]), 1.0, 0.5, rbf_kernel()).unwrap();
        assert_abs_diff_eq!(s.inverse_matrix().unwrap()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn single_point_predictions() {
        let p = ctx(&[0.3]);
        let s = RegressionState::init_state(p.clone(), 1.0, 1.0, rbf_kernel()).unwrap();
        assert_abs_diff_eq!(s.predict_mean(&p).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.predict_variance(&p).unwrap(), 0.5, epsilon = 1e-15);
        let u = UcbParams::with_eta(1.0);
        assert_abs_diff_eq!(s.ucb_score(&p, &u).unwrap(), 0.5 + 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.ucb_score(&p, &u).unwrap(), 1.2071, epsilon = 1e-4);
        let greedy = UcbParams::with_eta(0.0);
        assert_eq!(s.ucb_score(&p, &greedy).unwrap(), s.predict_mean(&p).unwrap());
        assert_abs_diff_eq!(s.log_det_regularized(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn two_identical_points() {
        let p = ctx(&[0.3]);
        let mut s = RegressionState::init_state(p.clone(), 1.0, 1.0, rbf_kernel()).unwrap();
        s.incorporate(p, 1.0).unwrap();
        let m = s.inverse_matrix().unwrap();
        let expected = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(m[(i, j)], expected[i][j], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(s.log_det_regularized(), 3f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn orthogonal_point_gives_block_diagonal() {
        let lin = ComposedKernel::oracle(KernelSpec::Linear, KernelSpec::Linear);
        let mut s = RegressionState::with_backend(lin, 1.0, BackendKind::Dual).unwrap();
        let a = AugmentedContext::new(0, Arc::from(vec![1.0]), Arc::from(vec![1.0, 0.0]));
        let b = AugmentedContext::new(0, Arc::from(vec![1.0]), Arc::from(vec![0.0, 0.5]));
        s.incorporate(a, 1.0).unwrap();
        s.incorporate(b.clone(), 1.0).unwrap();
        let m = s.inverse_matrix().unwrap();
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_abs_diff_eq!(m[(1, 1)], 1.0 / (0.25 + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_targets_zero_mean_and_orthogonal_query() {
        let lin = ComposedKernel::oracle(KernelSpec::Linear, KernelSpec::Linear);
        let mut s = RegressionState::with_backend(lin, 1.0, BackendKind::Dual).unwrap();
        let a = AugmentedContext::new(0, Arc::from(vec![1.0]), Arc::from(vec![1.0, 0.0]));
        s.incorporate(a, 0.0).unwrap();
        let q = AugmentedContext::new(0, Arc::from(vec![1.0]), Arc::from(vec![0.0, 0.7]));
        assert_eq!(s.predict_mean(&q).unwrap(), 0.0);
        assert_abs_diff_eq!(s.predict_variance(&q).unwrap(), 0.49, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_lambda_and_primal_without_features() {
        assert!(matches!(
            RegressionState::new(rbf_kernel(), 0.0),
            Err(RegressionError::InvalidLambda(_))
        ));
        assert!(matches!(
            RegressionState::with_backend(rbf_kernel(), 1.0, BackendKind::Primal),
            Err(RegressionError::NoFeatureMap)
        ));
    }

    #[test]
    fn negative_variance_is_an_error_beyond_tolerance() {
        assert_eq!(clamp_variance(-1e-12), Ok(0.0));
        assert_eq!(clamp_variance(0.25), Ok(0.25));
        assert!(matches!(clamp_variance(-1e-6), Err(RegressionError::NegativeVariance(_))));
    }

    #[test]
    fn empirical_kernel_swap_rebuilds() {
        use crate::kernel::EmpiricalTable;
        let table = Arc::new(EmpiricalTable::uninformed(2));
        let k = ComposedKernel::new(NetworkKernel::Empirical(table), KernelSpec::rbf(1.0).unwrap());
        let mut s = RegressionState::new(k, 1.0).unwrap();
        let a = AugmentedContext::new(0, Arc::from(vec![]), Arc::from(vec![0.0]));
        let b = AugmentedContext::new(1, Arc::from(vec![]), Arc::from(vec![0.0]));
        s.incorporate(b, 1.0).unwrap();
        let before = s.predict_mean(&a).unwrap();
        let table = Arc::new(EmpiricalTable::new(2, vec![1.0, 0.0, 0.0, 1.0]));
        s.set_kernel(ComposedKernel::new(NetworkKernel::Empirical(table), KernelSpec::rbf(1.0).unwrap()))
            .unwrap();
        assert_abs_diff_eq!(before, 0.5, epsilon = 1e-15);
        assert_eq!(s.predict_mean(&a).unwrap(), 0.0);
    }
}
