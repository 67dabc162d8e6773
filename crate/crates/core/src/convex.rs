//! Convex agent costs and their Fenchel conjugates.
//!
//! A [`ConvexFunction`] carries value/gradient oracles plus the curvature
//! metadata (strong-convexity modulus `rho`, gradient Lipschitz constant `L`)
//! that the dual constructions need. A [`ConjugateFunction`] wraps a strictly
//! convex base and evaluates
//!
//! ```text
//! f*(y)  = sup_x (yᵀx − f(x)) = yᵀx*(y) − f(x*(y))
//! ∇f*(y) = x*(y) = argmax_x (yᵀx − f(x))
//! ∇²f*(y) = [∇²f(x*(y))]⁻¹
//! ```
//!
//! Quadratics use closed forms. Everything else solves the inner
//! maximization numerically (damped Newton when a Hessian is available,
//! backtracking gradient steps otherwise).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Tolerance used by the Lipschitz and strong-convexity checks.
pub const PROPERTY_TOL: f64 = 1e-6;
/// Tolerance for the Fenchel–Young equality case.
pub const FENCHEL_YOUNG_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error("function is not strictly convex (strong convexity modulus {0})")]
    NotStrictlyConvex(f64),
    #[error("inner maximization did not converge: residual {residual:e} after {iterations} iterations")]
    InnerSolverDiverged { residual: f64, iterations: usize },
    #[error("Hessian at the maximizer is singular or unavailable")]
    SingularHessian,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid function specification: {0}")]
    InvalidSpec(String),
}

pub type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum CostKind {
    /// `½(x − a)ᵀQ(x − a)` with `Q` symmetric positive definite.
    Quadratic {
        q: DMatrix<f64>,
        a: DVector<f64>,
        q_inv: DMatrix<f64>,
    },
    /// `(ρ/2)‖x‖² + log Σ_k exp(x_k − b_k)`.
    LogSumExp { rho: f64, shift: DVector<f64> },
    BlackBox {
        value: ValueFn,
        gradient: GradientFn,
        hessian: Option<HessianFn>,
    },
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Quadratic { q, a, .. } => f.debug_struct("Quadratic").field("q", q).field("a", a).finish(),
            CostKind::LogSumExp { rho, shift } => f
                .debug_struct("LogSumExp")
                .field("rho", rho)
                .field("shift", shift)
                .finish(),
            CostKind::BlackBox { hessian, .. } => f
                .debug_struct("BlackBox")
                .field("has_hessian", &hessian.is_some())
                .finish(),
        }
    }
}

/// A differentiable convex cost `f: Rⁿ → R`.
#[derive(Debug, Clone)]
pub struct ConvexFunction {
    dim: usize,
    kind: CostKind,
    rho: f64,
    lipschitz: Option<f64>,
}

impl ConvexFunction {
    /// `½(x − a)ᵀQ(x − a)`. Curvature constants are read off the spectrum of `Q`.
    pub fn quadratic(q: DMatrix<f64>, a: DVector<f64>) -> Result<Self, ConvexError> {
        let n = a.len();
        if n == 0 {
            return Err(ConvexError::InvalidSpec("empty vector".into()));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(ConvexError::InvalidSpec(format!(
                "Q is {}x{} but a has length {n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(ConvexError::InvalidSpec("Q is not symmetric".into()));
        }
        let eig = q.clone().symmetric_eigen();
        let lambda_min = eig.eigenvalues.min();
        let lambda_max = eig.eigenvalues.max();
        if lambda_min <= 0.0 {
            return Err(ConvexError::NotStrictlyConvex(lambda_min.max(0.0)));
        }
        let q_inv = q
            .clone()
            .cholesky()
            .ok_or(ConvexError::NotStrictlyConvex(lambda_min))?
            .inverse();
        Ok(ConvexFunction {
            dim: n,
            kind: CostKind::Quadratic { q, a, q_inv },
            rho: lambda_min,
            lipschitz: Some(lambda_max),
        })
    }

    /// Scalar `(q/2)(x − a)²`.
    pub fn scalar_quadratic(q: f64, a: f64) -> Result<Self, ConvexError> {
        Self::quadratic(DMatrix::from_element(1, 1, q), DVector::from_element(1, a))
    }

    /// `(ρ/2)‖x‖² + log Σ_k exp(x_k − b_k)`; the softmax Jacobian has spectral
    /// norm at most ½, which bounds `L`.
    pub fn log_sum_exp(rho: f64, shift: DVector<f64>) -> Result<Self, ConvexError> {
        if shift.is_empty() {
            return Err(ConvexError::InvalidSpec("empty shift vector".into()));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(ConvexError::InvalidSpec(format!("rho must be >= 0, got {rho}")));
        }
        let dim = shift.len();
        let lipschitz = if dim == 1 { rho } else { rho + 0.5 };
        Ok(ConvexFunction {
            dim,
            kind: CostKind::LogSumExp { rho, shift },
            rho,
            lipschitz: (lipschitz > 0.0).then_some(lipschitz),
        })
    }

    /// Wraps user-provided oracles. `rho` and `lipschitz` are trusted as declared.
    pub fn black_box(
        dim: usize,
        value: ValueFn,
        gradient: GradientFn,
        hessian: Option<HessianFn>,
        rho: f64,
        lipschitz: Option<f64>,
    ) -> Result<Self, ConvexError> {
        if dim == 0 {
            return Err(ConvexError::InvalidSpec("dimension must be positive".into()));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(ConvexError::InvalidSpec(format!("rho must be >= 0, got {rho}")));
        }
        if let Some(l) = lipschitz {
            if !(l.is_finite() && l > 0.0) {
                return Err(ConvexError::InvalidSpec(format!("L must be > 0, got {l}")));
            }
        }
        Ok(ConvexFunction {
            dim,
            kind: CostKind::BlackBox {
                value,
                gradient,
                hessian,
            },
            rho,
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    /// Strong convexity modulus; zero when unknown.
    pub fn strong_convexity(&self) -> f64 {
        self.rho
    }

    pub fn gradient_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, CostKind::Quadratic { .. })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            CostKind::Quadratic { q, a, .. } => {
                let d = x - a;
                0.5 * d.dot(&(q * &d))
            }
            CostKind::LogSumExp { rho, shift } => 0.5 * rho * x.norm_squared() + log_sum_exp(&(x - shift)),
            CostKind::BlackBox { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            CostKind::Quadratic { q, a, .. } => q * (x - a),
            CostKind::LogSumExp { rho, shift } => x * *rho + softmax(&(x - shift)),
            CostKind::BlackBox { gradient, .. } => gradient(x),
        }
    }

    /// `None` for black-box functions without a Hessian oracle.
    pub fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        match &self.kind {
            CostKind::Quadratic { q, .. } => Some(q.clone()),
            CostKind::LogSumExp { rho, shift } => {
                let p = softmax(&(x - shift));
                let mut h = DMatrix::from_diagonal(&p) - &p * p.transpose();
                for i in 0..self.dim {
                    h[(i, i)] += rho;
                }
                Some(h)
            }
            CostKind::BlackBox { hessian, .. } => hessian.as_ref().map(|h| h(x)),
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), ConvexError> {
        if v.len() != self.dim {
            return Err(ConvexError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(v: &DVector<f64>) -> f64 {
    let max = v.max();
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &DVector<f64>) -> DVector<f64> {
    let max = v.max();
    let e = v.map(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerSolverConfig {
    /// Stop once `‖∇f(x) − y‖` drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverConfig {
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Result of one inner maximization `argmax_x (yᵀx − f(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `‖∇f(x) − y‖` at the returned point.
    pub residual: f64,
}

/// Fenchel conjugate `f*` of a strictly convex [`ConvexFunction`].
#[derive(Debug, Clone)]
pub struct ConjugateFunction {
    base: ConvexFunction,
    config: InnerSolverConfig,
}

impl ConjugateFunction {
    pub fn new(base: ConvexFunction) -> Result<Self, ConvexError> {
        Self::with_config(base, InnerSolverConfig::default())
    }

    pub fn with_config(base: ConvexFunction, config: InnerSolverConfig) -> Result<Self, ConvexError> {
        if base.rho.is_nan() || base.rho <= 0.0 {
            return Err(ConvexError::NotStrictlyConvex(base.rho));
        }
        Ok(ConjugateFunction { base, config })
    }

    pub fn base(&self) -> &ConvexFunction {
        &self.base
    }

    pub fn config(&self) -> InnerSolverConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    /// Lipschitz constant of `∇f*`, i.e. `1/ρ`.
    pub fn gradient_lipschitz(&self) -> f64 {
        1.0 / self.base.rho
    }

    /// Strong convexity modulus of `f*`, i.e. `1/L`, when `L` is known.
    pub fn strong_convexity(&self) -> Option<f64> {
        self.base.lipschitz.map(|l| 1.0 / l)
    }

    /// Solves `argmax_x (yᵀx − f(x))`, optionally starting from `warm`.
    pub fn maximizer(&self, y: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<InnerSolution, ConvexError> {
        self.base.check_dim(y)?;
        if let CostKind::Quadratic { a, q_inv, .. } = &self.base.kind {
            let x = a + q_inv * y;
            return Ok(InnerSolution {
                x,
                iterations: 0,
                residual: 0.0,
            });
        }
        let start = match warm {
            Some(w) if w.len() == self.base.dim && w.iter().all(|v| v.is_finite()) => w.clone(),
            _ => DVector::zeros(self.base.dim),
        };
        if self.base.hessian(&start).is_some() {
            self.newton(y, start)
        } else {
            self.gradient_descent(y, start)
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> Result<f64, ConvexError> {
        let sol = self.maximizer(y, None)?;
        Ok(self.value_at(y, &sol.x))
    }

    /// `yᵀx − f(x)` for a known maximizer `x`.
    pub fn value_at(&self, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        if let CostKind::Quadratic { a, q_inv, .. } = &self.base.kind {
            return y.dot(a) + 0.5 * y.dot(&(q_inv * y));
        }
        y.dot(x) - self.base.value(x)
    }

    pub fn gradient(&self, y: &DVector<f64>) -> Result<DVector<f64>, ConvexError> {
        Ok(self.maximizer(y, None)?.x)
    }

    pub fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>, ConvexError> {
        if let CostKind::Quadratic { q_inv, .. } = &self.base.kind {
            self.base.check_dim(y)?;
            return Ok(q_inv.clone());
        }
        let x = self.maximizer(y, None)?.x;
        let h = self.base.hessian(&x).ok_or(ConvexError::SingularHessian)?;
        let inv = h
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| h.try_inverse())
            .ok_or(ConvexError::SingularHessian)?;
        if inv.iter().all(|v| v.is_finite()) {
            Ok(inv)
        } else {
            Err(ConvexError::SingularHessian)
        }
    }

    fn objective(&self, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        self.base.value(x) - y.dot(x)
    }

    fn newton(&self, y: &DVector<f64>, mut x: DVector<f64>) -> Result<InnerSolution, ConvexError> {
        let mut g = self.base.gradient(&x) - y;
        for it in 0..=self.config.max_iterations {
            let residual = g.norm();
            if residual <= self.config.tolerance {
                return Ok(InnerSolution {
                    x,
                    iterations: it,
                    residual,
                });
            }
            if it == self.config.max_iterations {
                break;
            }
            let h = self.base.hessian(&x).ok_or(ConvexError::SingularHessian)?;
            let dir = match h.cholesky() {
                Some(c) => -c.solve(&g),
                None => -g.clone(),
            };
            x = self.backtrack(y, x, &g, dir);
            g = self.base.gradient(&x) - y;
        }
        Err(ConvexError::InnerSolverDiverged {
            residual: g.norm(),
            iterations: self.config.max_iterations,
        })
    }

    fn gradient_descent(&self, y: &DVector<f64>, mut x: DVector<f64>) -> Result<InnerSolution, ConvexError> {
        let mut g = self.base.gradient(&x) - y;
        // Barzilai–Borwein trial steps, safeguarded by Armijo backtracking.
        let mut step = self.base.lipschitz.map(|l| 1.0 / l).unwrap_or(1.0);
        for it in 0..=self.config.max_iterations {
            let residual = g.norm();
            if residual <= self.config.tolerance {
                return Ok(InnerSolution {
                    x,
                    iterations: it,
                    residual,
                });
            }
            if it == self.config.max_iterations {
                break;
            }
            let next = self.backtrack(y, x.clone(), &g, -&g * step);
            let g_next = self.base.gradient(&next) - y;
            let dx = &next - &x;
            let curvature = dx.dot(&(&g_next - &g));
            if curvature > 0.0 {
                step = dx.norm_squared() / curvature;
            }
            x = next;
            g = g_next;
        }
        Err(ConvexError::InnerSolverDiverged {
            residual: g.norm(),
            iterations: self.config.max_iterations,
        })
    }

    /// Armijo backtracking along `dir`; a tiny slack absorbs round-off once the
    /// objective decrease falls below machine precision.
    fn backtrack(&self, y: &DVector<f64>, x: DVector<f64>, g: &DVector<f64>, dir: DVector<f64>) -> DVector<f64> {
        let phi = self.objective(y, &x);
        let slope = g.dot(&dir);
        let slack = 1e-14 * (1.0 + phi.abs());
        let mut s = 1.0;
        for _ in 0..60 {
            let candidate = &x + &dir * s;
            let phi_c = self.objective(y, &candidate);
            if phi_c.is_finite() && phi_c <= phi + 1e-4 * s * slope + slack {
                return candidate;
            }
            s *= 0.5;
        }
        x + dir * s
    }
}

/// Empirical check of the conjugate-calculus properties on sampled points.
#[derive(Debug, Clone, Serialize)]
pub struct ConjugateReport {
    pub samples: usize,
    /// Samples dropped because the inner solver did not converge.
    pub skipped: usize,
    pub rho: f64,
    pub lipschitz: Option<f64>,
    /// Largest observed `‖∇f*(y₁) − ∇f*(y₂)‖ / ‖y₁ − y₂‖`.
    pub gradient_lipschitz_estimate: f64,
    pub gradient_lipschitz_bound: f64,
    pub lipschitz_ok: bool,
    /// Smallest observed `⟨y₁ − y₂, ∇f*(y₁) − ∇f*(y₂)⟩ / ‖y₁ − y₂‖²`.
    pub strong_convexity_estimate: f64,
    pub strong_convexity_bound: Option<f64>,
    pub strong_convexity_ok: bool,
    /// Largest `|f(x) + f*(∇f(x)) − xᵀ∇f(x)|`.
    pub fenchel_young_equality_gap: f64,
    /// Smallest `f(x) + f*(y) − xᵀy` over random pairs (must be nonnegative).
    pub fenchel_young_min_slack: f64,
    pub fenchel_young_ok: bool,
    /// Largest `‖∇f(∇f*(y)) − y‖`.
    pub inverse_gradient_residual: f64,
}

impl ConjugateReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_ok && self.strong_convexity_ok && self.fenchel_young_ok
    }
}

/// Samples `sample_count` pairs from `[-5, 5]ⁿ` and measures how `f*` behaves.
pub fn verify_conjugate_duality_properties(
    f: &ConvexFunction,
    sample_count: usize,
    seed: u64,
) -> Result<ConjugateReport, ConvexError> {
    let conj = ConjugateFunction::new(f.clone())?;
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));

    let mut skipped = 0;
    let mut lip_est: f64 = 0.0;
    let mut sc_est = f64::INFINITY;
    let mut eq_gap: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    let mut inv_residual: f64 = 0.0;

    for _ in 0..sample_count {
        let y1 = draw(&mut rng);
        let y2 = draw(&mut rng);
        let x = draw(&mut rng);
        let (s1, s2) = match (conj.maximizer(&y1, None), conj.maximizer(&y2, None)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let dy = &y1 - &y2;
        let dy2 = dy.norm_squared();
        if dy2 > 1e-12 {
            let dx = &s1.x - &s2.x;
            lip_est = lip_est.max(dx.norm() / dy2.sqrt());
            sc_est = sc_est.min(dy.dot(&dx) / dy2);
        }
        for (y, s) in [(&y1, &s1), (&y2, &s2)] {
            inv_residual = inv_residual.max((f.gradient(&s.x) - y).norm());
        }

        // Fenchel–Young: equality at y = ∇f(x), inequality elsewhere.
        let gx = f.gradient(&x);
        match conj.maximizer(&gx, Some(&x)) {
            Ok(s) => {
                let gap = f.value(&x) + conj.value_at(&gx, &s.x) - x.dot(&gx);
                eq_gap = eq_gap.max(gap.abs());
            }
            Err(_) => skipped += 1,
        }
        let slack = f.value(&x) + conj.value_at(&y1, &s1.x) - x.dot(&y1);
        min_slack = min_slack.min(slack);
    }

    let bound = 1.0 / f.strong_convexity();
    let sc_bound = f.gradient_lipschitz().map(|l| 1.0 / l);
    let sc_ok = match sc_bound {
        Some(b) => sc_est >= b - PROPERTY_TOL,
        None => true,
    };
    Ok(ConjugateReport {
        samples: sample_count,
        skipped,
        rho: f.strong_convexity(),
        lipschitz: f.gradient_lipschitz(),
        gradient_lipschitz_estimate: lip_est,
        gradient_lipschitz_bound: bound,
        lipschitz_ok: lip_est <= bound + PROPERTY_TOL,
        strong_convexity_estimate: sc_est,
        strong_convexity_bound: sc_bound,
        strong_convexity_ok: sc_ok,
        fenchel_young_equality_gap: eq_gap,
        fenchel_young_min_slack: min_slack,
        fenchel_young_ok: eq_gap < FENCHEL_YOUNG_TOL && min_slack >= -FENCHEL_YOUNG_TOL,
        inverse_gradient_residual: inv_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_black_box(with_hessian: bool) -> ConvexFunction {
        let hessian: Option<HessianFn> = if with_hessian {
            Some(Arc::new(|x: &DVector<f64>| DMatrix::identity(x.len(), x.len())))
        } else {
            None
        };
        ConvexFunction::black_box(
            1,
            Arc::new(|x: &DVector<f64>| 0.5 * x.norm_squared()),
            Arc::new(|x: &DVector<f64>| x.clone()),
            hessian,
            1.0,
            Some(1.0),
        )
        .unwrap()
    }

    fn quartic() -> ConvexFunction {
        ConvexFunction::black_box(
            1,
            Arc::new(|x: &DVector<f64>| x[0].powi(4) / 4.0 + x[0] * x[0] / 2.0),
            Arc::new(|x: &DVector<f64>| v(&[x[0].powi(3) + x[0]])),
            None,
            1.0,
            None,
        )
        .unwrap()
    }

    /// Grid search of sup_x (yx − f(x)) over [-10, 10] with step 1e-4.
    fn grid_conjugate(f: impl Fn(f64) -> f64, y: f64) -> f64 {
        (0..=200_000)
            .map(|k| -10.0 + k as f64 * 1e-4)
            .map(|x| y * x - f(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn conjugate_value_examples() {
        let unit = ConjugateFunction::new(ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(unit.value(&v(&[3.0])).unwrap(), 4.5, epsilon = 1e-14);

        let shifted = ConjugateFunction::new(ConvexFunction::scalar_quadratic(2.0, 1.0).unwrap()).unwrap();
        let oracle = grid_conjugate(|x| (x - 1.0) * (x - 1.0), 2.0);
        assert_abs_diff_eq!(oracle, 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(shifted.value(&v(&[2.0])).unwrap(), 3.0, epsilon = 1e-14);

        let bb = ConjugateFunction::new(unit_black_box(false)).unwrap();
        assert_abs_diff_eq!(bb.value(&v(&[3.0])).unwrap(), 4.5, epsilon = 1e-8);
    }

    #[test]
    fn conjugate_gradient_examples() {
        let unit = ConjugateFunction::new(ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(unit.gradient(&v(&[3.0])).unwrap()[0], 3.0);

        let shifted = ConvexFunction::scalar_quadratic(2.0, 1.0).unwrap();
        let x = ConjugateFunction::new(shifted.clone())
            .unwrap()
            .gradient(&v(&[4.0]))
            .unwrap();
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(shifted.gradient(&x)[0], 4.0, epsilon = 1e-14);

        let diag = ConvexFunction::quadratic(DMatrix::from_diagonal(&v(&[1.0, 2.0])), v(&[0.0, 0.0])).unwrap();
        let x = ConjugateFunction::new(diag).unwrap().gradient(&v(&[2.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x, v(&[2.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn conjugate_hessian_examples() {
        let unit = ConjugateFunction::new(ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(unit.hessian(&v(&[-7.0])).unwrap()[(0, 0)], 1.0);

        let diag = ConvexFunction::quadratic(DMatrix::from_diagonal(&v(&[2.0, 4.0])), v(&[1.0, -1.0])).unwrap();
        let h = ConjugateFunction::new(diag).unwrap().hessian(&v(&[0.3, 9.0])).unwrap();
        assert_abs_diff_eq!(h, DMatrix::from_diagonal(&v(&[0.5, 0.25])), epsilon = 1e-15);

        let bb = ConjugateFunction::new(unit_black_box(true)).unwrap();
        let h = 1e-5;
        let fd = (bb.gradient(&v(&[1.0 + h])).unwrap()[0] - bb.gradient(&v(&[1.0 - h])).unwrap()[0]) / (2.0 * h);
        assert_abs_diff_eq!(fd, 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(bb.hessian(&v(&[1.0])).unwrap()[(0, 0)], fd, epsilon = 1e-4);
    }

    #[test]
    fn black_box_without_hessian_has_no_conjugate_hessian() {
        let bb = ConjugateFunction::new(unit_black_box(false)).unwrap();
        assert_eq!(bb.hessian(&v(&[1.0])), Err(ConvexError::SingularHessian));
    }

    #[test]
    fn rejects_functions_without_strong_convexity() {
        let lse = ConvexFunction::log_sum_exp(0.0, v(&[0.0, 1.0])).unwrap();
        assert!(matches!(
            ConjugateFunction::new(lse),
            Err(ConvexError::NotStrictlyConvex(_))
        ));
        let singular = ConvexFunction::quadratic(DMatrix::from_diagonal(&v(&[1.0, 0.0])), v(&[0.0, 0.0]));
        assert!(matches!(singular, Err(ConvexError::NotStrictlyConvex(_))));
        let asym = ConvexFunction::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), v(&[0.0, 0.0]));
        assert!(matches!(asym, Err(ConvexError::InvalidSpec(_))));
    }

    #[test]
    fn inner_solver_reports_divergence() {
        let conj = ConjugateFunction::with_config(
            quartic(),
            InnerSolverConfig {
                tolerance: 1e-10,
                max_iterations: 2,
            },
        )
        .unwrap();
        assert!(matches!(
            conj.gradient(&v(&[50.0])),
            Err(ConvexError::InnerSolverDiverged { iterations: 2, .. })
        ));
    }

    #[test]
    fn quartic_conjugate_inverts_gradient() {
        let f = quartic();
        let conj = ConjugateFunction::new(f.clone()).unwrap();
        for y in [-4.0, -0.3, 0.0, 2.0, 10.0] {
            let sol = conj.maximizer(&v(&[y]), None).unwrap();
            assert!(sol.residual <= 1e-10);
            assert_abs_diff_eq!(f.gradient(&sol.x)[0], y, epsilon = 1e-10);
        }
    }

    #[test]
    fn warm_start_cuts_iterations() {
        let f = ConvexFunction::log_sum_exp(0.5, v(&[0.0, 1.0, -1.0])).unwrap();
        let conj = ConjugateFunction::new(f).unwrap();
        let y = v(&[1.0, 2.0, -0.5]);
        let cold = conj.maximizer(&y, None).unwrap();
        let warm = conj.maximizer(&(&y + v(&[1e-4, 0.0, 0.0])), Some(&cold.x)).unwrap();
        assert!(warm.iterations < cold.iterations);
    }

    #[test]
    fn biconjugate_recovers_quadratic() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let a = v(&[0.5, -1.0]);
        let f = ConvexFunction::quadratic(q, a).unwrap();
        let conj = ConjugateFunction::new(f.clone()).unwrap();
        // f** as a black box over the conjugate's closed-form oracles
        let (cv, cg) = (conj.clone(), conj.clone());
        let fstar = ConvexFunction::black_box(
            2,
            Arc::new(move |y: &DVector<f64>| cv.value(y).unwrap()),
            Arc::new(move |y: &DVector<f64>| cg.gradient(y).unwrap()),
            None,
            conj.strong_convexity().unwrap(),
            Some(conj.gradient_lipschitz()),
        )
        .unwrap();
        let biconj = ConjugateFunction::with_config(
            fstar,
            InnerSolverConfig {
                tolerance: 1e-11,
                max_iterations: 2000,
            },
        )
        .unwrap();
        for x in [v(&[0.0, 0.0]), v(&[1.0, 2.0]), v(&[-3.0, 0.7])] {
            assert_abs_diff_eq!(biconj.value(&x).unwrap(), f.value(&x), epsilon = 1e-8);
        }
    }

    #[test]
    fn property_report_examples() {
        let unit = ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap();
        let r = verify_conjugate_duality_properties(&unit, 100, 3).unwrap();
        assert!(r.passed());
        assert!(r.gradient_lipschitz_estimate <= 1.0 + 1e-6);
        assert!(r.strong_convexity_estimate >= 1.0 - 1e-6);

        let shifted = ConvexFunction::scalar_quadratic(2.0, 1.0).unwrap();
        let r = verify_conjugate_duality_properties(&shifted, 100, 3).unwrap();
        assert!(r.gradient_lipschitz_estimate <= 0.5 + 1e-6);

        // equality case at x = 2
        let conj = ConjugateFunction::new(shifted.clone()).unwrap();
        let x = v(&[2.0]);
        let y = shifted.gradient(&x);
        let gap = shifted.value(&x) + conj.value(&y).unwrap() - x.dot(&y);
        assert!(gap.abs() < 1e-8);
    }

    #[test]
    fn report_flags_a_lying_lipschitz_constant() {
        // declared rho = 4 but the true modulus is 1, so ∇f* is steeper than 1/4
        let liar = ConvexFunction::black_box(
            1,
            Arc::new(|x: &DVector<f64>| 0.5 * x.norm_squared()),
            Arc::new(|x: &DVector<f64>| x.clone()),
            None,
            4.0,
            Some(1.0),
        )
        .unwrap();
        let r = verify_conjugate_duality_properties(&liar, 20, 1).unwrap();
        assert!(!r.lipschitz_ok);
        assert!(!r.passed());
    }
}
