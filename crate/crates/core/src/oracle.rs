//! Centralized reference solvers.
//!
//! These deliberately avoid the conjugate machinery used by the distributed
//! path: quadratics go through explicit linear solves, general instances
//! through projected gradient descent on the primal.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::convex::{ConvexFunction, CostKind};
use crate::duality::{sum_vectors, ConsensusProblem, ResourceAllocationProblem};

/// Size guard for [`solve_ra_general`].
pub const MAX_GENERAL_VARIABLES: usize = 20;
const MAX_ITERATIONS: usize = 500_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("agent {0} does not have a quadratic cost")]
    NotQuadratic(usize),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("{0} variables exceed the oracle limit of {MAX_GENERAL_VARIABLES}")]
    TooLarge(usize),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("aggregate cost is not strictly convex")]
    NotStrictlyConvex,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleDual {
    /// `y*` of the Lagrange dual of a resource allocation problem.
    Multiplier(DVector<f64>),
    /// `yᵢ* = ∇hᵢ(s*)` of the Fenchel dual of a consensus problem.
    PerAgent(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `xᵢ*` per agent, or the single consensus point `s*`.
    pub primal: Vec<DVector<f64>>,
    pub dual: OracleDual,
    pub objective: f64,
}

impl OracleSolution {
    pub fn multiplier(&self) -> Option<&DVector<f64>> {
        match &self.dual {
            OracleDual::Multiplier(y) => Some(y),
            OracleDual::PerAgent(_) => None,
        }
    }
}

type QuadraticPart<'a> = (&'a DMatrix<f64>, &'a DVector<f64>);

fn quadratic_parts(costs: &[ConvexFunction]) -> Result<Vec<QuadraticPart<'_>>, OracleError> {
    costs
        .iter()
        .enumerate()
        .map(|(i, c)| match c.kind() {
            CostKind::Quadratic { q, a, .. } => Ok((q, a)),
            _ => Err(OracleError::NotQuadratic(i)),
        })
        .collect()
}

/// KKT solution of a quadratic instance: `(Σ Qᵢ⁻¹) y* = Σ Rᵢ − Σ aᵢ`,
/// `xᵢ* = aᵢ + Qᵢ⁻¹ y*`.
pub fn solve_ra_quadratic(ra: &ResourceAllocationProblem) -> Result<OracleSolution, OracleError> {
    let parts = quadratic_parts(ra.costs())?;
    let n = ra.n();
    let inverses = parts
        .iter()
        .map(|(q, _)| (*q).clone().lu().try_inverse().ok_or(OracleError::SingularSystem))
        .collect::<Result<Vec<_>, _>>()?;
    let compliance = inverses.iter().fold(DMatrix::zeros(n, n), |acc, qi| acc + qi);
    let offsets: Vec<DVector<f64>> = parts.iter().map(|(_, a)| (*a).clone()).collect();
    let rhs = ra.total_resource() - sum_vectors(&offsets, n);
    let y = compliance.lu().solve(&rhs).ok_or(OracleError::SingularSystem)?;
    let primal: Vec<DVector<f64>> = parts.iter().zip(&inverses).map(|((_, a), qi)| *a + qi * &y).collect();
    Ok(OracleSolution {
        objective: ra.objective(&primal),
        primal,
        dual: OracleDual::Multiplier(y),
    })
}

/// Gradient-descent step policy: `1/L` when every constant is known,
/// otherwise Barzilai–Borwein trial steps with Armijo backtracking.
struct Descent<'a> {
    objective: &'a dyn Fn(&[DVector<f64>]) -> f64,
    fixed_step: Option<f64>,
    step: f64,
}

impl Descent<'_> {
    fn next(&mut self, x: &[DVector<f64>], dir: &[DVector<f64>], dir_norm2: f64) -> Vec<DVector<f64>> {
        let moved = |s: f64| -> Vec<DVector<f64>> { x.iter().zip(dir).map(|(xi, di)| xi - di * s).collect() };
        if let Some(s) = self.fixed_step {
            return moved(s);
        }
        let f0 = (self.objective)(x);
        let slack = 1e-14 * (1.0 + f0.abs());
        let mut s = self.step;
        for _ in 0..60 {
            let cand = moved(s);
            let fc = (self.objective)(&cand);
            if fc.is_finite() && fc <= f0 - 1e-4 * s * dir_norm2 + slack {
                return cand;
            }
            s *= 0.5;
        }
        moved(s)
    }

    fn update_bb(&mut self, dx: f64, curvature: f64) {
        if self.fixed_step.is_none() && curvature > 0.0 {
            self.step = dx / curvature;
        }
    }
}

fn common_step(costs: &[ConvexFunction], scale: f64) -> Option<f64> {
    costs
        .iter()
        .map(|c| c.gradient_lipschitz())
        .try_fold(0.0f64, |acc, l| l.map(|l| acc.max(l)))
        .map(|l| 1.0 / (scale * l))
}

/// Projected gradient on `{Σ xᵢ = Σ Rᵢ}` for small instances; iterates stay
/// feasible because the projected direction sums to zero.
pub fn solve_ra_general(ra: &ResourceAllocationProblem, tol: f64) -> Result<OracleSolution, OracleError> {
    let (m, n) = (ra.m(), ra.n());
    if m * n > MAX_GENERAL_VARIABLES {
        return Err(OracleError::TooLarge(m * n));
    }
    if ra.costs().iter().any(|c| c.strong_convexity() <= 0.0) {
        return Err(OracleError::NotStrictlyConvex);
    }
    let objective = |x: &[DVector<f64>]| ra.objective(x);
    let mut descent = Descent {
        objective: &objective,
        fixed_step: common_step(ra.costs(), 1.0),
        step: 1.0,
    };
    let share = ra.total_resource() / m as f64;
    let mut x = vec![share; m];
    let projected = |x: &[DVector<f64>]| {
        let g: Vec<DVector<f64>> = ra.costs().iter().zip(x).map(|(f, xi)| f.gradient(xi)).collect();
        let mean = sum_vectors(&g, n) / m as f64;
        let p: Vec<DVector<f64>> = g.iter().map(|gi| gi - &mean).collect();
        (p, mean)
    };
    let (mut p, mut mean) = projected(&x);
    let mut residual = norm2(&p).sqrt();
    for _ in 0..MAX_ITERATIONS {
        if residual < tol {
            return Ok(OracleSolution {
                objective: ra.objective(&x),
                primal: x,
                dual: OracleDual::Multiplier(mean),
            });
        }
        let next = descent.next(&x, &p, residual * residual);
        let (p_next, mean_next) = projected(&next);
        let dx: Vec<DVector<f64>> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dp: Vec<DVector<f64>> = p_next.iter().zip(&p).map(|(a, b)| a - b).collect();
        descent.update_bb(norm2(&dx), dot(&dx, &dp));
        x = next;
        p = p_next;
        mean = mean_next;
        residual = norm2(&p).sqrt();
    }
    Err(OracleError::MaxIterations {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

fn norm2(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum()
}

fn dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn consensus_solution(cp: &ConsensusProblem, s: DVector<f64>) -> OracleSolution {
    OracleSolution {
        objective: cp.objective(&s),
        dual: OracleDual::PerAgent(cp.costs().iter().map(|h| h.gradient(&s)).collect()),
        primal: vec![s],
    }
}

/// Minimizer of `Σ hᵢ(s)`: closed form `(Σ Qᵢ)⁻¹ Σ Qᵢaᵢ` for quadratics,
/// gradient descent otherwise.
pub fn solve_consensus(cp: &ConsensusProblem, tol: f64) -> Result<OracleSolution, OracleError> {
    let Ok(parts) = quadratic_parts(cp.costs()) else {
        return solve_consensus_iterative(cp, tol);
    };
    let n = cp.n();
    let (stiffness, load) = parts
        .iter()
        .fold((DMatrix::zeros(n, n), DVector::zeros(n)), |(k, b), (q, a)| {
            (k + *q, b + *q * *a)
        });
    let s = stiffness.lu().solve(&load).ok_or(OracleError::SingularSystem)?;
    Ok(consensus_solution(cp, s))
}

pub fn solve_consensus_iterative(cp: &ConsensusProblem, tol: f64) -> Result<OracleSolution, OracleError> {
    if cp.costs().iter().map(|h| h.strong_convexity()).sum::<f64>() <= 0.0 {
        return Err(OracleError::NotStrictlyConvex);
    }
    let n = cp.n();
    let objective = |s: &[DVector<f64>]| cp.objective(&s[0]);
    let mut descent = Descent {
        objective: &objective,
        fixed_step: common_step(cp.costs(), cp.m() as f64),
        step: 1.0,
    };
    let grad = |s: &DVector<f64>| cp.costs().iter().fold(DVector::zeros(n), |acc, h| acc + h.gradient(s));
    let mut s = vec![DVector::zeros(n)];
    let mut g = vec![grad(&s[0])];
    for _ in 0..MAX_ITERATIONS {
        let residual = g[0].norm();
        if residual < tol {
            return Ok(consensus_solution(cp, s.swap_remove(0)));
        }
        let next = descent.next(&s, &g, residual * residual);
        let g_next = vec![grad(&next[0])];
        let dx = &next[0] - &s[0];
        descent.update_bb(dx.norm_squared(), dx.dot(&(&g_next[0] - &g[0])));
        s = next;
        g = g_next;
    }
    Err(OracleError::MaxIterations {
        iterations: MAX_ITERATIONS,
        residual: g[0].norm(),
    })
}
