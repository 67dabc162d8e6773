//! Dual transforms between resource allocation and consensus optimization.
//!
//! Forward: `min Σ fᵢ(xᵢ) s.t. Σ xᵢ = Σ Rᵢ` has Lagrangian
//! `Σ fᵢ(xᵢ) − yᵀ(Σ xᵢ − Σ Rᵢ)`; minimizing over each `xᵢ` leaves the
//! consensus problem `min_y Σ Gᵢ(y)` with `Gᵢ(y) = fᵢ*(y) − yᵀRᵢ` and
//! `∇Gᵢ(y) = argmax_x (yᵀx − fᵢ(x)) − Rᵢ`. Each agent recovers its share as
//! `xᵢ* = ∇fᵢ*(y*)`.
//!
//! Reverse: `min_s Σ hᵢ(s)` has Fenchel dual `min Σ hᵢ*(yᵢ) s.t. Σ yᵢ = 0`,
//! a resource allocation problem with zero resources. At the optimum every
//! `∇hᵢ*(yᵢ*)` equals the consensus minimizer.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::convex::{ConjugateFunction, ConvexError, ConvexFunction, InnerSolution, InnerSolverConfig};

/// Relative tolerance for primal recovery residuals.
pub const RECOVERY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualityError {
    #[error("agent {agent}: {source}")]
    Agent { agent: usize, source: ConvexError },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("primal recovery inconsistent: residual {residual:e} exceeds tolerance {tolerance:e}")]
    PrimalRecoveryInconsistent { residual: f64, tolerance: f64 },
    #[error("dual solution shape does not match a {0} problem")]
    DirectionMismatch(&'static str),
}

impl DualityError {
    pub fn is_not_strictly_convex(&self) -> bool {
        matches!(
            self,
            DualityError::Agent {
                source: ConvexError::NotStrictlyConvex(_),
                ..
            }
        )
    }
}

fn common_dim(costs: &[ConvexFunction]) -> Result<usize, DualityError> {
    let n = costs
        .first()
        .ok_or_else(|| DualityError::InvalidProblem("no agents".into()))?
        .dim();
    if let Some(i) = costs.iter().position(|c| c.dim() != n) {
        return Err(DualityError::InvalidProblem(format!(
            "agent {i} has dimension {} but agent 0 has {n}",
            costs[i].dim()
        )));
    }
    Ok(n)
}

/// `min Σ fᵢ(xᵢ)` subject to `Σ xᵢ = Σ Rᵢ`.
#[derive(Debug, Clone)]
pub struct ResourceAllocationProblem {
    costs: Vec<ConvexFunction>,
    resources: Vec<DVector<f64>>,
}

impl ResourceAllocationProblem {
    pub fn new(costs: Vec<ConvexFunction>, resources: Vec<DVector<f64>>) -> Result<Self, DualityError> {
        let n = common_dim(&costs)?;
        if resources.len() != costs.len() {
            return Err(DualityError::InvalidProblem(format!(
                "{} costs but {} resource vectors",
                costs.len(),
                resources.len()
            )));
        }
        if let Some(i) = resources.iter().position(|r| r.len() != n) {
            return Err(DualityError::InvalidProblem(format!(
                "resource {i} has length {} but costs have dimension {n}",
                resources[i].len()
            )));
        }
        Ok(ResourceAllocationProblem { costs, resources })
    }

    pub fn m(&self) -> usize {
        self.costs.len()
    }

    pub fn n(&self) -> usize {
        self.costs[0].dim()
    }

    pub fn costs(&self) -> &[ConvexFunction] {
        &self.costs
    }

    pub fn resources(&self) -> &[DVector<f64>] {
        &self.resources
    }

    pub fn total_resource(&self) -> DVector<f64> {
        sum_vectors(&self.resources, self.n())
    }

    pub fn objective(&self, x: &[DVector<f64>]) -> f64 {
        self.costs.iter().zip(x).map(|(f, xi)| f.value(xi)).sum()
    }
}

/// `min_s Σ hᵢ(s)`, equivalently `min Σ hᵢ(xᵢ)` with `x₁ = … = x_m`.
#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    costs: Vec<ConvexFunction>,
}

impl ConsensusProblem {
    pub fn new(costs: Vec<ConvexFunction>) -> Result<Self, DualityError> {
        common_dim(&costs)?;
        Ok(ConsensusProblem { costs })
    }

    pub fn m(&self) -> usize {
        self.costs.len()
    }

    pub fn n(&self) -> usize {
        self.costs[0].dim()
    }

    pub fn costs(&self) -> &[ConvexFunction] {
        &self.costs
    }

    pub fn objective(&self, s: &DVector<f64>) -> f64 {
        self.costs.iter().map(|h| h.value(s)).sum()
    }
}

pub(crate) fn sum_vectors(v: &[DVector<f64>], n: usize) -> DVector<f64> {
    v.iter().fold(DVector::zeros(n), |acc, x| acc + x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RaToConsensus,
    ConsensusToRa,
}

/// Per-agent dual cost `Gᵢ(y) = fᵢ*(y) − yᵀRᵢ` (with `Rᵢ = 0` in the reverse
/// direction, where it is simply `hᵢ*`).
#[derive(Debug, Clone)]
pub struct AgentDual {
    conjugate: ConjugateFunction,
    resource: DVector<f64>,
}

impl AgentDual {
    pub fn conjugate(&self) -> &ConjugateFunction {
        &self.conjugate
    }

    pub fn resource(&self) -> &DVector<f64> {
        &self.resource
    }

    pub fn value(&self, y: &DVector<f64>) -> Result<f64, ConvexError> {
        Ok(self.conjugate.value(y)? - y.dot(&self.resource))
    }

    /// `∇Gᵢ(y) = ∇fᵢ*(y) − Rᵢ`, together with the inner solve that produced
    /// the primal point `∇fᵢ*(y)`.
    pub fn gradient_with_primal(
        &self,
        y: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, InnerSolution), ConvexError> {
        let sol = self.conjugate.maximizer(y, warm)?;
        Ok((&sol.x - &self.resource, sol))
    }

    pub fn gradient(&self, y: &DVector<f64>) -> Result<DVector<f64>, ConvexError> {
        Ok(self.gradient_with_primal(y, None)?.0)
    }
}

/// Curvature bookkeeping that links assumptions on the primal costs to the
/// step-size interval of the dual iteration.
///
/// `fᵢ` being `ρᵢ`-strongly convex makes `∇Gᵢ` `(1/ρᵢ)`-Lipschitz, and `∇fᵢ`
/// being `Lᵢ`-Lipschitz makes `Gᵢ` `(1/Lᵢ)`-strongly convex. With
/// `K = maxᵢ 1/ρᵢ` and `μ = minᵢ 1/Lᵢ`, admissible `β` lie in `(0, 2μ/K²)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub rho: Vec<f64>,
    pub lipschitz: Vec<Option<f64>>,
    /// Common strong-convexity modulus of the `Gᵢ`; absent when some `Lᵢ` is unknown.
    pub mu: Option<f64>,
    /// Common Lipschitz constant of the `∇Gᵢ`.
    pub k: f64,
    /// Upper end `2μ/K²` of the admissible `β` interval.
    pub beta_upper: Option<f64>,
}

impl DerivedConstants {
    fn from_costs(costs: &[ConvexFunction]) -> Self {
        let rho: Vec<f64> = costs.iter().map(|c| c.strong_convexity()).collect();
        let lipschitz: Vec<Option<f64>> = costs.iter().map(|c| c.gradient_lipschitz()).collect();
        let k = rho.iter().map(|r| 1.0 / r).fold(0.0, f64::max);
        let mu = lipschitz
            .iter()
            .map(|l| l.map(|l| 1.0 / l))
            .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)));
        DerivedConstants {
            rho,
            lipschitz,
            mu,
            k,
            beta_upper: mu.map(|mu| 2.0 * mu / (k * k)),
        }
    }

    /// Midpoint `μ/K²` of the admissible interval.
    pub fn default_beta(&self) -> Option<f64> {
        self.beta_upper.map(|u| 0.5 * u)
    }

    pub fn beta_admissible(&self, beta: f64) -> bool {
        self.beta_upper.is_some_and(|u| beta > 0.0 && beta < u)
    }
}

#[derive(Debug, Clone)]
pub enum DualSource {
    ResourceAllocation(ResourceAllocationProblem),
    Consensus(ConsensusProblem),
}

#[derive(Debug, Clone)]
pub struct DualProblem {
    direction: Direction,
    agents: Vec<AgentDual>,
    constants: DerivedConstants,
    source: DualSource,
}

impl DualProblem {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn agents(&self) -> &[AgentDual] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentDual {
        &self.agents[i]
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    pub fn source(&self) -> &DualSource {
        &self.source
    }

    pub fn m(&self) -> usize {
        self.agents.len()
    }

    pub fn n(&self) -> usize {
        self.agents[0].conjugate.dim()
    }

    /// `Σᵢ Gᵢ(yᵢ)`.
    pub fn value(&self, y: &[DVector<f64>]) -> Result<f64, DualityError> {
        self.agents
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (a, yi))| a.value(yi).map_err(|source| DualityError::Agent { agent: i, source }))
            .sum()
    }
}

fn conjugates(costs: &[ConvexFunction], config: InnerSolverConfig) -> Result<Vec<ConjugateFunction>, DualityError> {
    costs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            ConjugateFunction::with_config(f.clone(), config).map_err(|source| DualityError::Agent { agent: i, source })
        })
        .collect()
}

pub fn lagrange_dual(ra: &ResourceAllocationProblem) -> Result<DualProblem, DualityError> {
    lagrange_dual_with(ra, InnerSolverConfig::default())
}

pub fn lagrange_dual_with(
    ra: &ResourceAllocationProblem,
    config: InnerSolverConfig,
) -> Result<DualProblem, DualityError> {
    let agents = conjugates(ra.costs(), config)?
        .into_iter()
        .zip(ra.resources())
        .map(|(conjugate, r)| AgentDual {
            conjugate,
            resource: r.clone(),
        })
        .collect();
    Ok(DualProblem {
        direction: Direction::RaToConsensus,
        agents,
        constants: DerivedConstants::from_costs(ra.costs()),
        source: DualSource::ResourceAllocation(ra.clone()),
    })
}

pub fn fenchel_dual(cp: &ConsensusProblem) -> Result<DualProblem, DualityError> {
    fenchel_dual_with(cp, InnerSolverConfig::default())
}

/// Resource allocation over `hᵢ*` with every `Rᵢ = 0`.
pub fn fenchel_dual_with(cp: &ConsensusProblem, config: InnerSolverConfig) -> Result<DualProblem, DualityError> {
    let n = cp.n();
    let agents = conjugates(cp.costs(), config)?
        .into_iter()
        .map(|conjugate| AgentDual {
            conjugate,
            resource: DVector::zeros(n),
        })
        .collect();
    Ok(DualProblem {
        direction: Direction::ConsensusToRa,
        agents,
        constants: DerivedConstants::from_costs(cp.costs()),
        source: DualSource::Consensus(cp.clone()),
    })
}

#[derive(Debug, Clone, Copy)]
pub enum DualSolution<'a> {
    /// The agreed multiplier `y*` of the forward direction.
    Consensus(&'a DVector<f64>),
    /// Per-agent `yᵢ*` of the reverse direction.
    PerAgent(&'a [DVector<f64>]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecoveredPrimal {
    Allocation(Vec<DVector<f64>>),
    ConsensusPoint(DVector<f64>),
}

pub fn recover_primal(dp: &DualProblem, dual: DualSolution<'_>) -> Result<RecoveredPrimal, DualityError> {
    recover_primal_with_tol(dp, dual, RECOVERY_TOL)
}

/// Forward: `xᵢ* = ∇fᵢ*(y*)`, rejected unless `‖Σ xᵢ* − Σ Rᵢ‖ ≤ tol·m·max(1, ‖R‖)`.
/// Reverse: the points `∇hᵢ*(yᵢ*)` must agree (and `Σ yᵢ*` vanish) within
/// `tol·m·max(1, ‖s‖)`; their average is returned.
pub fn recover_primal_with_tol(
    dp: &DualProblem,
    dual: DualSolution<'_>,
    tol: f64,
) -> Result<RecoveredPrimal, DualityError> {
    let m = dp.m();
    let n = dp.n();
    let agent_err = |i: usize| move |source| DualityError::Agent { agent: i, source };
    match (dp.direction, dual) {
        (Direction::RaToConsensus, DualSolution::Consensus(y)) => {
            let x = dp
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| a.conjugate.gradient(y).map_err(agent_err(i)))
                .collect::<Result<Vec<_>, _>>()?;
            let resources: Vec<DVector<f64>> = dp.agents.iter().map(|a| a.resource.clone()).collect();
            let residual = (sum_vectors(&x, n) - sum_vectors(&resources, n)).norm();
            let stacked_norm = resources.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
            let tolerance = tol * m as f64 * stacked_norm.max(1.0);
            if residual > tolerance {
                return Err(DualityError::PrimalRecoveryInconsistent { residual, tolerance });
            }
            Ok(RecoveredPrimal::Allocation(x))
        }
        (Direction::ConsensusToRa, DualSolution::PerAgent(y)) => {
            if y.len() != m {
                return Err(DualityError::InvalidProblem(format!(
                    "{} dual vectors for {m} agents",
                    y.len()
                )));
            }
            let points = dp
                .agents
                .iter()
                .zip(y)
                .enumerate()
                .map(|(i, (a, yi))| a.conjugate.gradient(yi).map_err(agent_err(i)))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = sum_vectors(&points, n) / m as f64;
            let tolerance = tol * m as f64 * mean.norm().max(1.0);
            let disagreement = points.iter().map(|p| (p - &mean).norm()).fold(0.0, f64::max);
            let infeasibility = sum_vectors(y, n).norm();
            let residual = disagreement.max(infeasibility);
            if residual > tolerance {
                return Err(DualityError::PrimalRecoveryInconsistent { residual, tolerance });
            }
            Ok(RecoveredPrimal::ConsensusPoint(mean))
        }
        (Direction::RaToConsensus, _) => Err(DualityError::DirectionMismatch("forward")),
        (Direction::ConsensusToRa, _) => Err(DualityError::DirectionMismatch("reverse")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn unit_ra(resources: &[f64]) -> ResourceAllocationProblem {
        ResourceAllocationProblem::new(
            resources
                .iter()
                .map(|_| ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap())
                .collect(),
            resources.iter().map(|&r| v1(r)).collect(),
        )
        .unwrap()
    }

    fn shifted_consensus(a: &[f64]) -> ConsensusProblem {
        ConsensusProblem::new(
            a.iter()
                .map(|&ai| ConvexFunction::scalar_quadratic(1.0, ai).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn lagrange_dual_examples() {
        let dp = lagrange_dual(&unit_ra(&[3.0])).unwrap();
        for y in [-2.0, 0.0, 1.5, 4.0] {
            assert_abs_diff_eq!(
                dp.agent(0).value(&v1(y)).unwrap(),
                0.5 * y * y - 3.0 * y,
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(dp.agent(0).gradient(&v1(y)).unwrap()[0], y - 3.0, epsilon = 1e-14);
        }

        let dp = lagrange_dual(&unit_ra(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(dp.agent(0).gradient(&v1(0.0)).unwrap()[0], -1.0);
        assert_abs_diff_eq!(dp.agent(1).gradient(&v1(0.0)).unwrap()[0], -3.0);
    }

    #[test]
    fn gradient_vanishes_at_gradient_of_resource() {
        let f = ConvexFunction::log_sum_exp(0.7, DVector::from_vec(vec![0.2, -1.0])).unwrap();
        let r = DVector::from_vec(vec![1.5, -0.5]);
        let ra = ResourceAllocationProblem::new(vec![f.clone()], vec![r.clone()]).unwrap();
        let dp = lagrange_dual(&ra).unwrap();
        let g = dp.agent(0).gradient(&f.gradient(&r)).unwrap();
        assert!(g.norm() < 1e-9, "{g}");
    }

    #[test]
    fn lagrange_dual_rejects_non_strict_costs() {
        let f = ConvexFunction::log_sum_exp(0.0, DVector::from_vec(vec![0.0, 0.0])).unwrap();
        let ra = ResourceAllocationProblem::new(vec![f], vec![DVector::zeros(2)]).unwrap();
        assert!(lagrange_dual(&ra).unwrap_err().is_not_strictly_convex());
    }

    #[test]
    fn derived_constants_follow_curvature() {
        let ra = ResourceAllocationProblem::new(
            vec![
                ConvexFunction::scalar_quadratic(2.0, 0.0).unwrap(),
                ConvexFunction::scalar_quadratic(4.0, 1.0).unwrap(),
            ],
            vec![v1(0.0), v1(0.0)],
        )
        .unwrap();
        let c = lagrange_dual(&ra).unwrap().constants().clone();
        assert_abs_diff_eq!(c.k, 0.5);
        assert_abs_diff_eq!(c.mu.unwrap(), 0.25);
        assert_abs_diff_eq!(c.beta_upper.unwrap(), 2.0);
        assert_abs_diff_eq!(c.default_beta().unwrap(), 1.0);
        assert!(c.beta_admissible(1.9) && !c.beta_admissible(2.0) && !c.beta_admissible(0.0));
    }

    #[test]
    fn fenchel_dual_examples() {
        let dp = fenchel_dual(&shifted_consensus(&[0.0, 2.0])).unwrap();
        assert_eq!(dp.direction(), Direction::ConsensusToRa);
        for (i, a) in [0.0, 2.0].into_iter().enumerate() {
            for y in [-1.0, 0.0, 2.5] {
                assert_abs_diff_eq!(dp.agent(i).value(&v1(y)).unwrap(), 0.5 * y * y + a * y, epsilon = 1e-14);
            }
            assert_eq!(dp.agent(i).resource(), &v1(0.0));
        }

        // single agent: Σ y = 0 forces y = 0, and the recovered point is a₁
        let dp = fenchel_dual(&shifted_consensus(&[1.25])).unwrap();
        match recover_primal(&dp, DualSolution::PerAgent(&[v1(0.0)])).unwrap() {
            RecoveredPrimal::ConsensusPoint(s) => assert_abs_diff_eq!(s[0], 1.25),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recover_primal_examples() {
        let dp = lagrange_dual(&unit_ra(&[1.0, 3.0])).unwrap();
        match recover_primal(&dp, DualSolution::Consensus(&v1(2.0))).unwrap() {
            RecoveredPrimal::Allocation(x) => {
                assert_abs_diff_eq!(x[0][0], 2.0);
                assert_abs_diff_eq!(x[1][0], 2.0);
            }
            other => panic!("{other:?}"),
        }
        let err = recover_primal(&dp, DualSolution::Consensus(&v1(0.0))).unwrap_err();
        match err {
            DualityError::PrimalRecoveryInconsistent { residual, .. } => assert_abs_diff_eq!(residual, 4.0),
            other => panic!("{other:?}"),
        }

        let dp = fenchel_dual(&shifted_consensus(&[0.0, 2.0])).unwrap();
        let y = [v1(1.0), v1(-1.0)];
        match recover_primal(&dp, DualSolution::PerAgent(&y)).unwrap() {
            RecoveredPrimal::ConsensusPoint(s) => assert_abs_diff_eq!(s[0], 1.0),
            other => panic!("{other:?}"),
        }
        assert!(recover_primal(&dp, DualSolution::PerAgent(&[v1(0.5), v1(-0.5)])).is_err());
        assert!(matches!(
            recover_primal(&dp, DualSolution::Consensus(&v1(0.0))),
            Err(DualityError::DirectionMismatch(_))
        ));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let f = ConvexFunction::scalar_quadratic(1.0, 0.0).unwrap();
        assert!(ResourceAllocationProblem::new(vec![f.clone()], vec![]).is_err());
        assert!(ResourceAllocationProblem::new(vec![f.clone()], vec![DVector::zeros(2)]).is_err());
        let g = ConvexFunction::log_sum_exp(1.0, DVector::zeros(2)).unwrap();
        assert!(ConsensusProblem::new(vec![f, g]).is_err());
        assert!(ConsensusProblem::new(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn dual_gradient_matches_finite_differences(
            rho in 0.2f64..3.0,
            shift in proptest::collection::vec(-2.0f64..2.0, 2),
            r in proptest::collection::vec(-3.0f64..3.0, 2),
            y in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let f = ConvexFunction::log_sum_exp(rho, DVector::from_vec(shift)).unwrap();
            let ra = ResourceAllocationProblem::new(vec![f], vec![DVector::from_vec(r)]).unwrap();
            let dp = lagrange_dual(&ra).unwrap();
            let agent = dp.agent(0);
            let y = DVector::from_vec(y);
            let grad = agent.gradient(&y).unwrap();
            let h = 1e-5;
            for k in 0..2 {
                let mut e = DVector::zeros(2);
                e[k] = h;
                let fd = (agent.value(&(&y + &e)).unwrap() - agent.value(&(&y - &e)).unwrap()) / (2.0 * h);
                prop_assert!((fd - grad[k]).abs() <= 1e-4 * grad[k].abs().max(1.0), "fd {} vs {}", fd, grad[k]);
            }
        }
    }
}
