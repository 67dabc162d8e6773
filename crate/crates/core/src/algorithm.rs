//! Iterative schemes on the dual problems.
//!
//! The forward solver runs the totally asynchronous consensus iteration on the
//! Lagrange dual of a resource allocation problem. With `ω(t)` the realized
//! graph, every agent performs
//!
//! ```text
//! xᵢ(t)   = argmin_q (fᵢ(q) − yᵢ(t)ᵀq)
//! zᵢ(t)   = xᵢ(t) − Rᵢ
//! yᵢ(t+1) = α(t)(yᵢ(t) − β zᵢ(t))
//!         + (1 − α(t))((1 − η) yᵢ(t) + η Σⱼ Wᵢⱼ(ω(t)) yⱼ(t))
//! ```
//!
//! Asynchrony lives entirely in `W(ω(t))`: an agent that does not wake up has
//! an identity row. All agents read generation `t` and write generation `t+1`.
//!
//! The reverse solver runs the center-free resource allocation iteration on the
//! Fenchel dual of a consensus problem,
//! `yᵢ ← yᵢ − s Σⱼ Wᵢⱼ (∇hᵢ*(yᵢ) − ∇hⱼ*(yⱼ))`, which keeps `Σ yᵢ` fixed when
//! `W` is symmetric.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{ConvexError, InnerSolverConfig};
use crate::duality::{
    fenchel_dual_with, lagrange_dual_with, sum_vectors, ConsensusProblem, DualProblem, ResourceAllocationProblem,
};
use crate::network::{validate_a1, validate_a2, A3Verdict, NetworkProcess, WeightedGraphMatrix};

/// Consecutive iterations below tolerance required to declare convergence.
pub const CONVERGENCE_WINDOW: usize = 100;
/// Inner solves with a larger final residual are flagged in the run result.
pub const INNER_RESIDUAL_FLAG: f64 = 1e-6;
/// Largest `‖Σ y₀ᵢ‖` accepted as a zero-sum start for the reverse solver.
pub const ZERO_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("configuration rejected: {0}")]
    ConfigRejected(String),
    #[error("agent {agent} at t={t}: {source}")]
    Inner { agent: usize, t: u64, source: ConvexError },
}

fn reject(msg: impl Into<String>) -> RunError {
    RunError::ConfigRejected(msg.into())
}

/// Diminishing relaxation sequence `α(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `α(t) = 1/(1+t)^ζ`.
    PowerDecay { zeta: f64 },
    /// `α(t) = level` for `t < hold`, then `level/(1+t−hold)^ζ`.
    ConstantThenDecay { level: f64, hold: u64, zeta: f64 },
    /// Explicit values for the first steps, then a power tail
    /// `last/(2+t−len)^ζ` from the final table entry.
    Table { values: Vec<f64>, zeta: f64 },
}

impl StepSchedule {
    /// Checks `α(t) ∈ [0, 1]`, `α → 0` and `Σ α = ∞`; a power tail with
    /// `ζ ∈ (0, 1]` and a positive base satisfies the last two.
    pub fn validate(&self) -> Result<(), RunError> {
        let zeta_ok = |z: f64| z > 0.0 && z <= 1.0;
        match self {
            StepSchedule::PowerDecay { zeta } if zeta_ok(*zeta) => Ok(()),
            StepSchedule::ConstantThenDecay { level, zeta, .. } if zeta_ok(*zeta) && *level > 0.0 && *level <= 1.0 => {
                Ok(())
            }
            StepSchedule::Table { values, zeta }
                if zeta_ok(*zeta)
                    && values.iter().all(|v| (0.0..=1.0).contains(v))
                    && values.last().is_some_and(|&v| v > 0.0) =>
            {
                Ok(())
            }
            other => Err(reject(format!(
                "step schedule {other:?} must stay in [0,1], vanish, and not be summable (zeta in (0,1])"
            ))),
        }
    }

    pub fn alpha(&self, t: u64) -> f64 {
        match self {
            StepSchedule::PowerDecay { zeta } => (1.0 + t as f64).powf(-zeta),
            StepSchedule::ConstantThenDecay { level, hold, zeta } => {
                if t < *hold {
                    *level
                } else {
                    level * (1.0 + (t - hold) as f64).powf(-zeta)
                }
            }
            StepSchedule::Table { values, zeta } => match values.get(t as usize) {
                Some(v) => *v,
                None => {
                    let last = values.last().copied().unwrap_or(0.0);
                    last * (2.0 + (t as usize - values.len()) as f64).powf(-zeta)
                }
            },
        }
    }
}

pub fn step_alpha(schedule: &StepSchedule, t: u64) -> f64 {
    schedule.alpha(t)
}

/// Per-agent iterates at generation `t`; `x` and `z` are evaluated at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub t: u64,
    pub y: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub beta: f64,
    pub eta: f64,
    /// Inner-solver iterations spent producing `x` (summed over agents).
    pub inner_iterations: usize,
    pub max_inner_residual: f64,
}

impl IterationState {
    /// Evaluates `xᵢ(0)` and `zᵢ(0)` for the given starting duals.
    pub fn initial(dp: &DualProblem, y0: Vec<DVector<f64>>, beta: f64, eta: f64) -> Result<Self, RunError> {
        check_shape(dp, &y0)?;
        let mut state = IterationState {
            t: 0,
            x: Vec::new(),
            z: Vec::new(),
            y: y0,
            beta,
            eta,
            inner_iterations: 0,
            max_inner_residual: 0.0,
        };
        state.evaluate(dp, None)?;
        Ok(state)
    }

    fn evaluate(&mut self, dp: &DualProblem, warm: Option<&[DVector<f64>]>) -> Result<(), RunError> {
        let mut x = Vec::with_capacity(self.y.len());
        let mut z = Vec::with_capacity(self.y.len());
        self.inner_iterations = 0;
        self.max_inner_residual = 0.0;
        for (i, (agent, yi)) in dp.agents().iter().zip(&self.y).enumerate() {
            let (zi, sol) = agent
                .gradient_with_primal(yi, warm.map(|w| &w[i]))
                .map_err(|source| RunError::Inner {
                    agent: i,
                    t: self.t,
                    source,
                })?;
            self.inner_iterations += sol.iterations;
            self.max_inner_residual = self.max_inner_residual.max(sol.residual);
            x.push(sol.x);
            z.push(zi);
        }
        self.x = x;
        self.z = z;
        Ok(())
    }

    pub fn mean_y(&self) -> DVector<f64> {
        mean(&self.y)
    }

    pub fn mean_z(&self) -> DVector<f64> {
        mean(&self.z)
    }

    /// `maxᵢ ‖yᵢ − ȳ‖`.
    pub fn consensus_residual(&self) -> f64 {
        let avg = self.mean_y();
        self.y.iter().map(|yi| (yi - &avg).norm()).fold(0.0, f64::max)
    }
}

fn mean(v: &[DVector<f64>]) -> DVector<f64> {
    sum_vectors(v, v[0].len()) / v.len() as f64
}

fn check_shape(dp: &DualProblem, y: &[DVector<f64>]) -> Result<(), RunError> {
    if y.len() != dp.m() || y.iter().any(|yi| yi.len() != dp.n()) {
        return Err(reject(format!(
            "initial duals must be {} vectors of length {}",
            dp.m(),
            dp.n()
        )));
    }
    Ok(())
}

/// `Σⱼ Wᵢⱼ yⱼ`.
fn mix_row(w: &WeightedGraphMatrix, i: usize, y: &[DVector<f64>]) -> DVector<f64> {
    let weights = w.weights();
    let mut acc = DVector::zeros(y[i].len());
    for (j, yj) in y.iter().enumerate() {
        let wij = weights[(i, j)];
        if wij != 0.0 {
            acc.axpy(wij, yj, 1.0);
        }
    }
    acc
}

/// One generation of the asynchronous dual iteration under realization `w`.
pub fn async_dual_step(
    state: &IterationState,
    dp: &DualProblem,
    w: &WeightedGraphMatrix,
    alpha_t: f64,
) -> Result<IterationState, RunError> {
    if !(0.0..=1.0).contains(&alpha_t) {
        return Err(reject(format!("alpha(t) = {alpha_t} is outside [0, 1]")));
    }
    if w.m() != dp.m() {
        return Err(reject(format!(
            "graph {} has m={} but there are {} agents",
            w.label(),
            w.m(),
            dp.m()
        )));
    }
    let (beta, eta) = (state.beta, state.eta);
    let y_next: Vec<DVector<f64>> = state
        .y
        .iter()
        .zip(&state.z)
        .enumerate()
        .map(|(i, (yi, zi))| {
            let gradient_part = (yi - zi * beta) * alpha_t;
            let mixing_part = (yi * (1.0 - eta) + mix_row(w, i, &state.y) * eta) * (1.0 - alpha_t);
            gradient_part + mixing_part
        })
        .collect();
    let mut next = IterationState {
        t: state.t + 1,
        y: y_next,
        x: Vec::new(),
        z: Vec::new(),
        beta,
        eta,
        inner_iterations: 0,
        max_inner_residual: 0.0,
    };
    next.evaluate(dp, Some(&state.x))?;
    Ok(next)
}

/// One row of a run trace, written after step `t` has been applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    /// Universe index of `ω(t)`.
    pub graph: usize,
    pub alpha: f64,
    pub consensus_residual: f64,
    pub constraint_residual: f64,
    pub dual_error: Option<f64>,
    /// `Σᵢ ‖yᵢ − y*‖²` (forward) or `Σᵢ ‖∇hᵢ*(yᵢ) − s*‖²` (reverse); needs the oracle.
    pub square_error: Option<f64>,
    pub mean_inner_iters: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub final_state: IterationState,
    /// Both residuals stayed below tolerance for the last
    /// [`CONVERGENCE_WINDOW`] iterations of the run.
    pub converged: bool,
    /// First iteration of the final below-tolerance streak.
    pub converged_at: Option<u64>,
    pub max_inner_residual: f64,
    /// Some inner solve ended with a residual above [`INNER_RESIDUAL_FLAG`].
    pub inner_residual_flagged: bool,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaChoice {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl BetaChoice {
    pub const AUTO: BetaChoice = BetaChoice::Auto(AutoTag::Auto);
}

/// Settings for [`run_theorem1`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualRunConfig {
    pub schedule: StepSchedule,
    pub beta: BetaChoice,
    pub eta: f64,
    pub horizon: u64,
    pub inner: InnerSolverConfig,
    pub convergence_tol: f64,
}

impl Default for DualRunConfig {
    fn default() -> Self {
        DualRunConfig {
            schedule: StepSchedule::PowerDecay { zeta: 0.55 },
            beta: BetaChoice::AUTO,
            eta: 0.5,
            horizon: 100_000,
            inner: InnerSolverConfig::default(),
            convergence_tol: 1e-2,
        }
    }
}

/// Tracks the trailing below-tolerance streak.
struct Streak {
    tol: f64,
    start: Option<u64>,
    len: usize,
}

impl Streak {
    fn new(tol: f64) -> Self {
        Streak {
            tol,
            start: None,
            len: 0,
        }
    }

    fn push(&mut self, t: u64, residuals: [f64; 2]) {
        if residuals.iter().all(|r| *r < self.tol) {
            self.start.get_or_insert(t);
            self.len += 1;
        } else {
            self.start = None;
            self.len = 0;
        }
    }

    fn finish(&self) -> (bool, Option<u64>) {
        let ok = self.len >= CONVERGENCE_WINDOW;
        (ok, if ok { self.start } else { None })
    }
}

/// Network preconditions shared by both solvers: A3 certificate, double
/// stochasticity of every member, and connectivity of the recurring support.
fn check_network(process: &NetworkProcess, m: usize) -> Result<(), RunError> {
    let universe = process.universe();
    if universe.m() != m {
        return Err(reject(format!(
            "network has m={} but the problem has {m} agents",
            universe.m()
        )));
    }
    if let A3Verdict::Rejected { family, reason } = process.certify_a3() {
        return Err(reject(format!("A3 rejected for {family} process: {reason}")));
    }
    for g in universe.graphs() {
        let report = validate_a1(g);
        if !report.ok {
            return Err(reject(format!(
                "A1 violated by graph {}: rows {:?}, columns {:?}",
                g.label(),
                report.bad_rows,
                report.bad_columns
            )));
        }
    }
    let support = universe
        .restrict(&process.support())
        .map_err(|e| reject(e.to_string()))?;
    let a2 = validate_a2(&support).map_err(|e| reject(e.to_string()))?;
    if !a2.ok {
        return Err(reject(format!(
            "A2 violated: union of recurring graphs is not strongly connected (Re lambda2 = {:e})",
            a2.lambda2.map_or(0.0, |l| l.0)
        )));
    }
    Ok(())
}

/// Resolves and checks `β ∈ (0, 2μ/K²)`.
pub fn resolve_beta(dp: &DualProblem, choice: BetaChoice) -> Result<f64, RunError> {
    let c = dp.constants();
    match choice {
        BetaChoice::Auto(_) => c
            .default_beta()
            .ok_or_else(|| reject("beta = auto needs a gradient Lipschitz constant for every cost")),
        BetaChoice::Value(beta) if c.beta_admissible(beta) => Ok(beta),
        BetaChoice::Value(beta) => Err(reject(format!(
            "beta = {beta} is outside the admissible interval (0, {})",
            c.beta_upper.map_or("unknown".to_string(), |u| u.to_string())
        ))),
    }
}

/// Runs the asynchronous dual iteration for `horizon` steps along the
/// process's realization sequence. `oracle_dual` enables the dual error column.
pub fn run_theorem1(
    ra: &ResourceAllocationProblem,
    process: &NetworkProcess,
    config: &DualRunConfig,
    y0: Vec<DVector<f64>>,
    oracle_dual: Option<&DVector<f64>>,
) -> Result<RunResult, RunError> {
    let dp = lagrange_dual_with(ra, config.inner).map_err(|e| reject(e.to_string()))?;
    config.schedule.validate()?;
    if !(config.eta > 0.0 && config.eta < 1.0) {
        return Err(reject(format!("eta = {} must lie in (0, 1)", config.eta)));
    }
    let beta = resolve_beta(&dp, config.beta)?;
    check_network(process, dp.m())?;

    let n = dp.n();
    let total_resource = ra.total_resource();
    let mut state = IterationState::initial(&dp, y0, beta, config.eta)?;
    let mut max_inner = state.max_inner_residual;
    let mut trace = Vec::with_capacity(config.horizon as usize);
    let mut streak = Streak::new(config.convergence_tol);
    let universe = process.universe();
    for (t, graph) in (0..config.horizon).zip(process.stream()) {
        let alpha = config.schedule.alpha(t);
        state = async_dual_step(&state, &dp, universe.get(graph), alpha)?;
        max_inner = max_inner.max(state.max_inner_residual);
        let consensus = state.consensus_residual();
        let constraint = (sum_vectors(&state.x, n) - &total_resource).norm();
        streak.push(t, [consensus, constraint]);
        trace.push(TraceRecord {
            t,
            graph,
            alpha,
            consensus_residual: consensus,
            constraint_residual: constraint,
            dual_error: oracle_dual.map(|y| (state.mean_y() - y).norm()),
            square_error: oracle_dual.map(|y| state.y.iter().map(|yi| (yi - y).norm_squared()).sum()),
            mean_inner_iters: state.inner_iterations as f64 / dp.m() as f64,
        });
    }
    let (converged, converged_at) = streak.finish();
    Ok(RunResult {
        trace,
        final_state: state,
        converged,
        converged_at,
        max_inner_residual: max_inner,
        inner_residual_flagged: max_inner > INNER_RESIDUAL_FLAG,
        beta,
    })
}

/// Settings for [`run_reverse_direction`]. `step = None` uses `0.5/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRunConfig {
    pub step: Option<f64>,
    pub horizon: u64,
    pub inner: InnerSolverConfig,
    pub convergence_tol: f64,
}

impl Default for ReverseRunConfig {
    fn default() -> Self {
        ReverseRunConfig {
            step: None,
            horizon: 1_000,
            inner: InnerSolverConfig::default(),
            convergence_tol: 1e-2,
        }
    }
}

/// `K = maxᵢ 1/ρᵢ` bounds the Lipschitz constant of the stacked map
/// `y ↦ (∇hᵢ*(yᵢ))ᵢ`; `I − W` has spectrum in `[0, 2]` for symmetric doubly
/// stochastic `W`, so any step below `1/K` is stable.
pub fn default_reverse_step(dp: &DualProblem) -> f64 {
    0.5 / dp.constants().k
}

/// One center-free step: `yᵢ ← yᵢ − s Σⱼ Wᵢⱼ (gᵢ − gⱼ)` with `gᵢ = ∇hᵢ*(yᵢ)`.
pub fn center_free_step(
    state: &IterationState,
    dp: &DualProblem,
    w: &WeightedGraphMatrix,
    step: f64,
) -> Result<IterationState, RunError> {
    let weights = w.weights();
    let g = &state.x;
    let y_next: Vec<DVector<f64>> = state
        .y
        .iter()
        .enumerate()
        .map(|(i, yi)| {
            let mut flow = DVector::zeros(yi.len());
            for (j, gj) in g.iter().enumerate() {
                let wij = weights[(i, j)];
                if j != i && wij != 0.0 {
                    flow.axpy(wij, &(&g[i] - gj), 1.0);
                }
            }
            yi - flow * step
        })
        .collect();
    let mut next = IterationState {
        t: state.t + 1,
        y: y_next,
        x: Vec::new(),
        z: Vec::new(),
        beta: state.beta,
        eta: state.eta,
        inner_iterations: 0,
        max_inner_residual: 0.0,
    };
    next.evaluate(dp, Some(&state.x))?;
    Ok(next)
}

/// Solves `min Σ hᵢ(s)` through its Fenchel dual with the center-free
/// iteration. Trace columns: `consensus_residual` is
/// `maxᵢⱼ ‖∇hᵢ*(yᵢ) − ∇hⱼ*(yⱼ)‖`, `constraint_residual` is `‖Σ yᵢ‖`, and
/// `dual_error` is the distance of the recovered point to `oracle_point`.
pub fn run_reverse_direction(
    cp: &ConsensusProblem,
    process: &NetworkProcess,
    config: &ReverseRunConfig,
    y0: Vec<DVector<f64>>,
    oracle_point: Option<&DVector<f64>>,
) -> Result<RunResult, RunError> {
    let dp = fenchel_dual_with(cp, config.inner).map_err(|e| reject(e.to_string()))?;
    check_network(process, dp.m())?;
    if let Some(g) = process.universe().graphs().iter().find(|g| !g.is_symmetric(0.0)) {
        return Err(reject(format!(
            "center-free iteration needs symmetric weights; graph {} is not",
            g.label()
        )));
    }
    check_shape(&dp, &y0)?;
    let n = dp.n();
    let imbalance = sum_vectors(&y0, n).norm();
    if imbalance > ZERO_SUM_TOL {
        return Err(reject(format!(
            "initial duals must sum to zero, got norm {imbalance:e}"
        )));
    }
    let step = match config.step {
        Some(s) if s > 0.0 && s < 1.0 / dp.constants().k => s,
        Some(s) => {
            return Err(reject(format!(
                "step {s} must lie in (0, {}) for stability",
                1.0 / dp.constants().k
            )))
        }
        None => default_reverse_step(&dp),
    };

    let mut state = IterationState::initial(&dp, y0, step, 0.0)?;
    let mut max_inner = state.max_inner_residual;
    let mut trace = Vec::with_capacity(config.horizon as usize);
    let mut streak = Streak::new(config.convergence_tol);
    let universe = process.universe();
    for (t, graph) in (0..config.horizon).zip(process.stream()) {
        state = center_free_step(&state, &dp, universe.get(graph), step)?;
        max_inner = max_inner.max(state.max_inner_residual);
        let disagreement = pairwise_spread(&state.x);
        let imbalance = sum_vectors(&state.y, n).norm();
        streak.push(t, [disagreement, imbalance]);
        trace.push(TraceRecord {
            t,
            graph,
            alpha: step,
            consensus_residual: disagreement,
            constraint_residual: imbalance,
            dual_error: oracle_point.map(|s| (mean(&state.x) - s).norm()),
            square_error: oracle_point.map(|s| state.x.iter().map(|xi| (xi - s).norm_squared()).sum()),
            mean_inner_iters: state.inner_iterations as f64 / dp.m() as f64,
        });
    }
    let (converged, converged_at) = streak.finish();
    Ok(RunResult {
        trace,
        final_state: state,
        converged,
        converged_at,
        max_inner_residual: max_inner,
        inner_residual_flagged: max_inner > INNER_RESIDUAL_FLAG,
        beta: step,
    })
}

/// `maxᵢⱼ ‖vᵢ − vⱼ‖`.
fn pairwise_spread(v: &[DVector<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in v.iter().enumerate() {
        for b in &v[i + 1..] {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

/// Recovered consensus point of a reverse run: mean of `∇hᵢ*(yᵢ)`.
pub fn recovered_point(state: &IterationState) -> DVector<f64> {
    mean(&state.x)
}
