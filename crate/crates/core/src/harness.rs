//! JSON experiment configs, the three CLI commands, CSV traces and JSON reports.
//!
//! Relative output paths in a config resolve against the config file's
//! directory. Exit codes: 0 success, 1 configuration or input error, 2 the
//! command ran but its checks failed (no convergence, failed validation).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{
    default_reverse_step, recovered_point, resolve_beta, run_reverse_direction, run_theorem1, BetaChoice,
    DualRunConfig, ReverseRunConfig, RunError, RunResult, StepSchedule, TraceRecord,
};
use crate::convex::{verify_conjugate_duality_properties, ConjugateReport, ConvexFunction, InnerSolverConfig};
use crate::duality::{
    fenchel_dual_with, lagrange_dual_with, ConsensusProblem, Direction, DualProblem, ResourceAllocationProblem,
};
use crate::network::{
    rows_to_matrix, validate_a1, validate_a2, A1Report, A2Report, A3Verdict, GraphSpec, GraphUniverse, NetworkProcess,
    UniverseSpec,
};
use crate::oracle::{solve_consensus, solve_ra_general, solve_ra_quadratic, OracleDual, OracleSolution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

const ORACLE_TOL: f64 = 1e-10;
/// Default initial duals are drawn uniformly from `[-Y0_RANGE, Y0_RANGE]`.
const Y0_RANGE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(RunError),
    #[error("failed to write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl From<RunError> for HarnessError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::ConfigRejected(msg) => HarnessError::Config(msg),
            other => HarnessError::Run(other),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Reads and deserializes JSON, reporting the failing field path and position.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text).map_err(|msg| HarnessError::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            e.into_inner().to_string()
        } else {
            format!("field `{field}`: {}", e.into_inner())
        }
    })
}

// ---------------------------------------------------------------------------
// Config schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl VectorSpec {
    pub fn to_vector(&self) -> DVector<f64> {
        match self {
            VectorSpec::Scalar(x) => DVector::from_element(1, *x),
            VectorSpec::Vector(v) => DVector::from_vec(v.clone()),
        }
    }
}

/// A scalar `q` stands for `q·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `½(x − a)ᵀQ(x − a)`.
    Quadratic { q: MatrixSpec, a: VectorSpec },
    /// `(ρ/2)‖x‖² + log Σ exp(xₖ − shiftₖ)`.
    LogSumExp { rho: f64, shift: VectorSpec },
}

impl CostSpec {
    pub fn build(&self) -> Result<ConvexFunction, HarnessError> {
        match self {
            CostSpec::Quadratic { q, a } => {
                let a = a.to_vector();
                let q = match q {
                    MatrixSpec::Scalar(s) => DMatrix::identity(a.len(), a.len()) * *s,
                    MatrixSpec::Rows(rows) => rows_to_matrix(rows, "q").map_err(HarnessError::Config)?,
                };
                ConvexFunction::quadratic(q, a).map_err(config_err)
            }
            CostSpec::LogSumExp { rho, shift } => {
                ConvexFunction::log_sum_exp(*rho, shift.to_vector()).map_err(config_err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    ResourceAllocation {
        costs: Vec<CostSpec>,
        resources: Vec<VectorSpec>,
    },
    Consensus {
        costs: Vec<CostSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    /// I.i.d. with equal probabilities.
    Uniform,
    Iid {
        probabilities: Vec<f64>,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    Cycle {
        order: Vec<usize>,
    },
    /// Generates its own universe of pair-averaging matrices.
    Gossip {
        pairs: Vec<(usize, usize)>,
        probabilities: Vec<f64>,
    },
}

impl ProcessSpec {
    pub fn build(&self, m: usize, universe: Option<GraphUniverse>, seed: u64) -> Result<NetworkProcess, HarnessError> {
        if let ProcessSpec::Gossip { pairs, probabilities } = self {
            if universe.is_some() {
                return Err(HarnessError::Config(
                    "gossip processes generate their own universe; omit the graphs".into(),
                ));
            }
            return NetworkProcess::gossip(m, pairs.clone(), probabilities.clone(), seed).map_err(config_err);
        }
        let universe = universe.ok_or_else(|| HarnessError::Config("network process needs a graph universe".into()))?;
        let process = match self {
            ProcessSpec::Uniform => Ok(NetworkProcess::uniform(universe, seed)),
            ProcessSpec::Iid { probabilities } => NetworkProcess::iid(universe, probabilities.clone(), seed),
            ProcessSpec::Markov { transition, initial } => {
                let t = rows_to_matrix(transition, "transition").map_err(HarnessError::Config)?;
                NetworkProcess::markov(universe, t, initial.clone(), seed)
            }
            ProcessSpec::Cycle { order } => NetworkProcess::cycle(universe, order.clone(), seed),
            ProcessSpec::Gossip { .. } => unreachable!(),
        };
        process.map_err(config_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub universe: Option<UniverseSpec>,
    pub process: ProcessSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_eta() -> f64 {
    0.5
}

fn default_schedule() -> StepSchedule {
    StepSchedule::PowerDecay { zeta: 0.55 }
}

fn default_inner_tol() -> f64 {
    InnerSolverConfig::default().tolerance
}

fn default_inner_iterations() -> usize {
    InnerSolverConfig::default().max_iterations
}

fn default_convergence_tol() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    /// `"auto"` or a number in `(0, 2μ/K²)`; forward direction only.
    #[serde(default = "auto_beta")]
    pub beta: BetaChoice,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_schedule")]
    pub schedule: StepSchedule,
    pub horizon: u64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_iterations")]
    pub inner_max_iterations: usize,
    #[serde(default = "default_convergence_tol")]
    pub convergence_tol: f64,
    /// Center-free step for the reverse direction; defaults to `0.5/K`.
    #[serde(default)]
    pub step: Option<f64>,
    /// Explicit initial duals. Otherwise forward runs draw them from the run
    /// seed and reverse runs start at zero.
    #[serde(default)]
    pub y0: Option<Vec<VectorSpec>>,
}

fn auto_beta() -> BetaChoice {
    BetaChoice::AUTO
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    /// Extra seeds for the multi-seed aggregate.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

// ---------------------------------------------------------------------------
// Prepared experiment

#[derive(Debug, Clone)]
pub enum Problem {
    ResourceAllocation(ResourceAllocationProblem),
    Consensus(ConsensusProblem),
}

/// A validated config with every derived object built.
pub struct Experiment {
    pub problem: Problem,
    pub dual: DualProblem,
    pub process: NetworkProcess,
    pub algorithm: AlgorithmSpec,
    pub inner: InnerSolverConfig,
    pub oracle: Option<OracleSolution>,
    pub oracle_note: Option<String>,
    /// `β` for forward runs, the center-free step for reverse runs.
    pub gain: f64,
    y0: Option<Vec<DVector<f64>>>,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let alg = config.algorithm.clone();
        let inner = InnerSolverConfig {
            tolerance: alg.inner_tol,
            max_iterations: alg.inner_max_iterations,
        };
        if inner.tolerance.is_nan() || inner.tolerance <= 0.0 || inner.max_iterations == 0 {
            return Err(HarnessError::Config(
                "inner_tol and inner_max_iterations must be positive".into(),
            ));
        }
        if alg.convergence_tol.is_nan() || alg.convergence_tol <= 0.0 {
            return Err(HarnessError::Config("convergence_tol must be positive".into()));
        }
        let build_costs = |costs: &[CostSpec]| {
            costs
                .iter()
                .enumerate()
                .map(|(i, c)| c.build().map_err(|e| HarnessError::Config(format!("cost {i}: {e}"))))
                .collect::<Result<Vec<_>, _>>()
        };
        let problem = match &config.problem {
            ProblemSpec::ResourceAllocation { costs, resources } => Problem::ResourceAllocation(
                ResourceAllocationProblem::new(
                    build_costs(costs)?,
                    resources.iter().map(VectorSpec::to_vector).collect(),
                )
                .map_err(config_err)?,
            ),
            ProblemSpec::Consensus { costs } => {
                Problem::Consensus(ConsensusProblem::new(build_costs(costs)?).map_err(config_err)?)
            }
        };
        let (dual, m) = match &problem {
            Problem::ResourceAllocation(ra) => (lagrange_dual_with(ra, inner).map_err(config_err)?, ra.m()),
            Problem::Consensus(cp) => (fenchel_dual_with(cp, inner).map_err(config_err)?, cp.m()),
        };
        let universe = config
            .network
            .universe
            .as_ref()
            .map(|u| u.build().map_err(config_err))
            .transpose()?;
        let process = config.network.process.build(m, universe, config.network.seed)?;

        let gain = match &problem {
            Problem::ResourceAllocation(_) => resolve_beta(&dual, alg.beta)?,
            Problem::Consensus(_) => alg.step.unwrap_or_else(|| default_reverse_step(&dual)),
        };
        let y0 = alg
            .y0
            .as_ref()
            .map(|v| v.iter().map(VectorSpec::to_vector).collect::<Vec<_>>());
        if let Some(y0) = &y0 {
            if y0.len() != m || y0.iter().any(|y| y.len() != dual.n()) {
                return Err(HarnessError::Config(format!(
                    "algorithm.y0 must hold {m} vectors of length {}",
                    dual.n()
                )));
            }
        }

        let (oracle, oracle_note) = match &problem {
            Problem::ResourceAllocation(ra) => {
                let solved = if ra.costs().iter().all(ConvexFunction::is_quadratic) {
                    solve_ra_quadratic(ra)
                } else {
                    solve_ra_general(ra, ORACLE_TOL)
                };
                match solved {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            Problem::Consensus(cp) => match solve_consensus(cp, ORACLE_TOL) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            },
        };

        Ok(Experiment {
            problem,
            dual,
            process,
            algorithm: alg,
            inner,
            oracle,
            oracle_note,
            gain,
            y0,
        })
    }

    pub fn direction(&self) -> Direction {
        self.dual.direction()
    }

    /// `y*` (forward) or `s*` (reverse) from the oracle.
    pub fn oracle_target(&self) -> Option<&DVector<f64>> {
        let o = self.oracle.as_ref()?;
        match self.problem {
            Problem::ResourceAllocation(_) => o.multiplier(),
            Problem::Consensus(_) => o.primal.first(),
        }
    }

    pub fn initial_duals(&self, seed: u64) -> Vec<DVector<f64>> {
        if let Some(y0) = &self.y0 {
            return y0.clone();
        }
        let (m, n) = (self.dual.m(), self.dual.n());
        match self.problem {
            Problem::Consensus(_) => vec![DVector::zeros(n); m],
            Problem::ResourceAllocation(_) => {
                // separate stream from the realization sampler on the same seed
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                (0..m)
                    .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-Y0_RANGE..Y0_RANGE)))
                    .collect()
            }
        }
    }

    pub fn run(&self, seed: u64, horizon: u64) -> Result<RunResult, RunError> {
        let process = self.process.with_seed(seed);
        let y0 = self.initial_duals(seed);
        let alg = &self.algorithm;
        match &self.problem {
            Problem::ResourceAllocation(ra) => {
                let config = DualRunConfig {
                    schedule: alg.schedule.clone(),
                    beta: BetaChoice::Value(self.gain),
                    eta: alg.eta,
                    horizon,
                    inner: self.inner,
                    convergence_tol: alg.convergence_tol,
                };
                run_theorem1(ra, &process, &config, y0, self.oracle_target())
            }
            Problem::Consensus(cp) => {
                let config = ReverseRunConfig {
                    step: Some(self.gain),
                    horizon,
                    inner: self.inner,
                    convergence_tol: alg.convergence_tol,
                };
                run_reverse_direction(cp, &process, &config, y0, self.oracle_target())
            }
        }
    }

    pub fn assumptions(&self) -> Result<AssumptionReport, HarnessError> {
        assumption_report(&self.process)
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub a1: Vec<A1Report>,
    /// Connectivity of the full universe.
    pub a2: A2Report,
    pub a3: A3Verdict,
    pub passed: bool,
}

fn assumption_report(process: &NetworkProcess) -> Result<AssumptionReport, HarnessError> {
    let universe = process.universe();
    let a1: Vec<A1Report> = universe.graphs().iter().map(validate_a1).collect();
    let a2 = validate_a2(universe).map_err(config_err)?;
    let a3 = process.certify_a3();
    let support_ok = match &a3 {
        A3Verdict::Certified(c) => c.support_a2.as_ref().is_none_or(|r| r.ok),
        A3Verdict::Rejected { .. } => false,
    };
    Ok(AssumptionReport {
        passed: a1.iter().all(|r| r.ok) && a2.ok && support_ok,
        a1,
        a2,
        a3,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    /// Strong convexity `ρᵢ` of each cost.
    pub rho: Vec<f64>,
    /// Gradient Lipschitz constant `Lᵢ` of each cost, when known.
    pub lipschitz: Vec<Option<f64>>,
    pub mu: Option<f64>,
    pub k: f64,
    /// Admissible `β` interval `(0, 2μ/K²)`.
    pub beta_interval: (f64, Option<f64>),
    pub beta: Option<f64>,
    pub reverse_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalResiduals {
    pub consensus: Option<f64>,
    pub constraint: Option<f64>,
    pub dual_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    /// `y*` (forward) or the per-agent `yᵢ*` (reverse).
    pub dual: Vec<Vec<f64>>,
    /// `xᵢ*` (forward) or `s*` (reverse).
    pub primal: Vec<Vec<f64>>,
    pub objective: f64,
    /// `‖ȳ − y*‖` forward, `‖s − s*‖` reverse.
    pub dual_error: f64,
    /// `maxᵢ ‖xᵢ − xᵢ*‖` forward, `maxᵢ ‖yᵢ − yᵢ*‖` reverse.
    pub primal_error: f64,
    pub objective_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub converged: bool,
    pub converged_at: Option<u64>,
    pub final_residuals: FinalResiduals,
}

#[derive(Debug, Clone, Serialize)]
pub struct MsePoint {
    /// Number of steps taken.
    pub iteration: u64,
    pub mean_square_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub converged: usize,
    pub outcomes: Vec<SeedOutcome>,
    /// Seed average of the squared dual error at log-spaced iterations.
    pub mean_square_error: Vec<MsePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub direction: Direction,
    pub seed: u64,
    pub horizon: u64,
    pub converged: bool,
    pub converged_at: Option<u64>,
    pub convergence_tol: f64,
    pub final_residuals: FinalResiduals,
    /// Mean dual `ȳ` (forward) or the recovered consensus point (reverse).
    pub solution: Vec<f64>,
    /// `xᵢ` (forward) or `yᵢ` (reverse) at the horizon.
    pub agents: Vec<Vec<f64>>,
    pub oracle: Option<OracleComparison>,
    pub oracle_note: Option<String>,
    pub derived_constants: ConstantsReport,
    pub assumptions: AssumptionReport,
    pub inner_tolerance: f64,
    pub max_inner_residual: f64,
    pub inner_residual_flagged: bool,
    pub multi_seed: Option<MultiSeedReport>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn final_residuals(result: &RunResult) -> FinalResiduals {
    let last = result.trace.last();
    FinalResiduals {
        consensus: last.map(|r| r.consensus_residual),
        constraint: last.map(|r| r.constraint_residual),
        dual_error: last.and_then(|r| r.dual_error),
    }
}

fn checkpoints(horizon: u64) -> Vec<u64> {
    let mut points: Vec<u64> = std::iter::successors(Some(1u64), |p| p.checked_mul(10))
        .take_while(|&p| p <= horizon)
        .collect();
    if points.last() != Some(&horizon) && horizon > 0 {
        points.push(horizon);
    }
    points
}

fn square_errors_at(trace: &[TraceRecord], points: &[u64]) -> Vec<Option<f64>> {
    points
        .iter()
        .map(|&p| trace.get(p as usize - 1).and_then(|r| r.square_error))
        .collect()
}

impl Experiment {
    fn constants_report(&self) -> ConstantsReport {
        let c = self.dual.constants();
        let forward = matches!(self.problem, Problem::ResourceAllocation(_));
        ConstantsReport {
            rho: c.rho.clone(),
            lipschitz: c.lipschitz.clone(),
            mu: c.mu,
            k: c.k,
            beta_interval: (0.0, c.beta_upper),
            beta: forward.then_some(self.gain),
            reverse_step: (!forward).then_some(self.gain),
        }
    }

    fn oracle_comparison(&self, result: &RunResult) -> Option<OracleComparison> {
        let oracle = self.oracle.as_ref()?;
        let state = &result.final_state;
        let max_dist =
            |a: &[DVector<f64>], b: &[DVector<f64>]| a.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        Some(match (&self.problem, &oracle.dual) {
            (Problem::ResourceAllocation(ra), OracleDual::Multiplier(y)) => OracleComparison {
                dual: vec![to_vec(y)],
                primal: oracle.primal.iter().map(to_vec).collect(),
                objective: oracle.objective,
                dual_error: (state.mean_y() - y).norm(),
                primal_error: max_dist(&state.x, &oracle.primal),
                objective_gap: (ra.objective(&state.x) - oracle.objective).abs(),
            },
            (Problem::Consensus(cp), OracleDual::PerAgent(ys)) => {
                let s = recovered_point(state);
                OracleComparison {
                    dual: ys.iter().map(to_vec).collect(),
                    primal: oracle.primal.iter().map(to_vec).collect(),
                    objective: oracle.objective,
                    dual_error: (&s - &oracle.primal[0]).norm(),
                    primal_error: max_dist(&state.y, ys),
                    objective_gap: (cp.objective(&s) - oracle.objective).abs(),
                }
            }
            _ => return None,
        })
    }

    fn multi_seed(&self, seeds: &[u64], horizon: u64) -> Result<MultiSeedReport, HarnessError> {
        let points = checkpoints(horizon);
        let runs: Vec<(SeedOutcome, Vec<Option<f64>>)> = seeds
            .par_iter()
            .map(|&seed| {
                let result = self.run(seed, horizon)?;
                let errors = square_errors_at(&result.trace, &points);
                let outcome = SeedOutcome {
                    seed,
                    converged: result.converged,
                    converged_at: result.converged_at,
                    final_residuals: final_residuals(&result),
                };
                Ok((outcome, errors))
            })
            .collect::<Result<_, RunError>>()?;
        let mean_square_error = points
            .iter()
            .enumerate()
            .filter_map(|(k, &iteration)| {
                let values: Option<Vec<f64>> = runs.iter().map(|(_, e)| e[k]).collect();
                values.map(|v| MsePoint {
                    iteration,
                    mean_square_error: v.iter().sum::<f64>() / v.len() as f64,
                })
            })
            .collect();
        Ok(MultiSeedReport {
            seeds: seeds.to_vec(),
            converged: runs.iter().filter(|(o, _)| o.converged).count(),
            outcomes: runs.into_iter().map(|(o, _)| o).collect(),
            mean_square_error,
        })
    }

    pub fn report(&self, seed: u64, horizon: u64, result: &RunResult) -> Result<RunReport, HarnessError> {
        let state = &result.final_state;
        let (solution, agents) = match self.problem {
            Problem::ResourceAllocation(_) => (to_vec(&state.mean_y()), state.x.iter().map(to_vec).collect()),
            Problem::Consensus(_) => (to_vec(&recovered_point(state)), state.y.iter().map(to_vec).collect()),
        };
        Ok(RunReport {
            direction: self.direction(),
            seed,
            horizon,
            converged: result.converged,
            converged_at: result.converged_at,
            convergence_tol: self.algorithm.convergence_tol,
            final_residuals: final_residuals(result),
            solution,
            agents,
            oracle: self.oracle_comparison(result),
            oracle_note: self.oracle_note.clone(),
            derived_constants: self.constants_report(),
            assumptions: self.assumptions()?,
            inner_tolerance: self.inner.tolerance,
            max_inner_residual: result.max_inner_residual,
            inner_residual_flagged: result.inner_residual_flagged,
            multi_seed: None,
        })
    }
}

/// Writes the trace CSV. Floats use the shortest representation that
/// round-trips, so reruns are byte-identical.
pub fn write_trace(path: &Path, universe: &GraphUniverse, trace: &[TraceRecord]) -> Result<(), HarnessError> {
    let out_err = |e: csv::Error| HarnessError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(out_err)?;
    w.write_record([
        "t",
        "graph_label",
        "alpha_t",
        "consensus_residual",
        "constraint_residual",
        "dual_error",
        "mean_inner_iters",
    ])
    .map_err(out_err)?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            universe.get(r.graph).label().to_string(),
            r.alpha.to_string(),
            r.consensus_residual.to_string(),
            r.constraint_residual.to_string(),
            r.dual_error.map(|e| e.to_string()).unwrap_or_default(),
            r.mean_inner_iters.to_string(),
        ])
        .map_err(out_err)?;
    }
    w.flush().map_err(|e| HarnessError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
}

/// Runs a config end to end: validate, run the primary seed, write the trace,
/// run the extra seeds concurrently, write the report.
pub fn cmd_run(config_path: &Path, overrides: RunOverrides) -> Result<RunReport, HarnessError> {
    let config: ExperimentConfig = read_json(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_config(&config, base, overrides)
}

pub fn run_config(config: &ExperimentConfig, base: &Path, overrides: RunOverrides) -> Result<RunReport, HarnessError> {
    let experiment = Experiment::prepare(config)?;
    let seed = overrides.seed.unwrap_or(config.network.seed);
    let horizon = overrides.horizon.unwrap_or(config.algorithm.horizon);

    let result = experiment.run(seed, horizon)?;
    let mut report = experiment.report(seed, horizon, &result)?;
    if !config.outputs.seeds.is_empty() {
        report.multi_seed = Some(experiment.multi_seed(&config.outputs.seeds, horizon)?);
    }
    if let Some(trace) = &config.outputs.trace {
        write_trace(&resolve(base, trace), experiment.process.universe(), &result.trace)?;
    }
    if let Some(path) = &config.outputs.report {
        write_json(&resolve(base, path), &report)?;
    }
    Ok(report)
}

/// Universe file for `check-graph`: a universe plus an optional process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub m: usize,
    #[serde(default)]
    pub graphs: Vec<GraphSpec>,
    #[serde(default)]
    pub process: Option<ProcessSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphCheckReport {
    pub m: usize,
    pub a1: Vec<A1Report>,
    pub a2: A2Report,
    pub a3: Option<A3Verdict>,
    pub passed: bool,
}

impl GraphCheckReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }
}

pub fn check_graph_file(file: &GraphFile) -> Result<GraphCheckReport, HarnessError> {
    let universe = if file.graphs.is_empty() {
        None
    } else {
        let spec = UniverseSpec {
            m: file.m,
            graphs: file.graphs.clone(),
        };
        Some(spec.build().map_err(config_err)?)
    };
    match &file.process {
        Some(p) => {
            let process = p.build(file.m, universe, file.seed)?;
            let r = assumption_report(&process)?;
            Ok(GraphCheckReport {
                m: file.m,
                passed: r.passed,
                a1: r.a1,
                a2: r.a2,
                a3: Some(r.a3),
            })
        }
        None => {
            let universe = universe.ok_or_else(|| HarnessError::Config("universe has no graphs".into()))?;
            let a1: Vec<A1Report> = universe.graphs().iter().map(validate_a1).collect();
            let a2 = validate_a2(&universe).map_err(config_err)?;
            Ok(GraphCheckReport {
                m: file.m,
                passed: a1.iter().all(|r| r.ok) && a2.ok,
                a1,
                a2,
                a3: None,
            })
        }
    }
}

pub fn cmd_check_graph(path: &Path) -> Result<GraphCheckReport, HarnessError> {
    check_graph_file(&read_json(path)?)
}

pub fn cmd_conjugate_selftest(path: &Path, samples: usize, seed: u64) -> Result<ConjugateReport, HarnessError> {
    let spec: CostSpec = read_json(path)?;
    let f = spec.build()?;
    verify_conjugate_duality_properties(&f, samples, seed).map_err(config_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_config(horizon: u64) -> ExperimentConfig {
        parse_json(&format!(
            r#"{{
                "problem": {{
                    "kind": "resource_allocation",
                    "costs": [
                        {{"type": "quadratic", "q": 1, "a": 0}},
                        {{"type": "quadratic", "q": 1, "a": 0}},
                        {{"type": "quadratic", "q": 1, "a": 0}}
                    ],
                    "resources": [1, 2, 6]
                }},
                "network": {{
                    "universe": {{"m": 3, "graphs": [
                        {{"label": "k3", "adjacency": [[0,1,1],[1,0,1],[1,1,0]]}}
                    ]}},
                    "process": {{"model": "uniform"}},
                    "seed": 4
                }},
                "algorithm": {{"horizon": {horizon}, "schedule": {{"kind": "power_decay", "zeta": 1.0}}}}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_oracle() {
        let cfg = unit_config(10);
        assert_eq!(cfg.algorithm.beta, BetaChoice::AUTO);
        assert_eq!(cfg.algorithm.eta, 0.5);
        assert_eq!(cfg.algorithm.inner_tol, 1e-10);
        let exp = Experiment::prepare(&cfg).unwrap();
        assert_eq!(exp.gain, 1.0);
        assert_abs_diff_eq!(exp.oracle_target().unwrap()[0], 3.0, epsilon = 1e-12);
        let y0 = exp.initial_duals(4);
        assert_eq!(y0, exp.initial_duals(4));
        assert_ne!(y0, exp.initial_duals(5));
        assert!(y0.iter().all(|y| y[0].abs() <= Y0_RANGE));
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = parse_json::<ExperimentConfig>(
            r#"{"problem": {"kind": "consensus", "costs": []}, "network": {"process": {"model": "uniform"}},
                "algorithm": {"horizon": 5, "eta": "high"}}"#,
        )
        .unwrap_err();
        assert!(err.contains("algorithm.eta"), "{err}");
        assert!(err.contains("line"), "{err}");

        let err = parse_json::<ExperimentConfig>(
            r#"{"problem": {"kind": "consensus", "costs": []}, "network": {"process": {"model": "uniform"}},
                "algorithm": {"horizon": 5, "bogus": 1}}"#,
        )
        .unwrap_err();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn run_converges_and_reports() {
        let report = run_config(&unit_config(3_000), Path::new("."), RunOverrides::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.exit_code(), EXIT_OK);
        let oracle = report.oracle.as_ref().unwrap();
        assert!(oracle.dual_error < 1e-2);
        assert_eq!(report.derived_constants.beta_interval.1, Some(2.0));
        assert!(report.assumptions.passed);

        let short = run_config(&unit_config(10), Path::new("."), RunOverrides::default()).unwrap();
        assert!(!short.converged);
        assert_eq!(short.exit_code(), EXIT_FAILED);
    }

    #[test]
    fn multi_seed_aggregates_in_seed_order() {
        let mut cfg = unit_config(1_000);
        cfg.outputs.seeds = vec![3, 1, 2];
        let report = run_config(&cfg, Path::new("."), RunOverrides::default()).unwrap();
        let ms = report.multi_seed.unwrap();
        let seeds: Vec<u64> = ms.outcomes.iter().map(|o| o.seed).collect();
        assert_eq!(seeds, vec![3, 1, 2]);
        let iters: Vec<u64> = ms.mean_square_error.iter().map(|p| p.iteration).collect();
        assert_eq!(iters, vec![1, 10, 100, 1000]);
        assert!(ms.mean_square_error[3].mean_square_error < ms.mean_square_error[0].mean_square_error);
    }

    #[test]
    fn reverse_config_runs() {
        let cfg: ExperimentConfig = parse_json(
            r#"{
                "problem": {"kind": "consensus", "costs": [
                    {"type": "quadratic", "q": 1, "a": 0},
                    {"type": "quadratic", "q": 1, "a": 2}
                ]},
                "network": {"process": {"model": "gossip", "pairs": [[0, 1]], "probabilities": [1.0]}},
                "algorithm": {"horizon": 500}
            }"#,
        )
        .unwrap();
        let report = run_config(&cfg, Path::new("."), RunOverrides::default()).unwrap();
        assert!(report.converged);
        assert_abs_diff_eq!(report.solution[0], 1.0, epsilon = 1e-8);
        assert_eq!(report.derived_constants.reverse_step, Some(0.5));
    }

    #[test]
    fn check_graph_examples() {
        let file: GraphFile =
            parse_json(r#"{"m": 3, "graphs": [{"label": "k3", "adjacency": [[0,1,1],[1,0,1],[1,1,0]]}]}"#).unwrap();
        let r = check_graph_file(&file).unwrap();
        assert!(r.passed);
        // W = J/3, so I − W has spectrum {0, 1, 1}
        assert_abs_diff_eq!(r.a2.lambda2.unwrap().0, 1.0, epsilon = 1e-12);

        let idle: GraphFile = parse_json(r#"{"m": 2, "graphs": [{"label": "I", "weights": [[1,0],[0,1]]}]}"#).unwrap();
        assert!(!check_graph_file(&idle).unwrap().passed);

        let short: GraphFile =
            parse_json(r#"{"m": 2, "graphs": [{"label": "short", "weights": [[0.4,0.5],[0.5,0.5]]}]}"#).unwrap();
        let r = check_graph_file(&short).unwrap();
        assert!(!r.passed);
        assert_eq!(r.a1[0].bad_rows[0].0, 0);

        let markov: GraphFile = parse_json(
            r#"{"m": 2, "graphs": [
                    {"label": "avg", "weights": [[0.5,0.5],[0.5,0.5]]},
                    {"label": "I", "weights": [[1,0],[0,1]]}],
                "process": {"model": "markov", "transition": [[0.9,0.1],[0.1,0.9]], "initial": [1, 0]}}"#,
        )
        .unwrap();
        let r = check_graph_file(&markov).unwrap();
        assert!(!r.passed);
        assert!(!r.a3.unwrap().is_certified());
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(250), vec![1, 10, 100, 250]);
        assert!(checkpoints(0).is_empty());
    }
}
