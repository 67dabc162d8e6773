//! Communication graphs and the random switching process that drives them.
//!
//! Each realization ω* of the network is a [`WeightedGraphMatrix`]: an m×m
//! nonnegative matrix whose entry `(i, j)` is the weight agent `i` puts on the
//! value received from `j` (diagonal entries are self-weights). The identity
//! matrix encodes "no edges, or nobody woke up", which is how asynchrony and
//! switching share a single representation.
//!
//! [`validate_a1`] checks double stochasticity, [`validate_a2`] checks that the
//! union over the universe is strongly connected via `Re λ₂(Σ (I − W)) > 0`, and
//! [`NetworkProcess::certify_a3`] certifies that recurring realizations occur
//! infinitely often, by distribution family.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Schur};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row/column sum tolerance for double stochasticity.
pub const A1_TOL: f64 = 1e-12;
/// `Re λ₂` must exceed this to count as connected.
pub const A2_TOL: f64 = 1e-10;
const STATIONARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid weight matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid graph universe: {0}")]
    InvalidUniverse(String),
    #[error("invalid network process: {0}")]
    InvalidProcess(String),
    #[error("eigensolver did not converge on a {0}x{0} matrix")]
    EigensolverFailure(usize),
    #[error("failed to parse graph universe: {0}")]
    Parse(String),
}

/// One realization `W(ω*)` of the communication topology.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraphMatrix {
    label: String,
    weights: DMatrix<f64>,
}

impl WeightedGraphMatrix {
    /// Entries must be finite and lie in `[0, 1]`.
    pub fn new(label: impl Into<String>, weights: DMatrix<f64>) -> Result<Self, NetworkError> {
        let label = label.into();
        if weights.nrows() == 0 || weights.nrows() != weights.ncols() {
            return Err(NetworkError::InvalidMatrix(format!(
                "{label}: expected a nonempty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if let Some(((i, j), v)) = weights
            .iter()
            .enumerate()
            .map(|(k, v)| ((k % weights.nrows(), k / weights.nrows()), *v))
            .find(|(_, v)| !v.is_finite() || *v < 0.0 || *v > 1.0 + A1_TOL)
        {
            return Err(NetworkError::InvalidMatrix(format!(
                "{label}: entry ({i},{j}) = {v} is outside [0, 1]"
            )));
        }
        Ok(WeightedGraphMatrix { label, weights })
    }

    /// `I_m`: no edges, no activation.
    pub fn identity(m: usize) -> Self {
        WeightedGraphMatrix {
            label: "idle".into(),
            weights: DMatrix::identity(m, m),
        }
    }

    /// Pairwise gossip between `i` and `j`: the two agents average, everyone
    /// else keeps its value.
    pub fn gossip(m: usize, i: usize, j: usize) -> Result<Self, NetworkError> {
        if i == j || i >= m || j >= m {
            return Err(NetworkError::InvalidMatrix(format!(
                "gossip pair ({i},{j}) is invalid for m={m}"
            )));
        }
        let mut w = DMatrix::identity(m, m);
        w[(i, i)] = 0.5;
        w[(j, j)] = 0.5;
        w[(i, j)] = 0.5;
        w[(j, i)] = 0.5;
        Ok(WeightedGraphMatrix {
            label: format!("gossip({i},{j})"),
            weights: w,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (&self.weights - self.weights.transpose()).amax() <= tol
    }

    /// Off-diagonal entries with nonzero weight, as `(i, j)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m();
        (0..m)
            .flat_map(move |i| (0..m).map(move |j| (i, j)))
            .filter(move |&(i, j)| i != j && self.weights[(i, j)] != 0.0)
    }
}

/// Outcome of the double-stochasticity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A1Report {
    pub label: String,
    pub ok: bool,
    /// `(row, sum)` for every row whose sum is off by more than the tolerance.
    pub bad_rows: Vec<(usize, f64)>,
    pub bad_columns: Vec<(usize, f64)>,
    pub negative_entries: Vec<(usize, usize)>,
}

pub fn validate_a1(w: &WeightedGraphMatrix) -> A1Report {
    let m = w.m();
    let mat = w.weights();
    let bad_rows: Vec<_> = (0..m)
        .map(|i| (i, mat.row(i).sum()))
        .filter(|(_, s)| (s - 1.0).abs() > A1_TOL)
        .collect();
    let bad_columns: Vec<_> = (0..m)
        .map(|j| (j, mat.column(j).sum()))
        .filter(|(_, s)| (s - 1.0).abs() > A1_TOL)
        .collect();
    let negative_entries: Vec<_> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| mat[(i, j)] < 0.0)
        .collect();
    A1Report {
        label: w.label().to_string(),
        ok: bad_rows.is_empty() && bad_columns.is_empty() && negative_entries.is_empty(),
        bad_rows,
        bad_columns,
        negative_entries,
    }
}

/// The finite set Ω* of possible realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUniverse {
    graphs: Vec<WeightedGraphMatrix>,
}

impl GraphUniverse {
    pub fn new(graphs: Vec<WeightedGraphMatrix>) -> Result<Self, NetworkError> {
        let first = graphs
            .first()
            .ok_or_else(|| NetworkError::InvalidUniverse("universe is empty".into()))?;
        let m = first.m();
        if let Some(g) = graphs.iter().find(|g| g.m() != m) {
            return Err(NetworkError::InvalidUniverse(format!(
                "graph {} has m={} but the universe has m={m}",
                g.label(),
                g.m()
            )));
        }
        Ok(GraphUniverse { graphs })
    }

    pub fn m(&self) -> usize {
        self.graphs[0].m()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[WeightedGraphMatrix] {
        &self.graphs
    }

    pub fn get(&self, idx: usize) -> &WeightedGraphMatrix {
        &self.graphs[idx]
    }

    /// Sub-universe restricted to `indices`, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self, NetworkError> {
        GraphUniverse::new(indices.iter().map(|&i| self.graphs[i].clone()).collect())
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let spec: UniverseSpec = serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        spec.build()
    }
}

/// Spectrum of `S = Σ_ω (I − W(ω))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Report {
    pub ok: bool,
    /// `(re, im)` of the eigenvalue with the smallest real part (≈ 0).
    pub lambda1: (f64, f64),
    /// `(re, im)` of the second smallest by real part; absent when m = 1.
    pub lambda2: Option<(f64, f64)>,
    pub eigenvalues: Vec<(f64, f64)>,
}

pub fn validate_a2(universe: &GraphUniverse) -> Result<A2Report, NetworkError> {
    let m = universe.m();
    let identity = DMatrix::<f64>::identity(m, m);
    let sum = universe
        .graphs()
        .iter()
        .fold(DMatrix::<f64>::zeros(m, m), |acc, g| acc + (&identity - g.weights()));
    // S may be non-symmetric for directed graphs
    let mut eigenvalues: Vec<(f64, f64)> = if sum.amax() == 0.0 {
        vec![(0.0, 0.0); m]
    } else {
        Schur::try_new(sum, f64::EPSILON, 10_000)
            .ok_or(NetworkError::EigensolverFailure(m))?
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    };
    eigenvalues.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let lambda1 = eigenvalues[0];
    let lambda2 = eigenvalues.get(1).copied();
    Ok(A2Report {
        ok: lambda2.is_none_or(|l| l.0 > A2_TOL),
        lambda1,
        lambda2,
        eigenvalues,
    })
}

/// Kronecker lift `W ⊗ I_n` acting on stacked n-vectors.
pub fn lift_matrix(w: &WeightedGraphMatrix, n: usize) -> DMatrix<f64> {
    w.weights().kronecker(&DMatrix::<f64>::identity(n, n))
}

/// Metropolis–Hastings weights for an undirected graph:
/// `W_ij = 1/(1 + max(d_i, d_j))` on edges, self-weight fills the row.
pub fn metropolis_weights(
    label: impl Into<String>,
    adjacency: &DMatrix<f64>,
) -> Result<WeightedGraphMatrix, NetworkError> {
    let label = label.into();
    let m = adjacency.nrows();
    if m == 0 || adjacency.ncols() != m {
        return Err(NetworkError::InvalidMatrix(format!(
            "{label}: adjacency must be square"
        )));
    }
    for i in 0..m {
        for j in 0..m {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(NetworkError::InvalidMatrix(format!(
                    "{label}: adjacency entry ({i},{j}) = {a} is not 0/1"
                )));
            }
            if a != adjacency[(j, i)] {
                return Err(NetworkError::InvalidMatrix(format!(
                    "{label}: adjacency is not symmetric at ({i},{j})"
                )));
            }
        }
        if adjacency[(i, i)] != 0.0 {
            return Err(NetworkError::InvalidMatrix(format!("{label}: self-loop at node {i}")));
        }
    }
    let degree: Vec<f64> = (0..m).map(|i| adjacency.row(i).sum()).collect();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if adjacency[(i, j)] == 1.0 {
                w[(i, j)] = 1.0 / (1.0 + degree[i].max(degree[j]));
            }
        }
        w[(i, i)] = 1.0 - w.row(i).sum();
    }
    WeightedGraphMatrix::new(label, w)
}

/// How the realization sequence `{ω*(t)}` is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkModel {
    Iid {
        probabilities: Vec<f64>,
    },
    Markov {
        transition: DMatrix<f64>,
        initial: Vec<f64>,
    },
    /// Deterministic periodic schedule (B-connected when the union over one
    /// period is strongly connected).
    Cycle {
        order: Vec<usize>,
    },
    /// One pair wakes up per step; the universe holds one gossip matrix per
    /// pair, plus an idle identity when the probabilities sum below one.
    Gossip {
        pairs: Vec<(usize, usize)>,
        probabilities: Vec<f64>,
    },
}

impl NetworkModel {
    pub fn family(&self) -> &'static str {
        match self {
            NetworkModel::Iid { .. } => "iid",
            NetworkModel::Markov { .. } => "markov",
            NetworkModel::Cycle { .. } => "b_connected_cycle",
            NetworkModel::Gossip { .. } => "gossip",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub family: &'static str,
    pub reason: String,
    /// Universe indices that recur with positive probability.
    pub support: Vec<usize>,
    pub warnings: Vec<String>,
    /// Connectivity of the recurring support, when it is a strict subset.
    pub support_a2: Option<A2Report>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum A3Verdict {
    Certified(Certificate),
    Rejected { family: &'static str, reason: String },
}

impl A3Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, A3Verdict::Certified(_))
    }
}

/// A seeded generator of realization sequences over a [`GraphUniverse`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkProcess {
    universe: GraphUniverse,
    model: NetworkModel,
    seed: u64,
}

fn check_distribution(p: &[f64], what: &str, exact_sum: bool) -> Result<(), NetworkError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(NetworkError::InvalidProcess(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (exact_sum && (s - 1.0).abs() > STATIONARY_TOL) || (!exact_sum && s > 1.0 + STATIONARY_TOL) {
        return Err(NetworkError::InvalidProcess(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl NetworkProcess {
    pub fn iid(universe: GraphUniverse, probabilities: Vec<f64>, seed: u64) -> Result<Self, NetworkError> {
        if probabilities.len() != universe.len() {
            return Err(NetworkError::InvalidProcess(format!(
                "{} probabilities for {} graphs",
                probabilities.len(),
                universe.len()
            )));
        }
        check_distribution(&probabilities, "iid probabilities", true)?;
        Ok(NetworkProcess {
            universe,
            model: NetworkModel::Iid { probabilities },
            seed,
        })
    }

    pub fn uniform(universe: GraphUniverse, seed: u64) -> Self {
        let k = universe.len();
        NetworkProcess {
            universe,
            model: NetworkModel::Iid {
                probabilities: vec![1.0 / k as f64; k],
            },
            seed,
        }
    }

    /// Stationarity of `initial` is not required here; [`Self::certify_a3`]
    /// rejects chains that do not start from their stationary distribution.
    pub fn markov(
        universe: GraphUniverse,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let k = universe.len();
        if transition.nrows() != k || transition.ncols() != k || initial.len() != k {
            return Err(NetworkError::InvalidProcess(format!(
                "markov chain over {k} graphs needs a {k}x{k} transition matrix and {k} initial probabilities"
            )));
        }
        for i in 0..k {
            let row: Vec<f64> = transition.row(i).iter().copied().collect();
            check_distribution(&row, &format!("transition row {i}"), true)?;
        }
        check_distribution(&initial, "initial distribution", true)?;
        Ok(NetworkProcess {
            universe,
            model: NetworkModel::Markov { transition, initial },
            seed,
        })
    }

    pub fn cycle(universe: GraphUniverse, order: Vec<usize>, seed: u64) -> Result<Self, NetworkError> {
        if order.is_empty() {
            return Err(NetworkError::InvalidProcess("cycle order is empty".into()));
        }
        if let Some(&bad) = order.iter().find(|&&i| i >= universe.len()) {
            return Err(NetworkError::InvalidProcess(format!(
                "cycle index {bad} is out of range"
            )));
        }
        Ok(NetworkProcess {
            universe,
            model: NetworkModel::Cycle { order },
            seed,
        })
    }

    pub fn gossip(
        m: usize,
        pairs: Vec<(usize, usize)>,
        probabilities: Vec<f64>,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        if pairs.is_empty() || pairs.len() != probabilities.len() {
            return Err(NetworkError::InvalidProcess(format!(
                "{} gossip pairs with {} probabilities",
                pairs.len(),
                probabilities.len()
            )));
        }
        check_distribution(&probabilities, "gossip probabilities", false)?;
        let mut graphs = pairs
            .iter()
            .map(|&(i, j)| WeightedGraphMatrix::gossip(m, i, j))
            .collect::<Result<Vec<_>, _>>()?;
        if 1.0 - probabilities.iter().sum::<f64>() > 1e-12 {
            graphs.push(WeightedGraphMatrix::identity(m));
        }
        Ok(NetworkProcess {
            universe: GraphUniverse::new(graphs)?,
            model: NetworkModel::Gossip { pairs, probabilities },
            seed,
        })
    }

    pub fn universe(&self) -> &GraphUniverse {
        &self.universe
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NetworkProcess { seed, ..self.clone() }
    }

    /// Probability of each universe member per step (sampling weights).
    fn step_weights(&self) -> Vec<f64> {
        match &self.model {
            NetworkModel::Iid { probabilities } => probabilities.clone(),
            NetworkModel::Gossip { probabilities, .. } => {
                let mut w = probabilities.clone();
                if self.universe.len() > probabilities.len() {
                    w.push((1.0 - probabilities.iter().sum::<f64>()).max(0.0));
                }
                w
            }
            NetworkModel::Markov { initial, .. } => initial.clone(),
            NetworkModel::Cycle { order } => {
                let mut w = vec![0.0; self.universe.len()];
                for &i in order {
                    w[i] += 1.0 / order.len() as f64;
                }
                w
            }
        }
    }

    /// Universe indices that occur with positive long-run frequency.
    pub fn support(&self) -> Vec<usize> {
        let weights = match &self.model {
            NetworkModel::Markov { transition, .. } => stationary_distribution(transition)
                .map(|p| p.iter().copied().collect())
                .unwrap_or_else(|| self.step_weights()),
            _ => self.step_weights(),
        };
        weights
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// A3 certification by distribution family.
    pub fn certify_a3(&self) -> A3Verdict {
        let family = self.model.family();
        let reject = |reason: String| A3Verdict::Rejected { family, reason };
        let reason = match &self.model {
            NetworkModel::Iid { .. } => {
                "independent draws with constant positive probability recur infinitely often".to_string()
            }
            NetworkModel::Markov { transition, initial } => {
                if !is_irreducible(transition) {
                    return reject("transition matrix is not irreducible".into());
                }
                let Some(pi) = stationary_distribution(transition) else {
                    return reject("stationary distribution could not be computed".into());
                };
                let dev = pi.iter().zip(initial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if dev > STATIONARY_TOL {
                    return reject(format!(
                        "initial distribution {initial:?} is not the stationary distribution {:?} (max deviation {dev:e})",
                        pi.as_slice()
                    ));
                }
                "irreducible chain started from its stationary distribution is ergodic and stationary".to_string()
            }
            NetworkModel::Cycle { order } => {
                format!("periodic schedule with period B = {}", order.len())
            }
            NetworkModel::Gossip { pairs, probabilities } => {
                if let Some(k) = probabilities.iter().position(|&p| p <= 0.0) {
                    return reject(format!("gossip pair {:?} has zero activation probability", pairs[k]));
                }
                "every gossip pair activates independently with positive probability".to_string()
            }
        };

        let support = self.support();
        let mut warnings = Vec::new();
        let mut support_a2 = None;
        let distinct: BTreeSet<usize> = support.iter().copied().collect();
        if distinct.len() < self.universe.len() {
            let excluded: Vec<&str> = (0..self.universe.len())
                .filter(|i| !distinct.contains(i))
                .map(|i| self.universe.get(i).label())
                .collect();
            warnings.push(format!("effective union excludes zero-probability graphs {excluded:?}"));
            match self.universe.restrict(&support).and_then(|u| validate_a2(&u)) {
                Ok(report) => {
                    if !report.ok {
                        warnings.push("union of the recurring support is not strongly connected".into());
                    }
                    support_a2 = Some(report);
                }
                Err(e) => warnings.push(format!("support connectivity check failed: {e}")),
            }
        }
        A3Verdict::Certified(Certificate {
            family,
            reason,
            support,
            warnings,
            support_a2,
        })
    }

    /// An independent stream of universe indices starting at t = 0.
    pub fn stream(&self) -> RealizationStream<'_> {
        let rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sampler = match &self.model {
            NetworkModel::Cycle { .. } => Sampler::Cycle,
            NetworkModel::Markov { transition, initial } => Sampler::Markov {
                initial: WeightedIndex::new(initial).ok(),
                rows: (0..transition.nrows())
                    .map(|i| WeightedIndex::new(transition.row(i).iter().copied()).ok())
                    .collect(),
                state: None,
            },
            _ => Sampler::Categorical(WeightedIndex::new(self.step_weights()).ok()),
        };
        RealizationStream {
            process: self,
            rng,
            sampler,
            t: 0,
        }
    }

    /// The first `horizon` realizations, reproducible from the seed.
    pub fn sample_sequence(&self, horizon: usize) -> Vec<usize> {
        self.stream().take(horizon).collect()
    }
}

#[derive(Debug)]
enum Sampler {
    Categorical(Option<WeightedIndex<f64>>),
    Markov {
        initial: Option<WeightedIndex<f64>>,
        rows: Vec<Option<WeightedIndex<f64>>>,
        state: Option<usize>,
    },
    Cycle,
}

#[derive(Debug)]
pub struct RealizationStream<'a> {
    process: &'a NetworkProcess,
    rng: ChaCha8Rng,
    sampler: Sampler,
    t: usize,
}

impl Iterator for RealizationStream<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let idx = match &mut self.sampler {
            Sampler::Cycle => match &self.process.model {
                NetworkModel::Cycle { order } => order[self.t % order.len()],
                _ => unreachable!(),
            },
            Sampler::Categorical(dist) => dist.as_ref()?.sample(&mut self.rng),
            Sampler::Markov { initial, rows, state } => {
                let next = match *state {
                    None => initial.as_ref()?.sample(&mut self.rng),
                    Some(s) => rows[s].as_ref()?.sample(&mut self.rng),
                };
                *state = Some(next);
                next
            }
        };
        self.t += 1;
        Some(idx)
    }
}

/// Solves `πP = π`, `Σπ = 1`. Returns `None` when the system is singular
/// (reducible chains with several closed classes).
pub fn stationary_distribution(transition: &DMatrix<f64>) -> Option<DVector<f64>> {
    let k = transition.nrows();
    let mut a = transition.transpose() - DMatrix::<f64>::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = a.lu().solve(&b)?;
    pi.iter().all(|v| v.is_finite()).then_some(pi)
}

/// Strong connectivity of the directed graph `i → j` whenever `P_ij > 0`.
pub fn is_irreducible(transition: &DMatrix<f64>) -> bool {
    let k = transition.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..k {
                let p = if forward {
                    transition[(u, v)]
                } else {
                    transition[(v, u)]
                };
                if p > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    k > 0 && reach(true) && reach(false)
}

/// JSON form of a graph universe. Each graph gives either explicit `weights`
/// or an undirected `adjacency` expanded with Metropolis weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    pub m: usize,
    pub graphs: Vec<GraphSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(format!("{what}: row {i} has {} entries, expected {ncols}", r.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl UniverseSpec {
    pub fn build(&self) -> Result<GraphUniverse, NetworkError> {
        let graphs = self
            .graphs
            .iter()
            .map(|g| {
                let w = match (&g.weights, &g.adjacency) {
                    (Some(w), None) => {
                        let mat = rows_to_matrix(w, &g.label).map_err(NetworkError::InvalidMatrix)?;
                        WeightedGraphMatrix::new(g.label.clone(), mat)?
                    }
                    (None, Some(adj)) => {
                        let rows: Vec<Vec<f64>> = adj.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
                        let mat = rows_to_matrix(&rows, &g.label).map_err(NetworkError::InvalidMatrix)?;
                        metropolis_weights(g.label.clone(), &mat)?
                    }
                    _ => {
                        return Err(NetworkError::InvalidUniverse(format!(
                            "graph {} must give exactly one of weights/adjacency",
                            g.label
                        )))
                    }
                };
                if w.m() != self.m {
                    return Err(NetworkError::InvalidUniverse(format!(
                        "graph {} is {}x{} but m = {}",
                        g.label,
                        w.m(),
                        w.m(),
                        self.m
                    )));
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>, _>>()?;
        GraphUniverse::new(graphs)
    }
}
