//! Iteration engines: CEDAS, LEAD, Choco-SGD, DSGD, EDAS and centralized SGD.
//!
//! Every engine advances an [`AlgoState`] by one synchronous round. A round
//! has two phases. First each agent draws its stochastic gradient and forms
//! its outgoing message. Then messages are mixed and states updated. All
//! randomness comes from [`crate::rng::stream`] keyed by
//! `(seed, agent, iteration, purpose)`, so phase 1 may run on any number of
//! worker threads without changing the result.

mod baselines;
mod cedas;
mod oracle;
mod run;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{CompressError, Compressor};
use crate::objective::{Batch, Problem};
use crate::topology::MixingMatrix;

pub use baselines::{centralized_sgd_step, choco_sgd_step, dsgd_step};
pub use cedas::{cedas_init, cedas_step, comm, comm_finish, edas_step, lead_init, lead_step, CommOutput};
pub use oracle::{cedas_matrix_step, MatrixStep};
pub use run::{run, run_repetitions, run_with_threads, RunOutput};

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("invalid run configuration: {0}")]
    ConfigInvalid(String),
    #[error("LEAD divides by the stepsize and needs a constant schedule")]
    RequiresConstantStep,
    #[error("agent {agent} has no message from neighbor {neighbor}")]
    MissingNeighborMessage { agent: usize, neighbor: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite iterate at iteration {iteration}")]
    DivergenceDetected { iteration: i64 },
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Objective(#[from] crate::objective::ObjectiveError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, AlgoError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cedas,
    Lead,
    ChocoSgd,
    Dsgd,
    Edas,
    Centralized,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Cedas,
        Algorithm::Lead,
        Algorithm::ChocoSgd,
        Algorithm::Dsgd,
        Algorithm::Edas,
        Algorithm::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cedas => "cedas",
            Algorithm::Lead => "lead",
            Algorithm::ChocoSgd => "choco_sgd",
            Algorithm::Dsgd => "dsgd",
            Algorithm::Edas => "edas",
            Algorithm::Centralized => "centralized",
        }
    }

    /// Whether the engine keeps a compression reference `H`.
    pub fn tracks_reference(self) -> bool {
        matches!(self, Algorithm::Cedas | Algorithm::Lead | Algorithm::Edas)
    }

    /// Whether the engine sends compressed messages from the configured compressor.
    pub fn uses_compressor(self) -> bool {
        matches!(self, Algorithm::Cedas | Algorithm::Lead | Algorithm::ChocoSgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| AlgoError::ConfigInvalid(format!("unknown algorithm `{s}`")))
    }
}

/// Stepsize rule `η_k`, defined for `k ≥ -1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `θ / (μ (k + m))`
    ThetaOverMu { theta: f64, mu: f64, m: f64 },
    /// `c0 / (k + c1)`
    Harmonic { c0: f64, c1: f64 },
}

impl StepSchedule {
    pub fn at(&self, k: i64) -> f64 {
        let k = k as f64;
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::ThetaOverMu { theta, mu, m } => theta / (mu * (k + m)),
            StepSchedule::Harmonic { c0, c1 } => c0 / (k + c1),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, StepSchedule::Constant { .. })
    }

    /// Stepsizes must be positive from `k = -1` on.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            StepSchedule::ThetaOverMu { theta, mu, m } => theta > 0.0 && mu > 0.0 && m > 1.0,
            StepSchedule::Harmonic { c0, c1 } => c0 > 0.0 && c1 > 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(AlgoError::ConfigInvalid(format!("schedule {self:?} is not positive for k ≥ -1")))
        }
    }
}

/// Stepsize `η_k` of a schedule.
pub fn stepsize(schedule: &StepSchedule, k: i64) -> f64 {
    schedule.at(k)
}

/// How transmitted bits are charged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitConvention {
    /// Each agent's message is charged once per round.
    #[default]
    Broadcast,
    /// Each agent's message is charged once per neighbor.
    PerEdge,
}

/// Dense row-major `n × p` stack of per-agent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Stack {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Stack { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == p), "ragged rows");
        Stack { rows: n, cols: p, data: rows.into_iter().flatten().collect() }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        Stack { rows, cols, data: (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)])).collect() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Average row `x̄`.
    pub fn mean_row(&self) -> Vec<f64> {
        let inv = 1.0 / self.rows as f64;
        self.column_sums().into_iter().map(|s| s * inv).collect()
    }

    /// `W · self` using the sparse rows of `w`.
    pub fn mixed(&self, w: &MixingMatrix) -> Stack {
        let mut out = Stack::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * self.cols..(i + 1) * self.cols];
            for &(j, wij) in w.row(i) {
                for (d, v) in dst.iter_mut().zip(&self.data[j * self.cols..(j + 1) * self.cols]) {
                    *d += wij * v;
                }
            }
        }
        out
    }

    pub fn frobenius_dist_sq(&self, other: &Stack) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn max_abs_diff(&self, other: &Stack) -> f64 {
        crate::vecops::max_abs_diff(&self.data, &other.data)
    }
}

/// Network state between rounds.
///
/// `d` holds the correction `d_i` for CEDAS/EDAS, the dual `a_i` for LEAD
/// and the public replicas `x̂_i` for Choco-SGD. `h` and `hw` are the
/// compression references `h_i` and `(h_w)_i = Σ_j w_ij h_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgoState {
    pub x: Stack,
    pub h: Stack,
    pub hw: Stack,
    pub d: Stack,
    /// Index of the iterate held in `x`.
    pub k: i64,
}

impl AlgoState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.h.is_finite() && self.hw.is_finite() && self.d.is_finite()
    }
}

/// What one round produced, beyond the new state.
#[derive(Clone, Debug)]
pub struct StepInfo {
    /// Stepsize used for the round.
    pub eta: f64,
    /// Stochastic gradients `G_k` drawn in the round, one row per agent.
    pub grads: Stack,
    /// Mean bits sent per agent in the round.
    pub bits_per_agent: f64,
    /// `‖Y_k − H_k‖²_F` for engines with a compression reference.
    pub compression_err: Option<f64>,
}

/// Optional per-agent starting values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InitialValues {
    /// `x_{i,-1}`; zeros when absent.
    pub x: Option<Stack>,
    /// `h_{i,0}`; equal to `x_{i,-1}` when absent.
    pub h: Option<Stack>,
    /// LEAD's `z_i` for `a_{i,0} = z_i − Σ_j w_ij z_j`; zeros when absent.
    pub lead_z: Option<Stack>,
}

/// Fully resolved run description.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub problem: Arc<Problem>,
    pub mixing: Arc<MixingMatrix>,
    pub compressor: Compressor,
    pub alpha: f64,
    pub gamma: f64,
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub batch: Batch,
    pub seed: u64,
    pub repetitions: usize,
    pub bits: BitConvention,
    pub init: InitialValues,
    /// Record `‖∇f(x̄)‖²` every iteration; defaults to on for nonconvex problems.
    pub track_grad_norm: bool,
    /// Label written into trace metadata.
    pub config_hash: String,
}

impl RunConfig {
    /// Config with defaults for everything beyond the required pieces:
    /// identity compression, α = 1, γ = 1/2, batch 1, one repetition.
    pub fn new(
        algorithm: Algorithm,
        problem: Arc<Problem>,
        mixing: Arc<MixingMatrix>,
        schedule: StepSchedule,
        iterations: usize,
    ) -> Self {
        let compressor = Compressor::identity(problem.p()).expect("problem dimension is positive");
        let track_grad_norm = !problem.kind().is_strongly_convex();
        RunConfig {
            algorithm,
            problem,
            mixing,
            compressor,
            alpha: 1.0,
            gamma: 0.5,
            schedule,
            iterations,
            batch: Batch::default(),
            seed: 0,
            repetitions: 1,
            bits: BitConvention::default(),
            init: InitialValues::default(),
            track_grad_norm,
            config_hash: String::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn p(&self) -> usize {
        self.problem.p()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AlgoError::ConfigInvalid(m));
        let (n, p) = (self.n(), self.p());
        if self.mixing.n() != n {
            return bad(format!("mixing matrix has {} nodes, problem has {n} agents", self.mixing.n()));
        }
        if self.compressor.dim() != p {
            return bad(format!("compressor dimension {} != problem dimension {p}", self.compressor.dim()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        match self.algorithm {
            Algorithm::Cedas | Algorithm::Lead | Algorithm::Edas => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
                }
            }
            Algorithm::ChocoSgd => {
                if !(0.0..=1.0).contains(&self.gamma) {
                    return bad(format!("Choco-SGD gamma must lie in [0, 1], got {}", self.gamma));
                }
            }
            _ => {}
        }
        if matches!(self.algorithm, Algorithm::Cedas | Algorithm::Lead) && !self.compressor.is_unbiased() {
            return bad(format!(
                "{} needs an unbiased compressor; compose {} with an unbiased stage",
                self.algorithm,
                self.compressor.name()
            ));
        }
        if self.algorithm == Algorithm::Lead && !self.schedule.is_constant() {
            return Err(AlgoError::RequiresConstantStep);
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        self.schedule.validate()?;
        for (name, stack) in [("x", &self.init.x), ("h", &self.init.h), ("lead_z", &self.init.lead_z)] {
            if let Some(s) = stack {
                if s.rows() != n || s.cols() != p {
                    return Err(AlgoError::ShapeMismatch(format!(
                        "initial {name} is {}×{}, expected {n}×{p}",
                        s.rows(),
                        s.cols()
                    )));
                }
            }
        }
        Ok(())
    }

    /// CEDAS guidance from the convergence theory, `α ≤ 1/(12C)` and
    /// `γ ≤ min{√α / (2√C), 1/2}`. Not enforced.
    pub fn theory_admissible(&self) -> bool {
        match self.compressor.unbiased_constant() {
            Some(c) if c > 0.0 => {
                self.alpha <= 1.0 / (12.0 * c) && self.gamma <= (self.alpha.sqrt() / (2.0 * c.sqrt())).min(0.5)
            }
            Some(_) => self.gamma <= 0.5,
            None => false,
        }
    }
}

/// Initial state for any engine (the `k = -1` local gradient step included).
pub fn init(cfg: &RunConfig) -> Result<(AlgoState, StepInfo)> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::Lead => lead_init(cfg),
        Algorithm::Centralized => baselines::centralized_init(cfg),
        _ => cedas_init(cfg),
    }
}

/// Advances `state` by one round of the configured engine.
pub fn step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    match cfg.algorithm {
        Algorithm::Cedas => cedas_step(state, cfg),
        Algorithm::Edas => edas_step(state, cfg),
        Algorithm::Lead => lead_step(state, cfg),
        Algorithm::ChocoSgd => choco_sgd_step(state, cfg),
        Algorithm::Dsgd => dsgd_step(state, cfg),
        Algorithm::Centralized => centralized_sgd_step(state, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let theta = StepSchedule::ThetaOverMu { theta: 19.0, mu: 0.2, m: 100.0 };
        assert!((theta.at(0) - 0.95).abs() < 1e-15);
        let harmonic = StepSchedule::Harmonic { c0: 5.0, c1: 100.0 };
        assert_eq!(harmonic.at(0), 0.05);
        assert_eq!(harmonic.at(-1), 5.0 / 99.0);
        assert_eq!(StepSchedule::Constant { eta: 0.1 }.at(-1), 0.1);
        for s in [theta, harmonic] {
            let mut prev = f64::INFINITY;
            for k in (0..=100_000).step_by(7) {
                let eta = s.at(k);
                assert!(eta > 0.0 && eta <= prev);
                prev = eta;
            }
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::Harmonic { c0: 5.0, c1: 1.0 }.validate().is_err());
        assert!(StepSchedule::Constant { eta: 0.0 }.validate().is_err());
        assert!(StepSchedule::ThetaOverMu { theta: 1.0, mu: 0.2, m: 100.0 }.validate().is_ok());
    }

    #[test]
    fn stack_helpers() {
        let s = Stack::from_rows(vec![vec![1.0, 2.0], vec![3.0, 6.0]]);
        assert_eq!(s.column_sums(), vec![4.0, 8.0]);
        assert_eq!(s.mean_row(), vec![2.0, 4.0]);
        assert_eq!(Stack::from_matrix(&s.to_matrix()), s);
        assert_eq!(s.iter_rows().count(), 2);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
    }
}
