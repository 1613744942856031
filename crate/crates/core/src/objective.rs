//! Synthetic per-agent objectives with exact and stochastic gradient oracles.
//!
//! Three families are available:
//!
//! * `quadratic`: `f_i(x) = (1/m) Σ_j ½(a_jᵀx − b_j)² + (ρ/2)‖x‖²`;
//! * `logistic`: `f_i(x) = (1/m) Σ_j log(1 + exp(−v_j u_jᵀx)) + (ρ/2)‖x‖²`;
//! * `nonconvex_logistic`: the logistic loss with `ρ Σ_d x_d²/(1 + x_d²)` as
//!   regularizer, smooth and bounded below but not convex.
//!
//! The global objective is the average `f = (1/n) Σ_i f_i`.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};
use crate::vecops::{axpy, dot, norm_sq};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid problem parameters: {0}")]
    BadParams(String),
    #[error("no closed-form or convex reference optimum for a nonconvex problem")]
    NotStronglyConvex,
    #[error("reference solver stopped at gradient norm {0:e} after {1} iterations")]
    SolverStalled(f64, usize),
    #[error("problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("problem file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    NonconvexLogistic,
}

impl ProblemKind {
    pub fn is_strongly_convex(self) -> bool {
        !matches!(self, ProblemKind::NonconvexLogistic)
    }
}

/// Generator settings. Together with the seed they determine the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub kind: ProblemKind,
    pub n: usize,
    pub p: usize,
    pub samples_per_agent: usize,
    /// Data skew across agents in `[0, 1]`; 0 draws every agent from one distribution.
    #[serde(default)]
    pub heterogeneity: f64,
    pub rho: f64,
    /// Standard deviation of additive Gaussian noise on minibatch gradients,
    /// spread so that `E‖noise‖² = noise_sigma²`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ObjectiveError::BadParams(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.p == 0 {
            return bad("p must be at least 1");
        }
        if self.samples_per_agent == 0 {
            return bad("samples_per_agent must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return bad("heterogeneity must lie in [0, 1]");
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and nonnegative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and nonnegative");
        }
        if self.kind == ProblemKind::Quadratic && self.rho == 0.0 && self.samples_per_agent * self.n < self.p {
            return bad("quadratic problem without regularization needs n·m ≥ p samples");
        }
        Ok(())
    }
}

/// Local dataset of one agent: `m` rows of features and one target per row.
/// Quadratic targets are real, logistic targets are `±1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentData {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl AgentData {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Minimizer of the global objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Minibatch rule for stochastic gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    /// Exact local gradient, zero variance.
    Full,
    /// `b` samples drawn uniformly with replacement.
    #[serde(untagged)]
    Size(usize),
}

impl Default for Batch {
    fn default() -> Self {
        Batch::Size(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub agent: usize,
    pub gradient: Vec<f64>,
    /// Sample indices used; empty for a full-batch gradient.
    pub batch: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Problem {
    pub params: ProblemParams,
    pub agents: Vec<AgentData>,
    #[serde(skip)]
    optimum: OnceLock<Optimum>,
}

impl Clone for Problem {
    fn clone(&self) -> Self {
        Problem { params: self.params.clone(), agents: self.agents.clone(), optimum: self.optimum.clone() }
    }
}

impl PartialEq for Problem {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.agents == other.agents
    }
}

fn gaussian_vec<R: Rng + ?Sized>(p: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>()
}

/// Numerically stable `log(1 + exp(-z))`.
fn softplus_neg(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically stable `1 / (1 + exp(z))`.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl Problem {
    /// Generates per-agent data deterministically from `params.seed`.
    pub fn synthesize(params: ProblemParams) -> Result<Self> {
        params.validate()?;
        let (n, p, m, h) = (params.n, params.p, params.samples_per_agent, params.heterogeneity);
        let mut global = stream(params.seed, usize::MAX, 0, Purpose::Problem);
        let agents = match params.kind {
            ProblemKind::Quadratic => {
                let planted = gaussian_vec(p, 1.0, &mut global);
                (0..n)
                    .map(|i| {
                        let mut rng = stream(params.seed, i, 0, Purpose::Problem);
                        let shift = gaussian_vec(p, h, &mut rng);
                        let local = gaussian_vec(p, h, &mut rng);
                        let target_model: Vec<f64> = planted.iter().zip(&local).map(|(a, b)| a + b).collect();
                        let mut features = Vec::with_capacity(m);
                        let mut targets = Vec::with_capacity(m);
                        for _ in 0..m {
                            let mut a = gaussian_vec(p, 1.0, &mut rng);
                            axpy(1.0, &shift, &mut a);
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            targets.push(dot(&a, &target_model) + 0.1 * noise);
                            features.push(a);
                        }
                        AgentData { features, targets }
                    })
                    .collect()
            }
            ProblemKind::Logistic | ProblemKind::NonconvexLogistic => {
                let planted = gaussian_vec(p, 3.0 / (p as f64).sqrt(), &mut global);
                let inv_sqrt_p = 1.0 / (p as f64).sqrt();
                (0..n)
                    .map(|i| {
                        let mut rng = stream(params.seed, i, 0, Purpose::Problem);
                        let rotation = PlaneRotation::random(p, h, &mut rng);
                        let shift = gaussian_vec(p, 0.5 * h, &mut rng);
                        let mut features = Vec::with_capacity(m);
                        let mut targets = Vec::with_capacity(m);
                        for _ in 0..m {
                            let z = gaussian_vec(p, 1.0, &mut rng);
                            let prob_pos = sigmoid_neg(-dot(&planted, &z));
                            let label = if rng.random::<f64>() < prob_pos { 1.0 } else { -1.0 };
                            let mut u = rotation.apply(&z);
                            axpy(1.0, &shift, &mut u);
                            // unit-scale rows keep L = O(1) independent of p
                            features.push(u.into_iter().map(|v| v * inv_sqrt_p).collect());
                            targets.push(label);
                        }
                        AgentData { features, targets }
                    })
                    .collect()
            }
        };
        Ok(Problem { params, agents, optimum: OnceLock::new() })
    }

    /// Problem from explicit data; checks shapes.
    pub fn from_data(params: ProblemParams, agents: Vec<AgentData>) -> Result<Self> {
        params.validate()?;
        if agents.len() != params.n {
            return Err(ObjectiveError::BadParams(format!("{} agents for n = {}", agents.len(), params.n)));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.is_empty() || a.features.len() != a.targets.len() {
                return Err(ObjectiveError::BadParams(format!("agent {i} has inconsistent data")));
            }
            if a.features.iter().any(|row| row.len() != params.p) {
                return Err(ObjectiveError::BadParams(format!("agent {i} has rows of wrong dimension")));
            }
        }
        Ok(Problem { params, agents, optimum: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn p(&self) -> usize {
        self.params.p
    }

    pub fn kind(&self) -> ProblemKind {
        self.params.kind
    }

    fn sample_loss(&self, u: &[f64], target: f64, x: &[f64]) -> f64 {
        match self.params.kind {
            ProblemKind::Quadratic => 0.5 * (dot(u, x) - target).powi(2),
            _ => softplus_neg(target * dot(u, x)),
        }
    }

    /// `out += scale · ∇ℓ_j(x)` for one data sample.
    fn add_sample_grad(&self, u: &[f64], target: f64, x: &[f64], scale: f64, out: &mut [f64]) {
        let coef = match self.params.kind {
            ProblemKind::Quadratic => dot(u, x) - target,
            _ => -target * sigmoid_neg(target * dot(u, x)),
        };
        axpy(scale * coef, u, out);
    }

    fn regularizer(&self, x: &[f64]) -> f64 {
        let rho = self.params.rho;
        match self.params.kind {
            ProblemKind::NonconvexLogistic => rho * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>(),
            _ => 0.5 * rho * norm_sq(x),
        }
    }

    fn add_regularizer_grad(&self, x: &[f64], out: &mut [f64]) {
        let rho = self.params.rho;
        match self.params.kind {
            ProblemKind::NonconvexLogistic => {
                for (o, &v) in out.iter_mut().zip(x) {
                    let d = 1.0 + v * v;
                    *o += rho * 2.0 * v / (d * d);
                }
            }
            _ => axpy(rho, x, out),
        }
    }

    /// Local objective `f_i(x)`.
    pub fn local_loss(&self, agent: usize, x: &[f64]) -> f64 {
        let data = &self.agents[agent];
        let sum: f64 = data.features.iter().zip(&data.targets).map(|(u, &t)| self.sample_loss(u, t, x)).sum();
        sum / data.len() as f64 + self.regularizer(x)
    }

    /// Global objective `f(x) = (1/n) Σ_i f_i(x)`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.local_loss(i, x)).sum::<f64>() / self.n() as f64
    }

    /// Exact `∇f_i(x)`.
    pub fn grad(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        let data = &self.agents[agent];
        let mut g = vec![0.0; self.p()];
        let scale = 1.0 / data.len() as f64;
        for (u, &t) in data.features.iter().zip(&data.targets) {
            self.add_sample_grad(u, t, x, scale, &mut g);
        }
        self.add_regularizer_grad(x, &mut g);
        g
    }

    /// Exact `∇f(x)` of the average objective.
    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.p()];
        for i in 0..self.n() {
            axpy(1.0, &self.grad(i, x), &mut g);
        }
        let inv = 1.0 / self.n() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    /// Unbiased estimate of `∇f_i(x)`.
    pub fn stochastic_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], batch: Batch, rng: &mut R) -> GradSample {
        let size = match batch {
            Batch::Full => return GradSample { agent, gradient: self.grad(agent, x), batch: Vec::new() },
            Batch::Size(b) => b.max(1),
        };
        let data = &self.agents[agent];
        let picks: Vec<usize> = (0..size).map(|_| rng.random_range(0..data.len())).collect();
        let mut g = vec![0.0; self.p()];
        let scale = 1.0 / size as f64;
        for &j in &picks {
            self.add_sample_grad(&data.features[j], data.targets[j], x, scale, &mut g);
        }
        self.add_regularizer_grad(x, &mut g);
        if self.params.noise_sigma > 0.0 {
            let s = self.params.noise_sigma / (self.p() as f64).sqrt();
            for v in &mut g {
                let e: f64 = StandardNormal.sample(rng);
                *v += s * e;
            }
        }
        GradSample { agent, gradient: g, batch: picks }
    }

    /// Hessian `(1/m) A_iᵀA_i + ρI` of a quadratic agent.
    fn quadratic_hessian(&self, agent: usize) -> DMatrix<f64> {
        let data = &self.agents[agent];
        let p = self.p();
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for u in &data.features {
            let col = DVector::from_column_slice(u);
            hess.ger(1.0, &col, &col, 1.0);
        }
        hess /= data.len() as f64;
        for d in 0..p {
            hess[(d, d)] += self.params.rho;
        }
        hess
    }

    /// Upper bound on the Lipschitz constant of every `∇f_i`.
    pub fn smoothness(&self) -> f64 {
        match self.params.kind {
            ProblemKind::Quadratic => (0..self.n())
                .map(|i| SymmetricEigen::new(self.quadratic_hessian(i)).eigenvalues.max())
                .fold(0.0, f64::max),
            kind => {
                let max_sq = self.agents.iter().flat_map(|a| a.features.iter()).map(|u| norm_sq(u)).fold(0.0, f64::max);
                let reg = if kind == ProblemKind::NonconvexLogistic { 2.0 } else { 1.0 };
                max_sq / 4.0 + reg * self.params.rho
            }
        }
    }

    /// Strong-convexity modulus of the average objective, if any.
    pub fn strong_convexity(&self) -> Option<f64> {
        match self.params.kind {
            ProblemKind::Quadratic => {
                let hess = self.average_quadratic_hessian();
                Some(SymmetricEigen::new(hess).eigenvalues.min())
            }
            ProblemKind::Logistic => (self.params.rho > 0.0).then_some(self.params.rho),
            ProblemKind::NonconvexLogistic => None,
        }
    }

    fn average_quadratic_hessian(&self) -> DMatrix<f64> {
        let mut hess = DMatrix::<f64>::zeros(self.p(), self.p());
        for i in 0..self.n() {
            hess += self.quadratic_hessian(i);
        }
        hess / self.n() as f64
    }

    /// Minimizer of the average objective, computed once and cached.
    pub fn reference_optimum(&self) -> Result<&Optimum> {
        if let Some(opt) = self.optimum.get() {
            return Ok(opt);
        }
        let x = match self.params.kind {
            ProblemKind::Quadratic => self.quadratic_optimum()?,
            ProblemKind::Logistic => {
                if self.params.rho <= 0.0 {
                    return Err(ObjectiveError::NotStronglyConvex);
                }
                self.descend_to_optimum(1e-12, 1_000_000)?
            }
            ProblemKind::NonconvexLogistic => return Err(ObjectiveError::NotStronglyConvex),
        };
        let value = self.loss(&x);
        Ok(self.optimum.get_or_init(|| Optimum { x, value }))
    }

    fn quadratic_optimum(&self) -> Result<Vec<f64>> {
        let hess = self.average_quadratic_hessian();
        let mut rhs = DVector::<f64>::zeros(self.p());
        for data in &self.agents {
            let scale = 1.0 / (data.len() as f64 * self.n() as f64);
            for (u, &t) in data.features.iter().zip(&data.targets) {
                rhs.axpy(scale * t, &DVector::from_column_slice(u), 1.0);
            }
        }
        let chol = hess
            .cholesky()
            .ok_or_else(|| ObjectiveError::BadParams("average Hessian is not positive definite".into()))?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// Centralized gradient descent with Armijo backtracking, finished with
    /// fixed `1/L` steps once the decrease test drops below roundoff.
    pub fn descend_to_optimum(&self, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let inv_l = 1.0 / self.smoothness();
        let mut x = vec![0.0; self.p()];
        let mut fx = self.loss(&x);
        let mut step = inv_l;
        let mut g = self.full_grad(&x);
        for _ in 0..max_iters {
            let gn = norm_sq(&g);
            if gn.sqrt() <= tol {
                return Ok(x);
            }
            let mut t = step * 2.0;
            let accepted = loop {
                let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
                let fc = self.loss(&cand);
                if fc <= fx - 0.5 * t * gn {
                    break Some((cand, fc));
                }
                t *= 0.5;
                if t < inv_l {
                    break None;
                }
            };
            match accepted {
                Some((cand, fc)) => {
                    x = cand;
                    fx = fc;
                    step = t;
                }
                None => {
                    axpy(-inv_l, &g, &mut x);
                    fx = self.loss(&x);
                    step = inv_l;
                }
            }
            g = self.full_grad(&x);
        }
        Err(ObjectiveError::SolverStalled(norm_sq(&g).sqrt(), max_iters))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let problem: Problem = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_data(problem.params, problem.agents)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Rotation by a random angle inside a random 2-plane; the identity when
/// the angle scale is zero or `p < 2`.
struct PlaneRotation {
    basis: Option<(Vec<f64>, Vec<f64>)>,
    cos: f64,
    sin: f64,
}

impl PlaneRotation {
    fn random<R: Rng + ?Sized>(p: usize, strength: f64, rng: &mut R) -> Self {
        let angle = strength * std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
        let mut e1 = gaussian_vec(p, 1.0, rng);
        let mut e2 = gaussian_vec(p, 1.0, rng);
        if p < 2 || strength == 0.0 {
            return PlaneRotation { basis: None, cos: 1.0, sin: 0.0 };
        }
        let n1 = norm_sq(&e1).sqrt();
        e1.iter_mut().for_each(|v| *v /= n1);
        let proj = dot(&e1, &e2);
        axpy(-proj, &e1, &mut e2);
        let n2 = norm_sq(&e2).sqrt();
        e2.iter_mut().for_each(|v| *v /= n2);
        PlaneRotation { basis: Some((e1, e2)), cos: angle.cos(), sin: angle.sin() }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        if let Some((e1, e2)) = &self.basis {
            let (a, b) = (dot(e1, z), dot(e2, z));
            let (ra, rb) = (self.cos * a - self.sin * b, self.sin * a + self.cos * b);
            axpy(ra - a, e1, &mut out);
            axpy(rb - b, e2, &mut out);
        }
        out
    }
}
