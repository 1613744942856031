//! Built-in check suite behind `cedas verify`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::algo::{self, Algorithm, AlgoState, InitialValues, RunConfig, Stack, StepSchedule};
use crate::compress::{estimate_contract, Compressor};
use crate::metrics::{measure, MeasureSpec};
use crate::objective::{Batch, Problem, ProblemKind, ProblemParams};
use crate::rng::{stream, Purpose};
use crate::topology::{DegreeCount, Graph, GraphKind, MixingMatrix, TildeMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    fn samples(self) -> usize {
        match self {
            Level::Quick => 10_000,
            Level::Full => 100_000,
        }
    }

    fn iterations(self) -> usize {
        match self {
            Level::Quick => 1_000,
            Level::Full => 10_000,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}`, expected quick or full")),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Extra weight matrix to run through the mixing-matrix checks.
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(f, "{} {:width$}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "{} checks, {} failed", self.checks.len(), self.failures())
    }
}

/// Published spectral gaps: topology, n, degree convention, gap.
pub const CAPTION_GAPS: [(GraphKind, usize, DegreeCount, f64); 4] = [
    (GraphKind::Grid, 100, DegreeCount::Open, 0.013),
    (GraphKind::Exponential, 100, DegreeCount::Closed, 0.133),
    (GraphKind::Grid, 25, DegreeCount::Open, 0.054),
    (GraphKind::Exponential, 25, DegreeCount::Closed, 0.305),
];

pub fn run_checks(level: Level, opts: &VerifyOptions) -> Report {
    let mut report = Report::default();
    let checks = &mut report.checks;
    spectral_checks(checks);
    if let Some(rows) = &opts.weights {
        checks.push(match MixingMatrix::from_rows(rows) {
            Ok(w) => Check::new("supplied W", true, format!("valid, gap {:.4}", w.spectral_gap())),
            Err(e) => Check::new("supplied W", false, e.to_string()),
        });
    }
    compressor_checks(level, checks);
    algorithm_checks(level, checks);
    report
}

fn spectral_checks(checks: &mut Vec<Check>) {
    for (kind, n, degree, gap) in CAPTION_GAPS {
        let name = format!("spectral gap {kind} n={n}");
        match Graph::build(kind, n) {
            Ok(g) => {
                let got = MixingMatrix::lazy_metropolis_with(&g, degree).spectral_gap();
                checks.push(Check::new(name, (got - gap).abs() <= 1e-3, format!("{got:.4} vs {gap}")));
            }
            Err(e) => checks.push(Check::new(name, false, e.to_string())),
        }
    }
    let mut worst_map = 0.0f64;
    let mut min_tilde = f64::INFINITY;
    let mut invalid = Vec::new();
    for w in test_topologies() {
        if let Err(e) = w.validate() {
            invalid.push(e.to_string());
        }
        for gamma in [0.1, 0.5, 0.9] {
            let t = TildeMatrix::new(&w, gamma).expect("gamma in range");
            let mapped = TildeMatrix::mapped_spectrum(&w, gamma);
            for (a, b) in t.eigenvalues().iter().zip(&mapped) {
                worst_map = worst_map.max((a - b).abs());
            }
            min_tilde = min_tilde.min(*t.eigenvalues().last().unwrap());
        }
    }
    checks.push(Check::new("mixing matrices valid", invalid.is_empty(), invalid.join("; ")));
    checks.push(Check::new(
        "damped spectrum map",
        worst_map < 1e-9 && min_tilde > 0.0,
        format!("max deviation {worst_map:.2e}, smallest eigenvalue {min_tilde:.3}"),
    ));
}

fn test_topologies() -> Vec<MixingMatrix> {
    let mut out = Vec::new();
    for kind in [GraphKind::Ring, GraphKind::Path, GraphKind::Complete, GraphKind::Exponential] {
        for n in [2, 8, 16] {
            out.push(MixingMatrix::lazy_metropolis(&Graph::build(kind, n).unwrap()));
        }
    }
    for n in [4, 9, 16] {
        out.push(MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Grid, n).unwrap()));
    }
    out
}

fn compressor_checks(level: Level, checks: &mut Vec<Check>) {
    let samples = level.samples();
    let mut rng = stream(0, 0, 0, Purpose::Estimate);

    let c = Compressor::scaled_rand_k(2, 1).unwrap();
    let est = estimate_contract(&c, &[1.0, 2.0], samples, &mut rng).unwrap();
    checks.push(Check::new(
        "scaled rand-K relative variance",
        (est.snr - 1.0).abs() <= 0.05,
        format!("{:.4} (expected 1) over {samples} draws", est.snr),
    ));

    let (p, k) = (20, 3);
    let top = Compressor::top_k(p, k).unwrap();
    let bound = 1.0 - k as f64 / p as f64;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = top.apply(&x, &mut rng).unwrap();
        let err: f64 = x.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
        worst = worst.max(err / x.iter().map(|v| v * v).sum::<f64>());
    }
    checks.push(Check::new("top-K contraction", worst <= bound, format!("worst {worst:.4} ≤ {bound:.4}")));

    let quant = Compressor::quantize(4, 3).unwrap();
    let grid = [1.0, -0.25, 0.5, 0.0];
    let exact = (0..100).all(|_| quant.apply(&grid, &mut rng).unwrap() == grid);
    checks.push(Check::new("quantizer exact on grid", exact, "levels reproduced"));

    let composed = Compressor::compose(Compressor::top_k(p, 4).unwrap(), Compressor::scaled_rand_k(p, 4).unwrap()).unwrap();
    let x: Vec<f64> = (0..p).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let est = estimate_contract(&composed, &x, samples, &mut rng).unwrap();
    let z_max = est
        .mean
        .iter()
        .zip(&x)
        .zip(&est.std_err)
        .filter(|(_, se)| **se > 0.0)
        .map(|((m, x), se)| (m - x).abs() / se)
        .fold(0.0f64, f64::max);
    let c_decl = composed.unbiased_constant().unwrap();
    let allowed = c_decl * (1.0 + 4.0 / (samples as f64).sqrt());
    checks.push(Check::new(
        "composed operator",
        z_max <= 4.0 && est.snr <= allowed,
        format!("max |z| {z_max:.2}, variance {:.3} ≤ {allowed:.3}", est.snr),
    ));
}

fn test_problem(kind: ProblemKind, n: usize, p: usize) -> Arc<Problem> {
    Arc::new(
        Problem::synthesize(ProblemParams {
            kind,
            n,
            p,
            samples_per_agent: 20,
            heterogeneity: 0.5,
            rho: 0.2,
            noise_sigma: 0.1,
            seed: 11,
        })
        .expect("valid test problem"),
    )
}

fn cedas_config(n: usize, iterations: usize) -> RunConfig {
    let problem = test_problem(ProblemKind::Logistic, n, 10);
    let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, n).unwrap());
    let mut cfg = RunConfig::new(
        Algorithm::Cedas,
        problem,
        Arc::new(w),
        StepSchedule::Harmonic { c0: 5.0, c1: 100.0 },
        iterations,
    );
    cfg.compressor = Compressor::scaled_rand_k(10, 5).unwrap();
    cfg.alpha = 0.3;
    cfg.gamma = 0.1;
    cfg.seed = 5;
    cfg
}

fn algorithm_checks(level: Level, checks: &mut Vec<Check>) {
    checks.push(oracle_check(200));
    checks.push(invariant_check(level.iterations()));
    checks.push(lead_check(100));
}

fn oracle_check(iterations: usize) -> Check {
    let cfg = cedas_config(8, iterations);
    let (mut state, _) = algo::cedas_init(&cfg).unwrap();
    let w = cfg.mixing.matrix().clone();
    let (mut x, mut d, mut h) = (state.x.to_matrix(), state.d.to_matrix(), state.h.to_matrix());
    let mut worst = 0.0f64;
    for _ in 0..iterations {
        let k = state.k;
        let info = algo::cedas_step(&mut state, &cfg).unwrap();
        let next = algo::cedas_matrix_step(&x, &d, &h, info.eta, &w, cfg.gamma, cfg.alpha, &info.grads.to_matrix(), |i, r| {
            Ok(cfg.compressor.apply(r, &mut stream(cfg.seed, i, k, Purpose::Compress))?)
        })
        .unwrap();
        (x, d, h) = (next.x, next.d, next.h);
        worst = worst.max((&x - state.x.to_matrix()).amax()).max((&d - state.d.to_matrix()).amax());
    }
    Check::new("matrix-form equivalence", worst < 1e-10, format!("max deviation {worst:.2e} over {iterations} rounds"))
}

fn invariant_check(iterations: usize) -> Check {
    let cfg = cedas_config(8, iterations);
    let n = cfg.n() as f64;
    let x_star = cfg.problem.reference_optimum().unwrap().x.clone();
    let (mut state, _) = algo::cedas_init(&cfg).unwrap();
    let mut mean = state.x.mean_row();
    let (mut mean_dev, mut colsum, mut hw_dev, mut decomp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..iterations {
        let info = algo::cedas_step(&mut state, &cfg).unwrap();
        for (m, g) in mean.iter_mut().zip(info.grads.column_sums()) {
            *m -= info.eta / n * g;
        }
        mean_dev = mean_dev.max(crate::vecops::max_abs_diff(&mean, &state.x.mean_row()));
        colsum = colsum.max(state.d.column_sums().iter().fold(0.0f64, |a, v| a.max(v.abs())));
        hw_dev = hw_dev.max(state.hw.max_abs_diff(&state.h.mixed(&cfg.mixing)));
        decomp = decomp.max(decomposition_gap(&state, &cfg.problem, &x_star));
    }
    Check::new(
        "mean dynamics and invariants",
        mean_dev < 1e-10 && colsum < 1e-10 * n && hw_dev < 1e-10 && decomp < 1e-10,
        format!("mean {mean_dev:.1e}, 1ᵀD {colsum:.1e}, HW {hw_dev:.1e}, decomposition {decomp:.1e}"),
    )
}

fn decomposition_gap(state: &AlgoState, problem: &Problem, x_star: &[f64]) -> f64 {
    let spec = MeasureSpec { optimum: Some(x_star), residual: true, grad_norm: false };
    let r = measure(&state.x, problem, spec).unwrap();
    (r.residual.unwrap() - r.mean_err.unwrap() - r.consensus_err).abs()
}

fn lead_check(iterations: usize) -> Check {
    let eta = 0.05;
    let mut cedas = cedas_config(8, iterations);
    cedas.schedule = StepSchedule::Constant { eta };
    cedas.batch = Batch::Size(2);
    let mut z = Stack::zeros(8, 10);
    for i in 0..8 {
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            *v = ((i * 10 + j) as f64).sin();
        }
    }
    let mut lead = cedas.clone();
    lead.algorithm = Algorithm::Lead;
    lead.init = InitialValues { lead_z: Some(z), ..InitialValues::default() };
    let (mut ls, _) = algo::init(&lead).unwrap();
    let mut cs = ls.clone();
    for i in 0..8 {
        for v in cs.d.row_mut(i) {
            *v *= eta;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..iterations {
        algo::cedas_step(&mut cs, &cedas).unwrap();
        algo::lead_step(&mut ls, &lead).unwrap();
        worst = worst.max(cs.x.max_abs_diff(&ls.x));
    }
    Check::new("LEAD substitution", worst < 1e-10, format!("max deviation {worst:.2e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let report = run_checks(Level::Quick, &VerifyOptions::default());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corrupted_weights_fail() {
        let rows = vec![vec![0.505, 0.505], vec![0.505, 0.505]];
        let report = run_checks(Level::Quick, &VerifyOptions { weights: Some(rows) });
        let check = report.checks.iter().find(|c| c.name == "supplied W").unwrap();
        assert!(!check.passed);
        assert!(check.detail.contains("1.01"), "{}", check.detail);
    }
}
