//! CEDAS on the nonconvex logistic problem with η = √(n/K): the running
//! average of ‖∇f(x̄)‖² keeps shrinking.

use std::sync::Arc;

use cedas::algo::{run, Algorithm, RunConfig, StepSchedule};
use cedas::compress::Compressor;
use cedas::objective::{Problem, ProblemKind, ProblemParams};
use cedas::topology::{Graph, GraphKind, MixingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, p, iters) = (16, 20, 20_000);
    let problem = Arc::new(Problem::synthesize(ProblemParams {
        kind: ProblemKind::NonconvexLogistic,
        n,
        p,
        samples_per_agent: 50,
        heterogeneity: 0.5,
        rho: 0.2,
        noise_sigma: 0.0,
        seed: 1,
    })?);
    let w = Arc::new(MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, n)?));
    let eta = (n as f64 / iters as f64).sqrt();
    let mut cfg = RunConfig::new(Algorithm::Cedas, problem, w, StepSchedule::Constant { eta }, iters);
    cfg.compressor = Compressor::scaled_rand_k(p, 8)?;
    cfg.alpha = 0.1;
    cfg.gamma = 0.04;
    let trace = run(&cfg)?;
    let mut sum = 0.0;
    for (k, r) in trace.records.iter().enumerate() {
        sum += r.grad_norm_sq.unwrap();
        if k > 0 && (k % (iters / 10) == 0) {
            println!("k={k:<6} running mean ‖∇f(x̄)‖² = {:.4e}", sum / (k + 1) as f64);
        }
    }
    Ok(())
}
