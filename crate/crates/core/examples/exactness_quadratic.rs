//! With exact gradients and a constant stepsize CEDAS converges to the
//! optimum of a heterogeneous quadratic, while DSGD stops at a biased point.

use std::sync::Arc;

use cedas::algo::{run, Algorithm, RunConfig, StepSchedule};
use cedas::objective::{Batch, Problem, ProblemKind, ProblemParams};
use cedas::topology::{Graph, GraphKind, MixingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = Arc::new(Problem::synthesize(ProblemParams {
        kind: ProblemKind::Quadratic,
        n: 16,
        p: 10,
        samples_per_agent: 20,
        heterogeneity: 1.0,
        rho: 0.1,
        noise_sigma: 0.0,
        seed: 1,
    })?);
    let w = Arc::new(MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, 16)?));
    for algorithm in [Algorithm::Cedas, Algorithm::Dsgd] {
        let mut cfg = RunConfig::new(algorithm, problem.clone(), w.clone(), StepSchedule::Constant { eta: 0.05 }, 5000);
        cfg.batch = Batch::Full;
        let trace = run(&cfg)?;
        for k in [0, 500, 1000, 2000, 5000] {
            println!("{:<6} k={k:<5} residual {:.3e}", algorithm.name(), trace.records[k].residual.unwrap());
        }
    }
    Ok(())
}
