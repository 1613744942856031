//! CEDAS against Choco-SGD, DSGD, EDAS and centralized SGD on the same
//! logistic problem and grid network.

use std::sync::Arc;

use cedas::algo::{run, Algorithm, RunConfig, StepSchedule};
use cedas::compress::Compressor;
use cedas::objective::{Problem, ProblemKind, ProblemParams};
use cedas::topology::{Graph, GraphKind, MixingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, p) = (25, 100);
    let problem = Arc::new(Problem::synthesize(ProblemParams {
        kind: ProblemKind::Logistic,
        n,
        p,
        samples_per_agent: 50,
        heterogeneity: 0.5,
        rho: 0.2,
        noise_sigma: 0.0,
        seed: 1,
    })?);
    let w = Arc::new(MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Grid, n)?));
    let schedule = StepSchedule::Harmonic { c0: 5.0, c1: 100.0 };

    for algorithm in [Algorithm::Cedas, Algorithm::ChocoSgd, Algorithm::Dsgd, Algorithm::Edas, Algorithm::Centralized] {
        let mut cfg = RunConfig::new(algorithm, problem.clone(), w.clone(), schedule, 5000);
        cfg.alpha = 0.1;
        cfg.gamma = 0.04;
        cfg.seed = 3;
        match algorithm {
            Algorithm::Cedas => cfg.compressor = Compressor::scaled_rand_k(p, 40)?,
            // Choco-SGD needs a contractive compressor
            Algorithm::ChocoSgd => cfg.compressor = Compressor::rand_k(p, 40)?,
            _ => {}
        }
        let trace = run(&cfg)?;
        let last = trace.last().unwrap();
        println!(
            "{:<12} residual {:.3e}  consensus {:.3e}  bits/agent {:.2e}",
            algorithm.name(),
            last.residual.unwrap(),
            last.consensus_err,
            last.bits_cum
        );
    }
    Ok(())
}
