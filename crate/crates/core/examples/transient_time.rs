//! Transient time of CEDAS on a poorly and a well connected graph, measured
//! against centralized SGD on the same problem.

use std::sync::Arc;

use cedas::algo::{run, Algorithm, RunConfig, StepSchedule};
use cedas::compress::Compressor;
use cedas::figures::sweep_mixing;
use cedas::metrics::{transient_time, TransientOptions};
use cedas::objective::{Problem, ProblemKind, ProblemParams};
use cedas::topology::GraphKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20_000);
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
    let schedule = StepSchedule::Harmonic { c0: 5.0, c1: 100.0 };
    let config = |algorithm, kind| -> Result<RunConfig, Box<dyn std::error::Error>> {
        let mut cfg = RunConfig::new(algorithm, problem.clone(), Arc::new(sweep_mixing(kind, n)?), schedule, iters);
        cfg.compressor = Compressor::scaled_rand_k(p, 40)?;
        cfg.alpha = 0.1;
        cfg.gamma = 0.04;
        cfg.seed = 2;
        Ok(cfg)
    };
    let cen = run(&config(Algorithm::Centralized, GraphKind::Grid)?)?;
    println!("centralized final residual {:.3e}", cen.last().unwrap().residual.unwrap());
    for kind in [GraphKind::Grid, GraphKind::Exponential] {
        let cfg = config(Algorithm::Cedas, kind)?;
        let trace = run(&cfg)?;
        let tt = transient_time(&trace, &cen, TransientOptions::default())?;
        println!(
            "{:<12} gap {:.4}  transient {tt}  final residual {:.3e}",
            kind.name(),
            cfg.mixing.spectral_gap(),
            trace.last().unwrap().residual.unwrap()
        );
    }
    Ok(())
}
