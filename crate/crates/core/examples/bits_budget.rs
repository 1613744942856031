//! Residual reached for a fixed number of communicated bits: compressed
//! CEDAS against Choco-SGD and uncompressed EDAS.

use std::sync::Arc;

use cedas::algo::{run, Algorithm, RunConfig, StepSchedule};
use cedas::compress::Compressor;
use cedas::metrics::Trace;
use cedas::objective::{Problem, ProblemKind, ProblemParams};
use cedas::topology::{Graph, GraphKind, MixingMatrix};

fn residual_at_bits(t: &Trace, bits: f64) -> Option<f64> {
    t.records.iter().take_while(|r| r.bits_cum <= bits).last().and_then(|r| r.residual)
}

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
    let mut runs = Vec::new();
    for (algorithm, compressor, iters) in [
        (Algorithm::Cedas, Compressor::scaled_rand_k(p, 40)?, 10_000),
        (Algorithm::ChocoSgd, Compressor::rand_k(p, 40)?, 10_000),
        (Algorithm::Edas, Compressor::identity(p)?, 3_000),
    ] {
        let mut cfg = RunConfig::new(algorithm, problem.clone(), w.clone(), schedule, iters);
        cfg.compressor = compressor;
        cfg.alpha = 0.1;
        cfg.gamma = 0.04;
        println!("{:<10} {:>8} bits per message", algorithm.name(), cfg.compressor.bit_cost());
        runs.push((algorithm, run(&cfg)?));
    }
    let budget = runs.iter().map(|(_, t)| t.last().unwrap().bits_cum).fold(f64::INFINITY, f64::min);
    for frac in [0.1, 0.25, 0.5, 1.0] {
        let b = budget * frac;
        let row: Vec<String> = runs
            .iter()
            .map(|(a, t)| format!("{} {:.3e}", a.name(), residual_at_bits(t, b).unwrap_or(f64::NAN)))
            .collect();
        println!("{b:>10.3e} bits: {}", row.join("  "));
    }
    Ok(())
}
