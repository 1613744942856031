//! Driving an engine for `K` rounds and collecting its trace.

use super::{init, step, AlgoError, AlgoState, Result, RunConfig, StepInfo};
use crate::metrics::{aggregate, measure, MeasureSpec, Record, Repetition, Trace, TraceMeta};
use crate::rng::derive_seed;

/// Iterates whose consensus error exceeds this are treated as diverged.
const BLOWUP: f64 = 1e100;

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mean: Trace,
    pub sd: Trace,
    pub traces: Vec<Trace>,
}

fn record(state: &AlgoState, cfg: &RunConfig, optimum: Option<&[f64]>, info: &StepInfo, bits: f64) -> Result<Record> {
    let spec = MeasureSpec { optimum, residual: optimum.is_some(), grad_norm: cfg.track_grad_norm };
    let mut r = measure(&state.x, &cfg.problem, spec)?;
    r.k = state.k as usize;
    r.eta = info.eta;
    r.compression_err = info.compression_err;
    r.bits_cum = bits;
    if !state.is_finite() || !r.consensus_err.is_finite() || r.consensus_err > BLOWUP {
        return Err(AlgoError::DivergenceDetected { iteration: state.k });
    }
    Ok(r)
}

fn run_as(cfg: &RunConfig, repetition: Repetition) -> Result<Trace> {
    let optimum = if cfg.problem.kind().is_strongly_convex() {
        Some(cfg.problem.reference_optimum()?.x.as_slice())
    } else {
        None
    };
    let (mut state, info) = init(cfg)?;
    let mut records = Vec::with_capacity(cfg.iterations + 1);
    let mut bits = 0.0;
    records.push(record(&state, cfg, optimum, &info, bits)?);
    for _ in 0..cfg.iterations {
        let info = step(&mut state, cfg)?;
        bits += info.bits_per_agent;
        records.push(record(&state, cfg, optimum, &info, bits)?);
    }
    let meta = TraceMeta {
        label: cfg.algorithm.name().to_string(),
        config_hash: cfg.config_hash.clone(),
        seed: cfg.seed,
        repetition,
        agents: cfg.n(),
    };
    Ok(Trace { meta, records })
}

/// Runs `cfg.iterations` rounds with `cfg.seed` and records every iterate
/// from `k = 0` to `k = K`.
pub fn run(cfg: &RunConfig) -> Result<Trace> {
    run_as(cfg, Repetition::Single(0))
}

/// [`run`] on a dedicated pool of `threads` workers. Results do not depend
/// on the number of workers.
pub fn run_with_threads(cfg: &RunConfig, threads: usize) -> Result<Trace> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AlgoError::ThreadPool(e.to_string()))?;
    pool.install(|| run(cfg))
}

/// Runs `cfg.repetitions` independent repetitions, repetition `r` seeded
/// with `derive_seed(cfg.seed, r)`, and aggregates them.
pub fn run_repetitions(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut traces = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions {
        let mut rep = cfg.clone();
        rep.seed = derive_seed(cfg.seed, r as u64);
        traces.push(run_as(&rep, Repetition::Single(r))?);
    }
    let agg = aggregate(&traces)?;
    Ok(RunOutput { mean: agg.mean, sd: agg.sd, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Algorithm, StepSchedule};
    use crate::objective::{Problem, ProblemKind, ProblemParams};
    use crate::topology::{Graph, GraphKind, MixingMatrix};
    use std::sync::Arc;

    fn config(kind: ProblemKind) -> RunConfig {
        let problem = Problem::synthesize(ProblemParams {
            kind,
            n: 6,
            p: 5,
            samples_per_agent: 20,
            heterogeneity: 0.5,
            rho: 0.1,
            noise_sigma: 0.0,
            seed: 3,
        })
        .unwrap();
        let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, 6).unwrap());
        RunConfig::new(Algorithm::Cedas, Arc::new(problem), Arc::new(w), StepSchedule::Constant { eta: 0.05 }, 40)
    }

    #[test]
    fn trace_shape() {
        let cfg = config(ProblemKind::Logistic);
        let t = run(&cfg).unwrap();
        assert_eq!(t.records.len(), 41);
        assert_eq!(t.records[0].k, 0);
        assert_eq!(t.records[0].bits_cum, 0.0);
        assert!(t.records.windows(2).all(|w| w[1].bits_cum >= w[0].bits_cum));
        assert!(t.records.iter().all(|r| r.residual.is_some()));
    }

    #[test]
    fn nonconvex_has_gradient_norm() {
        let t = run(&config(ProblemKind::NonconvexLogistic)).unwrap();
        assert!(t.records.iter().all(|r| r.residual.is_none() && r.grad_norm_sq.is_some()));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cfg = config(ProblemKind::Logistic);
        assert_eq!(run_with_threads(&cfg, 1).unwrap(), run_with_threads(&cfg, 4).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = config(ProblemKind::Quadratic);
        cfg.schedule = StepSchedule::Constant { eta: 1e3 };
        cfg.iterations = 500;
        assert!(matches!(run(&cfg), Err(AlgoError::DivergenceDetected { .. })));
    }

    #[test]
    fn repetitions_aggregate() {
        let mut cfg = config(ProblemKind::Logistic);
        cfg.repetitions = 3;
        let out = run_repetitions(&cfg).unwrap();
        assert_eq!(out.traces.len(), 3);
        assert_ne!(out.traces[0].records, out.traces[1].records);
        assert_eq!(out.mean.meta.repetition, Repetition::Mean);
    }
}
