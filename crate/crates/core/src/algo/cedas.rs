//! CEDAS, its uncompressed special case EDAS, and LEAD.
//!
//! CEDAS and LEAD share one round structure and differ only in how the
//! correction enters: CEDAS subtracts `d_i` directly, LEAD subtracts `η a_i`
//! and scales the dual update by `1/η`. Both are driven by [`comm`], which
//! compresses the difference `y_i − h_i` against a slowly moving reference
//! and keeps the mixed reference `(h_w)_i` up to date without sending it.

use rayon::prelude::*;

use super::{AlgoError, AlgoState, BitConvention, Result, RunConfig, Stack, StepInfo};
use crate::compress::{CompressedMessage, Compressor};
use crate::rng::{stream, Purpose};
use crate::vecops::{dist_sq, sub};

/// Result of one COMM exchange for agent `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommOutput {
    /// `ŷ_i = h_i + q_i`
    pub y_hat: Vec<f64>,
    /// `(ŷ_w)_i = (h_w)_i + Σ_{j ∈ N_i ∪ {i}} w_ij q_j`
    pub y_hat_w: Vec<f64>,
    pub h_next: Vec<f64>,
    pub hw_next: Vec<f64>,
}

/// Full COMM exchange for one agent: compresses `y − h`, then combines the
/// result with the neighbors' messages in `inbox` (indexed by agent; the
/// agent's own slot is ignored).
#[allow(clippy::too_many_arguments)]
pub fn comm<R: rand::Rng + ?Sized>(
    agent: usize,
    y: &[f64],
    h: &[f64],
    hw: &[f64],
    alpha: f64,
    compressor: &Compressor,
    rng: &mut R,
    w_row: &[(usize, f64)],
    inbox: &[Option<&[f64]>],
) -> Result<(CompressedMessage, CommOutput)> {
    let msg = compressor.compress(&sub(y, h), rng)?;
    let q = msg.decode();
    let out = comm_finish(agent, &q, h, hw, alpha, w_row, inbox)?;
    Ok((msg, out))
}

/// Receive half of COMM, given the agent's own decoded message `q`.
pub fn comm_finish(
    agent: usize,
    q: &[f64],
    h: &[f64],
    hw: &[f64],
    alpha: f64,
    w_row: &[(usize, f64)],
    inbox: &[Option<&[f64]>],
) -> Result<CommOutput> {
    let y_hat: Vec<f64> = h.iter().zip(q).map(|(a, b)| a + b).collect();
    let mut y_hat_w = hw.to_vec();
    for &(j, wij) in w_row {
        let qj = if j == agent {
            q
        } else {
            inbox
                .get(j)
                .copied()
                .flatten()
                .ok_or(AlgoError::MissingNeighborMessage { agent, neighbor: j })?
        };
        for (o, v) in y_hat_w.iter_mut().zip(qj) {
            *o += wij * v;
        }
    }
    let h_next = h.iter().zip(&y_hat).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
    let hw_next = hw.iter().zip(&y_hat_w).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
    Ok(CommOutput { y_hat, y_hat_w, h_next, hw_next })
}

/// Stochastic gradients of every agent at the rows of `x`, keyed by iteration `k`.
pub(super) fn draw_gradients(cfg: &RunConfig, x: &Stack, k: i64) -> Stack {
    let rows: Vec<Vec<f64>> = (0..cfg.n())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i, k, Purpose::Gradient);
            cfg.problem.stochastic_grad(i, x.row(i), cfg.batch, &mut rng).gradient
        })
        .collect();
    Stack::from_rows(rows)
}

pub(super) fn bits_charged(cfg: &RunConfig, agent: usize, message_bits: u64) -> u64 {
    match cfg.bits {
        BitConvention::Broadcast => message_bits,
        BitConvention::PerEdge => message_bits * (cfg.mixing.row(agent).len() as u64 - 1).max(1),
    }
}

/// Local gradient step from `x_{i,-1}` shared by all decentralized engines.
fn local_start(cfg: &RunConfig, correction: Stack) -> Result<(AlgoState, StepInfo)> {
    let (n, p) = (cfg.n(), cfg.p());
    let x_prev = cfg.init.x.clone().unwrap_or_else(|| Stack::zeros(n, p));
    let h = cfg.init.h.clone().unwrap_or_else(|| x_prev.clone());
    let hw = h.mixed(&cfg.mixing);
    let eta = cfg.schedule.at(-1);
    let grads = draw_gradients(cfg, &x_prev, -1);
    let mut x = x_prev;
    for i in 0..n {
        for (v, g) in x.row_mut(i).iter_mut().zip(grads.row(i)) {
            *v -= eta * g;
        }
    }
    let state = AlgoState { x, h, hw, d: correction, k: 0 };
    if !state.is_finite() {
        return Err(AlgoError::DivergenceDetected { iteration: -1 });
    }
    Ok((state, StepInfo { eta, grads, bits_per_agent: 0.0, compression_err: None }))
}

/// CEDAS initialization: `d_{i,0} = 0`, `(h_w)_{i,0} = Σ_j w_ij h_{j,0}` and
/// `x_{i,0} = x_{i,-1} − η_{-1} ∇f_i(x_{i,-1}; ξ_{i,-1})`.
pub fn cedas_init(cfg: &RunConfig) -> Result<(AlgoState, StepInfo)> {
    cfg.validate()?;
    local_start(cfg, Stack::zeros(cfg.n(), cfg.p()))
}

/// LEAD initialization: as CEDAS but with `a_{i,0} = z_i − Σ_j w_ij z_j`.
pub fn lead_init(cfg: &RunConfig) -> Result<(AlgoState, StepInfo)> {
    cfg.validate()?;
    let a0 = match &cfg.init.lead_z {
        Some(z) => {
            let wz = z.mixed(&cfg.mixing);
            let mut a = z.clone();
            for i in 0..cfg.n() {
                for (v, m) in a.row_mut(i).iter_mut().zip(wz.row(i)) {
                    *v -= m;
                }
            }
            a
        }
        None => Stack::zeros(cfg.n(), cfg.p()),
    };
    local_start(cfg, a0)
}

/// One CEDAS round.
pub fn cedas_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    let eta = cfg.schedule.at(state.k);
    exact_diffusion_round(state, cfg, &cfg.compressor, cfg.alpha, eta, 1.0)
}

/// One EDAS round: CEDAS with identity compression and `α = 1`.
pub fn edas_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    let eta = cfg.schedule.at(state.k);
    let identity = Compressor::identity(cfg.p())?;
    exact_diffusion_round(state, cfg, &identity, 1.0, eta, 1.0)
}

/// One LEAD round. `state.d` holds the dual variable `a_i`.
pub fn lead_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    if !cfg.schedule.is_constant() {
        return Err(AlgoError::RequiresConstantStep);
    }
    let eta = cfg.schedule.at(state.k);
    exact_diffusion_round(state, cfg, &cfg.compressor, cfg.alpha, eta, eta)
}

/// Shared round: `y = x − ηg − s·v`, COMM, `v⁺ = v + γ/(2s)(ŷ − ŷ_w)`,
/// `x⁺ = x − ηg − s·v⁺`. CEDAS uses `s = 1`, LEAD uses `s = η`.
fn exact_diffusion_round(
    state: &mut AlgoState,
    cfg: &RunConfig,
    compressor: &Compressor,
    alpha: f64,
    eta: f64,
    scale: f64,
) -> Result<StepInfo> {
    let (n, k) = (cfg.n(), state.k);
    let st = &*state;
    // phase 1: gradients, y_i and outgoing messages
    let drawn: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut grng = stream(cfg.seed, i, k, Purpose::Gradient);
            let g = cfg.problem.stochastic_grad(i, st.x.row(i), cfg.batch, &mut grng).gradient;
            let y: Vec<f64> = st
                .x
                .row(i)
                .iter()
                .zip(&g)
                .zip(st.d.row(i))
                .map(|((x, g), v)| x - eta * g - scale * v)
                .collect();
            let mut crng = stream(cfg.seed, i, k, Purpose::Compress);
            let msg = compressor.compress(&sub(&y, st.h.row(i)), &mut crng)?;
            Ok((g, y, msg.decode(), msg.bit_cost()))
        })
        .collect::<Result<_>>()?;

    let inbox: Vec<Option<&[f64]>> = drawn.iter().map(|(_, _, q, _)| Some(q.as_slice())).collect();
    let compression_err: f64 = (0..n).map(|i| dist_sq(&drawn[i].1, state.h.row(i))).sum();
    let half_gamma = cfg.gamma / (2.0 * scale);
    let mut bits = 0u64;
    // phase 2: mixing and updates
    for (i, (g, _, q, msg_bits)) in drawn.iter().enumerate() {
        let out = comm_finish(i, q, state.h.row(i), state.hw.row(i), alpha, cfg.mixing.row(i), &inbox)?;
        let d = state.d.row_mut(i);
        for ((dv, yh), yw) in d.iter_mut().zip(&out.y_hat).zip(&out.y_hat_w) {
            *dv += half_gamma * (yh - yw);
        }
        let d = state.d.row(i).to_vec();
        for ((xv, gv), dv) in state.x.row_mut(i).iter_mut().zip(g).zip(&d) {
            *xv = *xv - eta * gv - scale * dv;
        }
        state.h.row_mut(i).copy_from_slice(&out.h_next);
        state.hw.row_mut(i).copy_from_slice(&out.hw_next);
        bits += bits_charged(cfg, i, *msg_bits);
    }
    state.k += 1;
    let grads = Stack::from_rows(drawn.into_iter().map(|(g, ..)| g).collect());
    Ok(StepInfo { eta, grads, bits_per_agent: bits as f64 / n as f64, compression_err: Some(compression_err) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Algorithm, StepSchedule};
    use crate::objective::{Batch, Problem, ProblemKind, ProblemParams};
    use crate::topology::{Graph, GraphKind, MixingMatrix};
    use std::sync::Arc;

    fn config(n: usize, algorithm: Algorithm) -> RunConfig {
        let problem = Problem::synthesize(ProblemParams {
            kind: ProblemKind::Logistic,
            n,
            p: 6,
            samples_per_agent: 20,
            heterogeneity: 0.5,
            rho: 0.2,
            noise_sigma: 0.0,
            seed: 1,
        })
        .unwrap();
        let mixing = if n == 1 {
            MixingMatrix::identity(1)
        } else {
            MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, n).unwrap())
        };
        let mut cfg = RunConfig::new(
            algorithm,
            Arc::new(problem),
            Arc::new(mixing),
            StepSchedule::Constant { eta: 0.05 },
            10,
        );
        cfg.compressor = Compressor::scaled_rand_k(6, 2).unwrap();
        cfg.alpha = 0.3;
        cfg.gamma = 0.4;
        cfg
    }

    #[test]
    fn zero_start() {
        let cfg = config(4, Algorithm::Cedas);
        let (state, info) = cedas_init(&cfg).unwrap();
        assert_eq!(state.h, Stack::zeros(4, 6));
        assert_eq!(state.hw, Stack::zeros(4, 6));
        assert_eq!(state.d.column_sums(), vec![0.0; 6]);
        for i in 0..4 {
            for (x, g) in state.x.row(i).iter().zip(info.grads.row(i)) {
                assert_eq!(*x, -0.05 * g);
            }
        }
    }

    #[test]
    fn single_agent_reference_is_unmixed() {
        let mut cfg = config(1, Algorithm::Cedas);
        cfg.init.h = Some(Stack::from_rows(vec![vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]]));
        let (state, _) = cedas_init(&cfg).unwrap();
        assert_eq!(state.hw, state.h);
    }

    #[test]
    fn single_agent_cedas_is_sgd() {
        let cfg = config(1, Algorithm::Cedas);
        let (mut state, _) = cedas_init(&cfg).unwrap();
        for _ in 0..20 {
            let before = state.x.row(0).to_vec();
            let info = cedas_step(&mut state, &cfg).unwrap();
            assert!(state.d.as_slice().iter().all(|&v| v == 0.0));
            for ((after, b), g) in state.x.row(0).iter().zip(&before).zip(info.grads.row(0)) {
                assert!((after - (b - 0.05 * g)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_compressor_reproduces_y() {
        let id = Compressor::identity(3).unwrap();
        let y = [1.0, 2.0, -3.0];
        let h = [0.5, 0.5, 0.5];
        let hw = [0.2, 0.2, 0.2];
        let mut rng = stream(0, 0, 0, Purpose::Compress);
        let (_, out) = comm(0, &y, &h, &hw, 0.4, &id, &mut rng, &[(0, 1.0)], &[None]).unwrap();
        assert_eq!(out.y_hat, y.to_vec());
    }

    #[test]
    fn full_overwrite_with_unit_alpha() {
        let c = Compressor::scaled_rand_k(3, 1).unwrap();
        let mut rng = stream(0, 0, 0, Purpose::Compress);
        let (_, out) =
            comm(0, &[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3], &[0.0; 3], 1.0, &c, &mut rng, &[(0, 1.0)], &[None]).unwrap();
        assert_eq!(out.h_next, out.y_hat);
    }

    #[test]
    fn missing_neighbor_message() {
        let err = comm_finish(0, &[1.0], &[0.0], &[0.0], 0.5, &[(0, 0.5), (1, 0.5)], &[None, None]).unwrap_err();
        assert!(matches!(err, AlgoError::MissingNeighborMessage { agent: 0, neighbor: 1 }));
    }

    #[test]
    fn lead_rejects_decreasing_schedule() {
        let mut cfg = config(4, Algorithm::Lead);
        cfg.schedule = StepSchedule::Harmonic { c0: 5.0, c1: 100.0 };
        assert!(matches!(lead_init(&cfg), Err(AlgoError::RequiresConstantStep)));
        let cfg_ok = config(4, Algorithm::Lead);
        let (mut state, _) = lead_init(&cfg_ok).unwrap();
        assert!(matches!(lead_step(&mut state, &cfg), Err(AlgoError::RequiresConstantStep)));
    }

    #[test]
    fn lead_zero_z_gives_zero_dual() {
        let mut cfg = config(4, Algorithm::Lead);
        cfg.init.lead_z = Some(Stack::zeros(4, 6));
        let (state, _) = lead_init(&cfg).unwrap();
        assert_eq!(state.d, Stack::zeros(4, 6));
    }

    #[test]
    fn single_agent_lead_is_sgd() {
        let cfg = config(1, Algorithm::Lead);
        let (mut state, _) = lead_init(&cfg).unwrap();
        for _ in 0..10 {
            let before = state.x.row(0).to_vec();
            let info = lead_step(&mut state, &cfg).unwrap();
            for ((after, b), g) in state.x.row(0).iter().zip(&before).zip(info.grads.row(0)) {
                assert!((after - (b - 0.05 * g)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cedas_rejects_biased_compressor() {
        let mut cfg = config(4, Algorithm::Cedas);
        cfg.compressor = Compressor::top_k(6, 2).unwrap();
        assert!(matches!(cedas_init(&cfg), Err(AlgoError::ConfigInvalid(_))));
    }

    #[test]
    fn per_edge_bits_scale_with_degree() {
        let mut cfg = config(4, Algorithm::Cedas);
        cfg.batch = Batch::Full;
        let (mut state, _) = cedas_init(&cfg).unwrap();
        let broadcast = cedas_step(&mut state.clone(), &cfg).unwrap().bits_per_agent;
        cfg.bits = BitConvention::PerEdge;
        let per_edge = cedas_step(&mut state, &cfg).unwrap().bits_per_agent;
        assert_eq!(per_edge, 2.0 * broadcast);
    }
}
