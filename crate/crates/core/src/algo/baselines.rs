//! Baselines: Choco-SGD, DSGD and centralized minibatch SGD.

use rayon::prelude::*;

use super::cedas::{bits_charged, draw_gradients};
use super::{AlgoError, AlgoState, Result, RunConfig, Stack, StepInfo};
use crate::compress::FLOAT_BITS;
use crate::rng::{stream, Purpose};
use crate::vecops::sub;

/// One Choco-SGD round. `state.d` holds the public replicas `x̂_j`; every
/// agent applies the same broadcast updates to them, so one shared copy
/// stands in for all agents' local replicas.
///
/// `x½ = x − ηg`, `q_i = C(x½_i − x̂_i)`, `x̂⁺ = x̂ + q`,
/// `x_i⁺ = x½_i + γ Σ_j w_ij (x̂_j⁺ − x̂_i⁺)`.
pub fn choco_sgd_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    let (n, k) = (cfg.n(), state.k);
    let eta = cfg.schedule.at(k);
    let st = &*state;
    let drawn: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut grng = stream(cfg.seed, i, k, Purpose::Gradient);
            let g = cfg.problem.stochastic_grad(i, st.x.row(i), cfg.batch, &mut grng).gradient;
            let half: Vec<f64> = st.x.row(i).iter().zip(&g).map(|(x, g)| x - eta * g).collect();
            let mut crng = stream(cfg.seed, i, k, Purpose::Compress);
            let msg = cfg.compressor.compress(&sub(&half, st.d.row(i)), &mut crng)?;
            Ok((g, half, msg.decode(), msg.bit_cost()))
        })
        .collect::<Result<_>>()?;

    let mut bits = 0u64;
    for (i, (_, _, q, msg_bits)) in drawn.iter().enumerate() {
        for (r, v) in state.d.row_mut(i).iter_mut().zip(q) {
            *r += v;
        }
        bits += bits_charged(cfg, i, *msg_bits);
    }
    for (i, (_, half, ..)) in drawn.iter().enumerate() {
        let own = state.d.row(i);
        let mut next = half.clone();
        for &(j, wij) in cfg.mixing.row(i) {
            for ((o, xj), xi) in next.iter_mut().zip(state.d.row(j)).zip(own) {
                *o += cfg.gamma * wij * (xj - xi);
            }
        }
        state.x.row_mut(i).copy_from_slice(&next);
    }
    state.k += 1;
    let grads = Stack::from_rows(drawn.into_iter().map(|(g, ..)| g).collect());
    Ok(StepInfo { eta, grads, bits_per_agent: bits as f64 / n as f64, compression_err: None })
}

/// One DSGD round, `x⁺ = W(x − ηg)`, sending full-precision vectors.
pub fn dsgd_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    let (n, p) = (cfg.n(), cfg.p());
    let eta = cfg.schedule.at(state.k);
    let grads = draw_gradients(cfg, &state.x, state.k);
    let mut half = state.x.clone();
    for i in 0..n {
        for (v, g) in half.row_mut(i).iter_mut().zip(grads.row(i)) {
            *v -= eta * g;
        }
    }
    state.x = half.mixed(&cfg.mixing);
    state.k += 1;
    let bits: u64 = (0..n).map(|i| bits_charged(cfg, i, FLOAT_BITS * p as u64)).sum();
    Ok(StepInfo { eta, grads, bits_per_agent: bits as f64 / n as f64, compression_err: None })
}

/// Start for centralized SGD: all rows hold the same iterate.
pub(super) fn centralized_init(cfg: &RunConfig) -> Result<(AlgoState, StepInfo)> {
    let (n, p) = (cfg.n(), cfg.p());
    let start = cfg.init.x.as_ref().map_or_else(|| vec![0.0; p], Stack::mean_row);
    let x_prev = Stack::from_rows(vec![start; n]);
    let eta = cfg.schedule.at(-1);
    let grads = draw_gradients(cfg, &x_prev, -1);
    let x = averaged_step(&x_prev, &grads, eta);
    if !x.is_finite() {
        return Err(AlgoError::DivergenceDetected { iteration: -1 });
    }
    let zeros = Stack::zeros(n, p);
    let state = AlgoState { x, h: zeros.clone(), hw: zeros.clone(), d: zeros, k: 0 };
    Ok((state, StepInfo { eta, grads, bits_per_agent: 0.0, compression_err: None }))
}

fn averaged_step(x: &Stack, grads: &Stack, eta: f64) -> Stack {
    let n = x.rows();
    let g_mean = grads.mean_row();
    let next: Vec<f64> = x.row(0).iter().zip(&g_mean).map(|(a, g)| a - eta * g).collect();
    Stack::from_rows(vec![next; n])
}

/// One centralized SGD round: `x⁺ = x − η (1/n) Σ_i g_i`, one sample per
/// agent, i.e. minibatch SGD with `n` times the local batch.
pub fn centralized_sgd_step(state: &mut AlgoState, cfg: &RunConfig) -> Result<StepInfo> {
    let n = cfg.n();
    let eta = cfg.schedule.at(state.k);
    let grads = draw_gradients(cfg, &state.x, state.k);
    state.x = averaged_step(&state.x, &grads, eta);
    state.k += 1;
    let bits: u64 = (0..n).map(|_| FLOAT_BITS * cfg.p() as u64).sum();
    Ok(StepInfo { eta, grads, bits_per_agent: bits as f64 / n as f64, compression_err: None })
}
