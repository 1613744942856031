//! Independent reference computations checked against the library.

use std::sync::Arc;

use cedas::algo::{self, Algorithm, RunConfig, StepSchedule};
use cedas::compress::Compressor;
use cedas::objective::{Batch, Problem, ProblemKind, ProblemParams};
use cedas::rng::{stream, Purpose};
use cedas::topology::{Graph, GraphKind, MixingMatrix};

fn problem(kind: ProblemKind, n: usize, p: usize, seed: u64) -> Problem {
    Problem::synthesize(ProblemParams {
        kind,
        n,
        p,
        samples_per_agent: 12,
        heterogeneity: 0.7,
        rho: 0.1,
        noise_sigma: 0.0,
        seed,
    })
    .unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::NonconvexLogistic] {
        let prob = problem(kind, 3, 6, 4);
        let x: Vec<f64> = (0..6).map(|j| 0.3 * (j as f64 + 1.0).sin()).collect();
        let h = 1e-6;
        for i in 0..3 {
            let g = prob.grad(i, &x);
            for j in 0..6 {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                let fd = (prob.local_loss(i, &a) - prob.local_loss(i, &b)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{kind:?} agent {i} coord {j}: {fd} vs {}", g[j]);
            }
        }
    }
}

#[test]
fn scaled_rand_k_moments_by_mask_enumeration() {
    // every K-subset of {0..p} is equally likely
    let (p, k) = (5usize, 2usize);
    let x = [1.0, -2.0, 0.5, 3.0, -1.5];
    let scale = p as f64 / k as f64;
    let mut masks = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            masks.push([a, b]);
        }
    }
    let mut mean = [0.0; 5];
    let mut second = 0.0;
    for m in &masks {
        let mut q = [0.0; 5];
        for &i in m {
            q[i] = scale * x[i];
        }
        for i in 0..p {
            mean[i] += q[i] / masks.len() as f64;
        }
        second += q.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / masks.len() as f64;
    }
    let norm: f64 = x.iter().map(|v| v * v).sum();
    for i in 0..p {
        assert!((mean[i] - x[i]).abs() < 1e-12);
    }
    let exact_c = second / norm;
    assert!((exact_c - (scale - 1.0)).abs() < 1e-12);

    let c = Compressor::scaled_rand_k(p, k).unwrap();
    assert!((c.unbiased_constant().unwrap() - exact_c).abs() < 1e-12);
    let samples = 40_000;
    let mut est = 0.0;
    for s in 0..samples {
        let q = c.apply(&x, &mut stream(21, 0, s, Purpose::Estimate)).unwrap();
        est += q.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let est = est / samples as f64 / norm;
    assert!((est - exact_c).abs() < 0.05 * exact_c, "{est} vs {exact_c}");
}

/// Lazy-Metropolis weights computed from the edge list alone.
fn dense_weights(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.n();
    let deg: Vec<usize> = (0..n).map(|i| g.edges().iter().filter(|&&(a, b)| a == i || b == i).count()).collect();
    let mut w = vec![vec![0.0; n]; n];
    for &(a, b) in g.edges() {
        let v = 1.0 / (2.0 * deg[a].max(deg[b]) as f64);
        w[a][b] = v;
        w[b][a] = v;
    }
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = 1.0 - row.iter().sum::<f64>();
    }
    w
}

fn matmul(w: &[Vec<f64>], m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = m[0].len();
    w.iter()
        .map(|row| (0..p).map(|c| row.iter().zip(m).map(|(a, r)| a * r[c]).sum()).collect())
        .collect()
}

/// CEDAS in stacked form, written out from the update equations:
/// `Y = X − ηG − D`, `Ŷ = H + C(Y − H)`, `D⁺ = D + (γ/2)(Ŷ − WŶ)`,
/// `X⁺ = X − ηG − D⁺`, `H⁺ = (1 − α)H + αŶ`.
fn dense_cedas(cfg: &RunConfig, w: &[Vec<f64>], iters: usize) -> Vec<Vec<Vec<f64>>> {
    let (n, p) = (cfg.n(), cfg.p());
    let grad = |x: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { (0..n).map(|i| cfg.problem.grad(i, &x[i])).collect() };
    let zero = vec![vec![0.0; p]; n];
    let g = grad(&zero);
    let eta = cfg.schedule.at(-1);
    let mut x: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|v| -eta * v).collect()).collect();
    let mut d = zero.clone();
    let mut h = zero;
    let mut out = vec![x.clone()];
    for k in 0..iters as i64 {
        let eta = cfg.schedule.at(k);
        let g = grad(&x);
        let descent: Vec<Vec<f64>> =
            (0..n).map(|i| (0..p).map(|c| x[i][c] - eta * g[i][c]).collect()).collect();
        let y_hat: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let diff: Vec<f64> = (0..p).map(|c| descent[i][c] - d[i][c] - h[i][c]).collect();
                let q = cfg.compressor.apply(&diff, &mut stream(cfg.seed, i, k, Purpose::Compress)).unwrap();
                (0..p).map(|c| h[i][c] + q[c]).collect()
            })
            .collect();
        let wy = matmul(w, &y_hat);
        for i in 0..n {
            for c in 0..p {
                d[i][c] += cfg.gamma / 2.0 * (y_hat[i][c] - wy[i][c]);
                x[i][c] = descent[i][c] - d[i][c];
                h[i][c] = (1.0 - cfg.alpha) * h[i][c] + cfg.alpha * y_hat[i][c];
            }
        }
        out.push(x.clone());
    }
    out
}

fn custom_graph(n: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if n > 3 {
        edges.push((0, n / 2));
    }
    Graph::custom(n, &edges).unwrap()
}

#[test]
fn agent_local_cedas_matches_dense_recursion() {
    let cases: Vec<Graph> = GraphKind::ALL
        .iter()
        .flat_map(|&kind| {
            let sizes: &[usize] = if kind == GraphKind::Grid { &[4, 9] } else { &[2, 8] };
            sizes.iter().map(move |&n| match kind {
                GraphKind::Custom => custom_graph(n),
                _ => Graph::build(kind, n).unwrap(),
            })
        })
        .collect();
    for g in cases {
        let n = g.n();
        let p = 7;
        let prob = Arc::new(problem(ProblemKind::Logistic, n, p, n as u64));
        let w = Arc::new(MixingMatrix::lazy_metropolis(&g));
        let mut cfg =
            RunConfig::new(Algorithm::Cedas, prob, w, StepSchedule::Harmonic { c0: 2.0, c1: 20.0 }, 200);
        cfg.batch = Batch::Full;
        cfg.compressor = Compressor::scaled_rand_k(p, 3).unwrap();
        cfg.alpha = 0.3;
        cfg.gamma = 0.2;
        cfg.seed = 17;
        let reference = dense_cedas(&cfg, &dense_weights(&g), 200);
        let (mut state, _) = algo::init(&cfg).unwrap();
        let mut worst = 0.0f64;
        for (k, x_ref) in reference.iter().enumerate() {
            if k > 0 {
                algo::step(&mut state, &cfg).unwrap();
            }
            for i in 0..n {
                for c in 0..p {
                    worst = worst.max((state.x.row(i)[c] - x_ref[i][c]).abs());
                }
            }
        }
        assert!(worst < 1e-10, "{} n={n}: max deviation {worst:e}", g.kind());
    }
}

#[test]
fn choco_with_identity_and_unit_gamma_is_dsgd() {
    let prob = Arc::new(problem(ProblemKind::Logistic, 6, 5, 2));
    let w = Arc::new(MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, 6).unwrap()));
    let mut choco = RunConfig::new(Algorithm::ChocoSgd, prob, w, StepSchedule::Constant { eta: 0.1 }, 100);
    choco.gamma = 1.0;
    choco.seed = 4;
    let mut dsgd = choco.clone();
    dsgd.algorithm = Algorithm::Dsgd;
    let a = algo::run(&choco).unwrap();
    let b = algo::run(&dsgd).unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!((ra.residual.unwrap() - rb.residual.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn single_agent_reduces_to_sgd() {
    let prob = Arc::new(problem(ProblemKind::Quadratic, 1, 4, 9));
    let w = Arc::new(MixingMatrix::identity(1));
    let mut cfg = RunConfig::new(Algorithm::Cedas, prob.clone(), w, StepSchedule::Constant { eta: 0.02 }, 50);
    cfg.batch = Batch::Full;
    let (mut state, _) = algo::init(&cfg).unwrap();
    let mut x: Vec<f64> = prob.grad(0, &[0.0; 4]).iter().map(|g| -0.02 * g).collect();
    for _ in 0..50 {
        algo::step(&mut state, &cfg).unwrap();
        let g = prob.grad(0, &x);
        for (v, gi) in x.iter_mut().zip(g) {
            *v -= 0.02 * gi;
        }
    }
    for (a, b) in state.x.row(0).iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
}
