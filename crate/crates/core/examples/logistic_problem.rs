//! Synthesizes the heterogeneous logistic-regression testbed and prints its
//! constants and reference optimum.

use cedas::objective::{Problem, ProblemKind, ProblemParams};
use cedas::vecops::norm_sq;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = Problem::synthesize(ProblemParams {
        kind: ProblemKind::Logistic,
        n: 25,
        p: 100,
        samples_per_agent: 50,
        heterogeneity: 0.5,
        rho: 0.2,
        noise_sigma: 0.0,
        seed: 1,
    })?;
    println!("agents {}  dimension {}", problem.n(), problem.p());
    println!("L ≤ {:.4}  μ = {:?}", problem.smoothness(), problem.strong_convexity());
    let opt = problem.reference_optimum()?;
    println!("f(x*) = {:.6}  ‖∇f(x*)‖² = {:.2e}", problem.loss(&opt.x), norm_sq(&problem.full_grad(&opt.x)));
    for i in 0..3 {
        println!("agent {i}: f_i(x*) = {:.4}  ‖∇f_i(x*)‖ = {:.4}", problem.local_loss(i, &opt.x), norm_sq(&problem.grad(i, &opt.x)).sqrt());
    }
    Ok(())
}
