//! Empirical checks of the compressor contracts: unbiasedness and variance
//! constant for the unbiased family, contraction for the biased one, and
//! the bit cost each message is charged.

use cedas::compress::{Compressor, Contract};
use cedas::rng::{stream, Purpose};
use cedas::vecops::{dist_sq, norm_sq};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = 40;
    let mut rng = stream(11, 0, 0, Purpose::Estimate);
    let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let samples = 20_000;

    let compressors = [
        Compressor::identity(p)?,
        Compressor::scaled_rand_k(p, 4)?,
        Compressor::quantize(p, 2)?,
        Compressor::top_k(p, 4)?,
        Compressor::rand_k(p, 4)?,
        Compressor::compose(Compressor::top_k(p, 4)?, Compressor::scaled_rand_k(p, 4)?)?,
    ];
    for c in &compressors {
        let mut mean = vec![0.0; p];
        let mut err = 0.0;
        for s in 0..samples {
            let mut r = stream(3, 0, s as i64, Purpose::Estimate);
            let q = c.apply(&x, &mut r)?;
            err += dist_sq(&q, &x);
            for (m, v) in mean.iter_mut().zip(&q) {
                *m += v / samples as f64;
            }
        }
        let ratio = err / samples as f64 / norm_sq(&x);
        let bias = dist_sq(&mean, &x).sqrt();
        let declared = match c.contract() {
            Contract::Unbiased(k) => format!("unbiased, C = {k:.3}"),
            Contract::Biased(d) => format!("biased, δ = {d:.3}"),
        };
        println!(
            "{:<36} E‖C(x)−x‖²/‖x‖² = {ratio:.3}  ‖E C(x) − x‖ = {bias:.3}  [{declared}]  {} bits",
            c.name(),
            c.bit_cost()
        );
    }
    Ok(())
}
