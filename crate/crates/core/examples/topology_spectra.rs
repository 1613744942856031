//! Spectral gaps of the Lazy-Metropolis weights on the test topologies, and
//! the spectrum of the CEDAS mixing matrix W̃ = I − (γ/2)(I − W).

use cedas::topology::{DegreeCount, Graph, GraphKind, MixingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<12} {:>4} {:>8} {:>10}", "topology", "n", "degree", "1-λ2");
    for (kind, n, degree) in [
        (GraphKind::Grid, 25, DegreeCount::Open),
        (GraphKind::Grid, 100, DegreeCount::Open),
        (GraphKind::Exponential, 25, DegreeCount::Closed),
        (GraphKind::Exponential, 100, DegreeCount::Closed),
        (GraphKind::Ring, 16, DegreeCount::Open),
        (GraphKind::Complete, 16, DegreeCount::Open),
    ] {
        let w = MixingMatrix::lazy_metropolis_with(&Graph::build(kind, n)?, degree);
        println!("{:<12} {:>4} {:>8?} {:>10.4}", kind.name(), n, degree, w.spectral_gap());
    }

    let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, 8)?);
    for gamma in [0.1, 0.5, 0.9] {
        let tilde = w.tilde(gamma)?;
        let predicted = cedas::topology::TildeMatrix::mapped_spectrum(&w, gamma);
        let worst = tilde.eigenvalues().iter().zip(&predicted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("ring8 γ={gamma}: λ̃ ∈ [{:.4}, {:.4}], max |λ̃ − map(λ)| = {worst:.1e}",
            tilde.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min),
            tilde.eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(())
}
