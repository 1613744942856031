//! Dense matrix form of one CEDAS round, used as a reference for the
//! agent-local engine:
//!
//! ```text
//! Y   = X − ηG − D
//! Ŷ   = H + C(Y − H)
//! D⁺  = D + (γ/2)(I − W)Ŷ
//! X⁺  = X − ηG − D⁺
//! H⁺  = (1 − α)H + αŶ
//! ```

use nalgebra::DMatrix;

use super::{AlgoError, Result};

/// Stacks after one matrix-form round.
#[derive(Clone, Debug)]
pub struct MatrixStep {
    pub x: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub y_hat: DMatrix<f64>,
}

/// One matrix-form CEDAS round. `compress(i, r)` returns the compressed
/// version of row `i` of `Y − H`; replaying the engine's draws there makes
/// both forms see identical compression.
#[allow(clippy::too_many_arguments)]
pub fn cedas_matrix_step<F>(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    h: &DMatrix<f64>,
    eta: f64,
    w: &DMatrix<f64>,
    gamma: f64,
    alpha: f64,
    g: &DMatrix<f64>,
    mut compress: F,
) -> Result<MatrixStep>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let shape = x.shape();
    for (name, m) in [("D", d), ("H", h), ("G", g)] {
        if m.shape() != shape {
            return Err(AlgoError::ShapeMismatch(format!("{name} is {:?}, X is {shape:?}", m.shape())));
        }
    }
    if w.shape() != (shape.0, shape.0) {
        return Err(AlgoError::ShapeMismatch(format!("W is {:?} for {} agents", w.shape(), shape.0)));
    }
    let descent = x - g * eta;
    let y = &descent - d;
    let residual = &y - h;
    let mut compressed = DMatrix::zeros(shape.0, shape.1);
    for i in 0..shape.0 {
        let row: Vec<f64> = residual.row(i).iter().copied().collect();
        let q = compress(i, &row)?;
        if q.len() != shape.1 {
            return Err(AlgoError::ShapeMismatch(format!("compressed row {i} has length {}", q.len())));
        }
        for (j, v) in q.into_iter().enumerate() {
            compressed[(i, j)] = v;
        }
    }
    let y_hat = h + compressed;
    let laplacian = DMatrix::<f64>::identity(shape.0, shape.0) - w;
    let d_next = d + (&laplacian * &y_hat) * (gamma / 2.0);
    let x_next = &descent - &d_next;
    let h_next = h * (1.0 - alpha) + &y_hat * alpha;
    Ok(MatrixStep { x: x_next, d: d_next, h: h_next, y, y_hat })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, offset: f64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| ((i * cols + j) as f64 + offset).sin())
    }

    #[test]
    fn zero_gamma_freezes_correction() {
        let (x, h, g) = (sample(3, 2, 0.0), sample(3, 2, 1.0), sample(3, 2, 2.0));
        let d = DMatrix::zeros(3, 2);
        let w = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let out = cedas_matrix_step(&x, &d, &h, 0.1, &w, 0.0, 0.5, &g, |_, r| Ok(r.to_vec())).unwrap();
        assert_eq!(out.d, DMatrix::zeros(3, 2));
        assert_eq!(out.x, &x - &g * 0.1);
    }

    #[test]
    fn identity_compression_with_unit_alpha_sets_reference_to_y() {
        let (x, h, g, d) = (sample(3, 2, 0.0), sample(3, 2, 1.0), sample(3, 2, 2.0), sample(3, 2, 3.0));
        let w = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let out = cedas_matrix_step(&x, &d, &h, 0.1, &w, 0.5, 1.0, &g, |_, r| Ok(r.to_vec())).unwrap();
        assert!((&out.h - &out.y).amax() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let x = sample(3, 2, 0.0);
        let bad = sample(2, 2, 0.0);
        let w = DMatrix::identity(3, 3);
        let err = cedas_matrix_step(&x, &bad, &x, 0.1, &w, 0.5, 1.0, &x, |_, r| Ok(r.to_vec())).unwrap_err();
        assert!(matches!(err, AlgoError::ShapeMismatch(_)));
        let err = cedas_matrix_step(&x, &x, &x, 0.1, &DMatrix::identity(2, 2), 0.5, 1.0, &x, |_, r| Ok(r.to_vec()))
            .unwrap_err();
        assert!(matches!(err, AlgoError::ShapeMismatch(_)));
    }
}
