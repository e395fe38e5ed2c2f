//! Matrix exponential by scaling and squaring with a truncated Taylor series.

use super::{LinalgError, Matrix};

/// Scaled argument norm bound: `‖A / 2^s‖₁ ≤ 0.5`.
const SCALED_NORM_BOUND: f64 = 0.5;
const MAX_TERMS: usize = 40;

/// Computes `e^A`.
///
/// The argument is halved until its 1-norm is at most 0.5. Any
/// submultiplicative norm bounds the Taylor remainder, so the tail estimate
/// below uses the same 1-norm. Terms are summed until the tail drops under
/// machine precision, then the result is squared back up.
pub fn expm(a: &Matrix) -> Result<Matrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = a.rows();
    let norm = a.one_norm();
    let mut squarings = 0u32;
    if norm > SCALED_NORM_BOUND {
        squarings = (norm / SCALED_NORM_BOUND).log2().ceil().max(0.0) as u32;
    }
    let scaled = a.scale(0.5f64.powi(squarings as i32));
    let scaled_norm = scaled.one_norm();

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    let mut term_bound = 1.0;
    for k in 1..=MAX_TERMS {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        sum = sum.add(&term);
        term_bound *= scaled_norm / k as f64;
        // remaining tail is bounded by term_bound * x / (1 - x) with x <= 0.5
        if term_bound < 0.25 * f64::EPSILON {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
        if !sum.is_finite() {
            return Err(LinalgError::Overflow);
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let e = expm(&Matrix::from_diag(&[-2.0, 0.5, 7.0])).unwrap();
        for (got, x) in e.diagonal().iter().zip([-2.0f64, 0.5, 7.0]) {
            assert!((got / x.exp() - 1.0).abs() < 1e-13, "{got} vs {}", x.exp());
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn jordan_block_closed_form() {
        // exp([[a, b], [0, a]]) = e^a [[1, b], [0, 1]]
        let e = expm(&Matrix::from_rows(&[[-1.0, 4.0], [0.0, -1.0]])).unwrap();
        let ea = (-1.0f64).exp();
        let want = Matrix::from_rows(&[[ea, 4.0 * ea], [0.0, ea]]);
        assert!(e.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn rotation_generator() {
        let t = 1.3f64;
        let e = expm(&Matrix::from_rows(&[[0.0, t], [-t, 0.0]])).unwrap();
        let want = Matrix::from_rows(&[[t.cos(), t.sin()], [-t.sin(), t.cos()]]);
        assert!(e.max_abs_diff(&want) < 1e-14);
    }
}
