//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("empty decomposition")
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.vectors.rows())
            .map(|i| self.vectors[(i, j)])
            .collect()
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Computes all eigenpairs of `a`, which must be symmetric.
///
/// Sweeps rotate every off-diagonal pair in row-cyclic order until the
/// off-diagonal mass drops to `tol * ‖a‖_F` (or underflows).
pub fn symmetric_eigen(a: &Matrix, tol: f64) -> Result<SymmetricEigen, LinalgError> {
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
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    let mut a = a.symmetric_part();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(SymmetricEigen {
            values: vec![0.0; n],
            vectors: v,
        });
    }
    let target = tol.max(f64::EPSILON) * scale;

    let mut sweeps = 0;
    while off_diagonal_norm(&a) > target {
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { iterations: sweeps });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                if apq == 0.0 {
                    continue;
                }
                if apq.abs() < 1e-3 * f64::EPSILON * (app.abs() + aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                // Rutishauser's stable rotation angle
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        a[(r, p)] = new_rp;
                        a[(p, r)] = new_rp;
                        a[(r, q)] = new_rq;
                        a[(q, r)] = new_rq;
                    }
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - s * (vrq + tau * vrp);
                    v[(r, q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_max_eigenvalue(a: &Matrix, tol: f64) -> Result<f64, LinalgError> {
    symmetric_eigen(a, tol).map(|e| e.max())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_closed_form() {
        let h = Matrix::from_rows(&[[-1.0, 2.0], [2.0, -1.0]]);
        let e = symmetric_eigen(&h, 1e-14).unwrap();
        assert!((e.values[0] + 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvectors_reconstruct_matrix() {
        let h = Matrix::from_rows(&[
            [4.0, 1.0, -2.0, 2.0],
            [1.0, 2.0, 0.0, 1.0],
            [-2.0, 0.0, 3.0, -2.0],
            [2.0, 1.0, -2.0, -1.0],
        ]);
        let e = symmetric_eigen(&h, 1e-14).unwrap();
        let d = Matrix::from_diag(&e.values);
        let rebuilt = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
        assert!(rebuilt.max_abs_diff(&h) < 1e-12);
        let orth = e.vectors.transpose().matmul(&e.vectors);
        assert!(orth.max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn zero_and_diagonal_inputs() {
        let z = symmetric_eigen(&Matrix::zeros(3, 3), 1e-12).unwrap();
        assert_eq!(z.values, vec![0.0; 3]);
        let d = symmetric_eigen(&Matrix::from_diag(&[3.0, -5.0, 1.0]), 1e-12).unwrap();
        assert_eq!(d.values, vec![-5.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let nan = Matrix::from_rows(&[[f64::NAN]]);
        assert!(matches!(
            symmetric_eigen(&nan, 1e-12),
            Err(LinalgError::NonFinite)
        ));
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(
            symmetric_eigen(&rect, 1e-12),
            Err(LinalgError::NotSquare { .. })
        ));
    }
}
