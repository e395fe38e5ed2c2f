//! Eigenvalues of general real matrices: balancing, Householder reduction
//! to upper Hessenberg form, then Francis double-shift QR.

#![allow(clippy::needless_range_loop)]

use num_complex::Complex64;

use super::{LinalgError, Matrix};

/// Per-eigenvalue iteration cap before the solver gives up.
const MAX_ITERATIONS_PER_EIGENVALUE: usize = 60;

/// Diagonal similarity scaling by powers of two so that row and column
/// norms are comparable. Leaves the spectrum unchanged.
fn balance(a: &mut Matrix) {
    const RADIX: f64 = 2.0;
    let n = a.rows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Orthogonal similarity reduction to upper Hessenberg form.
fn hessenberg(a: &mut Matrix) {
    let n = a.rows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_sq: f64 = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= 0.0 {
            -alpha_sq.sqrt()
        } else {
            alpha_sq.sqrt()
        };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm_sq;
        // A <- H A
        for j in 0..n {
            let dot: f64 = v
                .iter()
                .enumerate()
                .map(|(t, vt)| vt * a[(k + 1 + t, j)])
                .sum();
            let f = beta * dot;
            for (t, vt) in v.iter().enumerate() {
                a[(k + 1 + t, j)] -= f * vt;
            }
        }
        // A <- A H
        for i in 0..n {
            let dot: f64 = v
                .iter()
                .enumerate()
                .map(|(t, vt)| vt * a[(i, k + 1 + t)])
                .sum();
            let f = beta * dot;
            for (t, vt) in v.iter().enumerate() {
                a[(i, k + 1 + t)] -= f * vt;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix. Indices are
/// 1-based internally (row/column 0 of `h` is unused).
fn hessenberg_qr(h: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>, LinalgError> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += h[i][j].abs();
        }
    }
    let mut total_iterations = 0usize;
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w): (f64, f64, f64, f64);
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = h[l - 1][l - 1].abs() + h[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if h[l][l - 1].abs() + s == s {
                    h[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = h[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = h[nn - 1][nn - 1];
                w = h[nn][nn - 1] * h[nn - 1][nn];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == MAX_ITERATIONS_PER_EIGENVALUE {
                        return Err(LinalgError::NoConvergence {
                            iterations: total_iterations,
                        });
                    }
                    if its > 0 && its.is_multiple_of(10) {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            h[i][i] -= x;
                        }
                        let s = h[nn][nn - 1].abs() + h[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_iterations += 1;
                    let mut m = nn - 2;
                    loop {
                        z = h[m][m];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / h[m + 1][m] + h[m][m + 1];
                        q = h[m + 1][m + 1] - z - r - s0;
                        r = h[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = h[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        h[i][i - 2] = 0.0;
                        if i != m + 2 {
                            h[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = h[k][k - 1];
                            q = h[k + 1][k - 1];
                            r = 0.0;
                            if k != nn - 1 {
                                r = h[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    h[k][k - 1] = -h[k][k - 1];
                                }
                            } else {
                                h[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = h[k][j] + q * h[k + 1][j];
                                if k != nn - 1 {
                                    p += r * h[k + 2][j];
                                    h[k + 2][j] -= p * z;
                                }
                                h[k + 1][j] -= p * y;
                                h[k][j] -= p * x;
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                p = x * h[i][k] + y * h[i][k + 1];
                                if k != nn - 1 {
                                    p += z * h[i][k + 2];
                                    h[i][k + 2] -= p * r;
                                }
                                h[i][k + 1] -= p * q;
                                h[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// All eigenvalues of a real square matrix, in no particular order.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
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
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let mut work = a.scale(1.0 / scale);
    balance(&mut work);
    hessenberg(&mut work);
    let mut h = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            h[i + 1][j + 1] = work[(i, j)];
        }
    }
    let vals = hessenberg_qr(&mut h, n)?;
    Ok(vals.into_iter().map(|z| z * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let b = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let ev = sorted_re(eigenvalues(&b).unwrap());
        assert!(ev[0].re.abs() < 1e-15 && (ev[0].im.abs() - 1.0).abs() < 1e-15);
        assert!((ev[0].im + ev[1].im).abs() < 1e-15);
    }

    #[test]
    fn triangular_matrix_reads_diagonal() {
        let b = Matrix::from_rows(&[[-1.0, 4.0, 2.0], [0.0, -3.0, 7.0], [0.0, 0.0, 2.5]]);
        let ev = sorted_re(eigenvalues(&b).unwrap());
        let re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        for (got, want) in re.iter().zip([-3.0, -1.0, 2.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // x^4 - 10x^3 + 35x^2 - 50x + 24 = (x-1)(x-2)(x-3)(x-4)
        let b = Matrix::from_rows(&[
            [10.0, -35.0, 50.0, -24.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]);
        let ev = sorted_re(eigenvalues(&b).unwrap());
        for (z, want) in ev.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((z.re - want).abs() < 1e-9 && z.im.abs() < 1e-9);
        }
    }

    #[test]
    fn trace_and_zero_matrix() {
        let z = eigenvalues(&Matrix::zeros(3, 3)).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
        let b = Matrix::from_rows(&[[1.0, 2.0, 0.5], [-3.0, 0.2, 1.0], [0.7, -1.1, -2.0]]);
        let sum: Complex64 = eigenvalues(&b).unwrap().into_iter().sum();
        assert!((sum.re - (1.0 + 0.2 - 2.0)).abs() < 1e-12);
        assert!(sum.im.abs() < 1e-12);
    }
}
