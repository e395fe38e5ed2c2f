//! Logarithmic norm (numerical abscissa), spectral abscissa, induced
//! 2-norm and transient-growth diagnostics for a system matrix.
//!
//! For the 2-norm the logarithmic norm is the top eigenvalue of the
//! symmetric part, `μ[B] = λ_max((B + Bᵀ) / 2)`, and it bounds the
//! propagator from both sides together with the spectral abscissa:
//! `e^{tα} ≤ ‖e^{tB}‖₂ ≤ e^{tμ}`.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

/// Relative tolerance of the symmetric eigensolves.
pub const SYMMETRIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LognormError {
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("eigenvalue iteration failed to converge after {iterations} iterations")]
    EigenFailure { iterations: usize },
    #[error("step sizes must be positive and strictly decreasing")]
    BadSteps,
    #[error("sample times must be non-negative and finite")]
    BadTimes,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<LinalgError> for LognormError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonFinite | LinalgError::Overflow => LognormError::NonFinite,
            LinalgError::NotSquare { rows, cols } => LognormError::NotSquare { rows, cols },
            LinalgError::Empty => LognormError::Empty,
            LinalgError::NoConvergence { iterations } => LognormError::EigenFailure { iterations },
            LinalgError::Singular { .. } => {
                LognormError::InvalidArgument("unexpected singular solve".into())
            }
        }
    }
}

fn check_square(b: &Matrix) -> Result<(), LognormError> {
    if !b.is_square() {
        return Err(LognormError::NotSquare {
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    if b.rows() == 0 {
        return Err(LognormError::Empty);
    }
    if !b.is_finite() {
        return Err(LognormError::NonFinite);
    }
    Ok(())
}

/// `μ[B]`: largest eigenvalue of `(B + Bᵀ) / 2`.
pub fn log_norm(b: &Matrix) -> Result<f64, LognormError> {
    check_square(b)?;
    Ok(linalg::symmetric_max_eigenvalue(
        &b.symmetric_part(),
        SYMMETRIC_TOL,
    )?)
}

/// Largest singular value, from the top eigenvalue of `BᵀB`.
pub fn matrix_two_norm(b: &Matrix) -> Result<f64, LognormError> {
    if !b.is_finite() {
        return Err(LognormError::NonFinite);
    }
    if b.rows() == 0 || b.cols() == 0 {
        return Ok(0.0);
    }
    // pre-scale so BᵀB cannot overflow
    let s = b.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if s == 0.0 {
        return Ok(0.0);
    }
    let scaled = b.scale(1.0 / s);
    let top = linalg::symmetric_max_eigenvalue(&scaled.gram(), SYMMETRIC_TOL)?;
    Ok(s * top.max(0.0).sqrt())
}

/// `α(B)`: largest real part over the eigenvalues of `B`.
pub fn spectral_abscissa(b: &Matrix) -> Result<f64, LognormError> {
    check_square(b)?;
    let ev = linalg::eigenvalues(b)?;
    Ok(ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Default step sequence `h_j = 0.1 · 2⁻ʲ`, `j = 0..=20`.
pub fn default_limit_steps() -> Vec<f64> {
    (0..=20).map(|j| 0.1 * 0.5f64.powi(j)).collect()
}

/// Difference quotients `(‖I + hB‖₂ - 1) / h` for a shrinking step sequence,
/// cross-checked against the eigenvalue route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    /// `(h, (‖I + hB‖ - 1) / h)` per step.
    pub estimates: Vec<(f64, f64)>,
    /// `μ[B]` from the symmetric eigensolve.
    pub mu: f64,
    pub two_norm: f64,
    /// Whether the last estimate is within `1e-5 (1 + ‖B‖₂)` of `mu`.
    pub agrees: bool,
}

impl LimitEstimate {
    pub const TOLERANCE: f64 = 1e-5;

    pub fn last(&self) -> f64 {
        self.estimates.last().map_or(f64::NAN, |e| e.1)
    }
}

/// Evaluates the limit definition of the logarithmic norm.
///
/// `‖I + hB‖₂² = 1 + h λ` with `λ = λ_max(B + Bᵀ + h BᵀB)`, so the quotient
/// is computed as `λ / (√(1 + hλ) + 1)`, which avoids the cancellation in
/// `‖I + hB‖ - 1` at small `h`.
pub fn log_norm_limit(b: &Matrix, steps: &[f64]) -> Result<LimitEstimate, LognormError> {
    check_square(b)?;
    if steps.is_empty()
        || steps.iter().any(|h| !(h.is_finite() && *h > 0.0))
        || steps.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(LognormError::BadSteps);
    }
    let sum = b.add(&b.transpose());
    let gram = b.gram();
    let mut estimates = Vec::with_capacity(steps.len());
    for &h in steps {
        let lambda = linalg::symmetric_max_eigenvalue(&sum.add(&gram.scale(h)), SYMMETRIC_TOL)?;
        let norm_sq = 1.0 + h * lambda;
        let q = if norm_sq >= 0.0 {
            lambda / (norm_sq.sqrt() + 1.0)
        } else {
            // rounding only; ‖I + hB‖² is never negative
            -1.0 / h
        };
        estimates.push((h, q));
    }
    let mu = log_norm(b)?;
    let two_norm = matrix_two_norm(b)?;
    let last = estimates.last().map(|e| e.1).unwrap_or(f64::NAN);
    let agrees = (last - mu).abs() <= LimitEstimate::TOLERANCE * (1.0 + two_norm);
    Ok(LimitEstimate {
        estimates,
        mu,
        two_norm,
        agrees,
    })
}

/// One sample of the propagator envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub t: f64,
    /// `‖e^{tB}‖₂`
    pub exp_norm: f64,
    /// `e^{tα}`
    pub lower_bound: f64,
    /// `e^{tμ}`
    pub upper_bound: f64,
    /// Set when `e^{tμ}` (or the propagator) leaves the `f64` range.
    pub overflow: bool,
}

impl EnvelopeSample {
    /// Whether the sample respects `e^{tα} ≤ ‖e^{tB}‖ ≤ e^{tμ}` within
    /// `rel_tol` relative slack.
    pub fn within_bounds(&self, rel_tol: f64) -> bool {
        if self.overflow {
            return true;
        }
        self.exp_norm >= self.lower_bound * (1.0 - rel_tol)
            && self.exp_norm <= self.upper_bound * (1.0 + rel_tol)
    }
}

/// `‖e^{tB}‖₂` with its analytic bounds at every grid time.
pub fn exp_envelope(b: &Matrix, t_grid: &[f64]) -> Result<Vec<EnvelopeSample>, LognormError> {
    let mu = log_norm(b)?;
    let alpha = spectral_abscissa(b)?;
    envelope_with(b, t_grid, mu, alpha)
}

fn envelope_with(
    b: &Matrix,
    t_grid: &[f64],
    mu: f64,
    alpha: f64,
) -> Result<Vec<EnvelopeSample>, LognormError> {
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(LognormError::BadTimes);
    }
    const LN_MAX: f64 = 709.0;
    t_grid
        .iter()
        .map(|&t| {
            let upper = (t * mu).exp();
            let lower = (t * alpha).exp();
            if t * mu > LN_MAX {
                return Ok(EnvelopeSample {
                    t,
                    exp_norm: f64::INFINITY,
                    lower_bound: lower,
                    upper_bound: upper,
                    overflow: true,
                });
            }
            let (exp_norm, overflow) = match linalg::expm(&b.scale(t)) {
                Ok(e) => (matrix_two_norm(&e)?, false),
                Err(LinalgError::Overflow) => (f64::INFINITY, true),
                Err(e) => return Err(e.into()),
            };
            Ok(EnvelopeSample {
                t,
                exp_norm,
                lower_bound: lower,
                upper_bound: upper,
                overflow,
            })
        })
        .collect()
}

/// Stability summary of a system matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mu: f64,
    pub alpha: f64,
    pub two_norm: f64,
    /// `μ < 0`: exponential contraction in the 2-norm.
    pub stable: bool,
    pub envelope: Vec<EnvelopeSample>,
}

impl StabilityReport {
    pub fn transient_peak(&self) -> Option<&EnvelopeSample> {
        self.envelope
            .iter()
            .filter(|s| !s.overflow)
            .max_by(|a, b| a.exp_norm.total_cmp(&b.exp_norm))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Writes the envelope as `t,exp_norm,lower_bound,upper_bound`.
    pub fn write_envelope_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_envelope_csv(&self.envelope, out)
    }
}

pub fn analyze(b: &Matrix, t_grid: &[f64]) -> Result<StabilityReport, LognormError> {
    let mu = log_norm(b)?;
    let alpha = spectral_abscissa(b)?;
    let two_norm = matrix_two_norm(b)?;
    let envelope = envelope_with(b, t_grid, mu, alpha)?;
    Ok(StabilityReport {
        mu,
        alpha,
        two_norm,
        stable: mu < 0.0,
        envelope,
    })
}

/// Uniform grid `0, dt, 2dt, …` with `samples` points ending at `t_end`.
pub fn uniform_grid(t_end: f64, samples: usize) -> Vec<f64> {
    match samples {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..samples)
            .map(|i| t_end * i as f64 / (samples - 1) as f64)
            .collect(),
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn write_envelope_csv<W: Write>(samples: &[EnvelopeSample], mut out: W) -> io::Result<()> {
    writeln!(out, "t,exp_norm,lower_bound,upper_bound")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.exp_norm),
            fmt_f64(s.lower_bound),
            fmt_f64(s.upper_bound)
        )?;
    }
    Ok(())
}

/// Sampled lower bound on the ε-pseudospectral abscissa: the largest
/// `α(B + E)` over `samples` Gaussian perturbations rescaled to `‖E‖₂ = ε`.
pub fn pseudospectral_abscissa_lower_bound(
    b: &Matrix,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, LognormError> {
    check_square(b)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(LognormError::InvalidArgument(format!(
            "epsilon {epsilon} must be positive"
        )));
    }
    if samples == 0 {
        return Err(LognormError::InvalidArgument(
            "need at least one sample".into(),
        ));
    }
    let n = b.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let data: Vec<f64> = (0..n * n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let e = Matrix::from_row_major(n, n, data);
        let norm = matrix_two_norm(&e)?;
        if norm == 0.0 {
            continue;
        }
        let perturbed = b.add(&e.scale(epsilon / norm));
        best = best.max(spectral_abscissa(&perturbed)?);
    }
    Ok(best)
}
