//! Fixed-step RK4 integration of `ż = B z + k` and empirical checks of the
//! logarithmic-norm growth bounds along trajectories.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{self, AssemblyError, ClosedLoopSystem, OpenLoopSystem, Role};
use crate::linalg::{self, Matrix};
use crate::lognorm::{self, fmt_f64, LognormError};
use crate::topology::{MicrogridGraph, NodeId};

/// State magnitude (relative to `1 + ‖z0‖`) beyond which integration stops.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state has dimension {got}, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("every deviation sample has norm below 1e-14 ({skipped} skipped)")]
    DegenerateNorm { skipped: usize },
    #[error("invalid load step: {0}")]
    BadEvent(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Lognorm(#[from] LognormError),
}

/// Anything of the form `ż = B z + k`.
pub trait AffineDynamics {
    fn matrix(&self) -> &Matrix;
    fn offset(&self) -> &[f64];
}

/// Bare affine system, for analysing arbitrary matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    pub b: Matrix,
    pub k: Vec<f64>,
}

impl AffineSystem {
    pub fn homogeneous(b: Matrix) -> Self {
        let n = b.rows();
        Self { b, k: vec![0.0; n] }
    }
}

impl AffineDynamics for AffineSystem {
    fn matrix(&self) -> &Matrix {
        &self.b
    }
    fn offset(&self) -> &[f64] {
        &self.k
    }
}

impl AffineDynamics for ClosedLoopSystem {
    fn matrix(&self) -> &Matrix {
        &self.b
    }
    fn offset(&self) -> &[f64] {
        &self.k
    }
}

/// FNV-1a over the bit patterns of `B` and `k`.
pub fn system_hash<S: AffineDynamics + ?Sized>(sys: &S) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let b = sys.matrix();
    for word in [b.rows() as u64, b.cols() as u64]
        .into_iter()
        .chain(b.as_slice().iter().map(|x| x.to_bits()))
        .chain(sys.offset().iter().map(|x| x.to_bits()))
    {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
    pub method: String,
    pub system_hash: u64,
    /// Time of the first sample that exceeded the divergence bound; the
    /// trajectory ends there.
    pub divergence: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least the initial sample")
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// CSV with header `t,ip_0..ip_{m-1},vg_0..vg_{n-1}`. Voltages are
    /// written in original node order.
    pub fn write_csv<W: Write>(&self, system: &ClosedLoopSystem, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..system.lines).map(|e| format!("ip_{e}")));
        header.extend((0..system.nodes).map(|v| format!("vg_{v}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, z) in self.times.iter().zip(&self.states) {
            let x = system.to_original(z);
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Number of uniform steps of size `h` that cover `[0, t_end]`; the last
/// sample lands on `steps * h`.
pub fn step_count(t_end: f64, h: f64) -> Result<usize, SimError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "step {h} must be positive"
        )));
    }
    if !(t_end.is_finite() && t_end >= h * (1.0 - 1e-12)) {
        return Err(SimError::InvalidArgument(format!(
            "horizon {t_end} must be at least one step ({h})"
        )));
    }
    Ok(((t_end / h).round() as usize).max(1))
}

/// Classical RK4 on `ẋ = rhs(t, x)` from `t = 0`.
pub fn rk4<F>(mut rhs: F, x0: &[f64], t_end: f64, h: f64) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rk4_from(
        &mut rhs,
        x0,
        0.0,
        step_count(t_end, h)?,
        h,
        linalg::norm2(x0),
    )
}

fn rk4_from<F>(
    rhs: &mut F,
    x0: &[f64],
    t0_index_time: f64,
    steps: usize,
    h: f64,
    z0_norm: f64,
) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let d = x0.len();
    let limit = DIVERGENCE_FACTOR * (1.0 + z0_norm);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0_index_time);
    states.push(x0.to_vec());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    let mut x = x0.to_vec();
    let mut divergence = None;
    for i in 0..steps {
        let t = t0_index_time + i as f64 * h;
        rhs(t, &x, &mut k1);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..d {
            tmp[j] = x[j] + h * k3[j];
        }
        rhs(t + h, &tmp, &mut k4);
        for j in 0..d {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = t0_index_time + (i + 1) as f64 * h;
        if x.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            divergence = Some(t_next);
            break;
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        step: h,
        method: "rk4".into(),
        system_hash: 0,
        divergence,
    })
}

fn check_dim(expected: usize, got: usize) -> Result<(), SimError> {
    if expected != got {
        return Err(SimError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Integrates `ż = B z + k` from `z0` over `[0, t_end]` with step `h`.
pub fn integrate<S: AffineDynamics + ?Sized>(
    sys: &S,
    z0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SimError> {
    let b = sys.matrix();
    let k = sys.offset();
    check_dim(b.rows(), z0.len())?;
    let rhs = |_t: f64, z: &[f64], dz: &mut [f64]| {
        b.matvec_into(z, dz);
        for (d, c) in dz.iter_mut().zip(k) {
            *d += c;
        }
    };
    let mut traj = rk4(rhs, z0, t_end, h)?;
    traj.system_hash = system_hash(sys);
    Ok(traj)
}

/// Integrates the open-loop network `ẋ = A x + G f(t, x)` with an explicit
/// injection law, in original coordinates.
pub fn integrate_open_loop<F>(
    sys: &OpenLoopSystem,
    x0: &[f64],
    t_end: f64,
    h: f64,
    mut injection: F,
) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    check_dim(sys.dim(), x0.len())?;
    let mut gf = vec![0.0; sys.dim()];
    let rhs = |t: f64, x: &[f64], dx: &mut [f64]| {
        let f = injection(t, x);
        sys.a.matvec_into(x, dx);
        sys.g.matvec_into(&f, &mut gf);
        for (d, g) in dx.iter_mut().zip(&gf) {
            *d += g;
        }
    };
    rk4(rhs, x0, t_end, h)
}

/// Constant-power load change on a consumer at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    pub time: f64,
    pub node: usize,
    /// New load power in watts.
    pub load: f64,
}

pub fn check_load_steps(system: &ClosedLoopSystem, steps: &[LoadStep]) -> Result<(), SimError> {
    let mut last = 0.0;
    for (i, s) in steps.iter().enumerate() {
        if !(s.time.is_finite() && s.time >= 0.0) {
            return Err(SimError::BadEvent(format!(
                "event {i}: time {} is negative",
                s.time
            )));
        }
        if s.time < last {
            return Err(SimError::BadEvent(format!(
                "event {i}: times must be sorted"
            )));
        }
        last = s.time;
        if s.node >= system.nodes {
            return Err(SimError::BadEvent(format!(
                "event {i}: {} does not exist",
                NodeId(s.node)
            )));
        }
        if system.assignment.roles()[s.node] != Role::Consumer {
            return Err(SimError::BadEvent(format!(
                "event {i}: {} is a producer; load steps apply to consumers",
                NodeId(s.node)
            )));
        }
        if !(s.load.is_finite() && s.load >= 0.0) {
            return Err(SimError::BadEvent(format!(
                "event {i}: load {} must be non-negative",
                s.load
            )));
        }
    }
    Ok(())
}

/// Integrates with load steps applied at the first grid time at or after
/// each event. Only `k` changes; `B` does not depend on the loads.
pub fn integrate_with_load_steps(
    graph: &MicrogridGraph,
    system: &ClosedLoopSystem,
    z0: &[f64],
    t_end: f64,
    h: f64,
    steps: &[LoadStep],
) -> Result<Trajectory, SimError> {
    check_dim(system.dim(), z0.len())?;
    check_load_steps(system, steps)?;
    let total = step_count(t_end, h)?;
    let z0_norm = linalg::norm2(z0);

    let mut droop = system.droop.clone();
    let mut k = system.k.clone();
    let b = &system.b;
    let mut pending = steps.iter().peekable();
    let mut out: Option<Trajectory> = None;
    let mut start = 0usize;
    let mut z = z0.to_vec();
    loop {
        let t_start = start as f64 * h;
        while let Some(s) = pending.peek() {
            if s.time <= t_start + 1e-12 * h {
                droop.loads[s.node] = s.load;
                pending.next();
            } else {
                break;
            }
        }
        if start > 0 || droop != system.droop {
            k = assembly::assemble_closed_loop(graph, &system.assignment, &droop)?.k;
        }
        // run until the grid point of the next event
        let end = match pending.peek() {
            Some(s) => (((s.time / h) - 1e-12).ceil() as usize).clamp(start + 1, total),
            None => total,
        };
        let mut rhs = |_t: f64, z: &[f64], dz: &mut [f64]| {
            b.matvec_into(z, dz);
            for (d, c) in dz.iter_mut().zip(&k) {
                *d += c;
            }
        };
        let piece = rk4_from(&mut rhs, &z, t_start, end - start, h, z0_norm)?;
        z = piece.final_state().to_vec();
        let diverged = piece.divergence;
        match out.as_mut() {
            None => out = Some(piece),
            Some(acc) => {
                acc.times.extend_from_slice(&piece.times[1..]);
                acc.states.extend(piece.states.into_iter().skip(1));
                acc.divergence = diverged;
            }
        }
        start = end;
        if diverged.is_some() || start >= total {
            break;
        }
    }
    let mut traj = out.expect("at least one segment");
    traj.system_hash = system_hash(system);
    Ok(traj)
}

/// Empirical order of accuracy from two step sizes against a reference
/// ten times finer than the smaller one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub steps: [f64; 2],
    pub errors: [f64; 2],
    /// `log2(error(h) / error(h/2))`; 4 for a fourth-order method.
    pub exponent: f64,
    /// `‖z_h - z_{h/2}‖ / ‖z_{h/2} - z_{h/4}‖`; about 16 in the asymptotic
    /// regime.
    pub halving_ratio: f64,
}

pub fn convergence_order<S: AffineDynamics + ?Sized>(
    sys: &S,
    z0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<ConvergenceReport, SimError> {
    let end = |step: f64| -> Result<Vec<f64>, SimError> {
        Ok(integrate(sys, z0, t_end, step)?.final_state().to_vec())
    };
    let diff = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        linalg::norm2(&d)
    };
    let coarse = end(h)?;
    let half = end(h / 2.0)?;
    let quarter = end(h / 4.0)?;
    let reference = end(h / 20.0)?;
    let errors = [diff(&coarse, &reference), diff(&half, &reference)];
    Ok(ConvergenceReport {
        steps: [h, h / 2.0],
        errors,
        exponent: (errors[0] / errors[1]).log2(),
        halving_ratio: diff(&coarse, &half) / diff(&half, &quarter),
    })
}

/// `|λ|_max / |λ|_min` over the eigenvalues of `B`.
pub fn stiffness_ratio(b: &Matrix) -> Result<f64, SimError> {
    let ev = linalg::eigenvalues(b).map_err(LognormError::from)?;
    let mags: Vec<f64> = ev.iter().map(|z| z.norm()).collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// `0.1 / ‖B‖₂`.
pub fn default_step(b: &Matrix) -> Result<f64, SimError> {
    let norm = lognorm::matrix_two_norm(b)?;
    if norm == 0.0 {
        return Ok(0.1);
    }
    Ok(0.1 / norm)
}

/// Result of checking `D⁺ log‖z(t) - z*‖ ≤ μ[B]` along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniReport {
    /// Largest forward-difference growth rate observed.
    pub max_rate: f64,
    /// Time at the start of the step that attained `max_rate`.
    pub t_max: f64,
    pub mu: f64,
    /// `10 h ‖B‖₂²`
    pub tolerance: f64,
    /// Steps skipped because `‖z - z*‖ < 1e-14`.
    pub skipped: usize,
    pub holds: bool,
}

/// Forward-difference estimate of the growth rate of `log‖z - z*‖` at each
/// step, compared against `μ[B]`.
pub fn dini_check<S: AffineDynamics + ?Sized>(
    trajectory: &Trajectory,
    sys: &S,
) -> Result<DiniReport, SimError> {
    const FLOOR: f64 = 1e-14;
    let b = sys.matrix();
    let mu = lognorm::log_norm(b)?;
    let norm_b = lognorm::matrix_two_norm(b)?;
    let z_star = if sys.offset().iter().all(|v| *v == 0.0) {
        vec![0.0; b.rows()]
    } else {
        let rhs: Vec<f64> = sys.offset().iter().map(|v| -v).collect();
        linalg::solve(b, &rhs).map_err(|e| match e {
            linalg::LinalgError::Singular { condition } => {
                SimError::Assembly(AssemblyError::SingularB { condition })
            }
            other => SimError::Lognorm(other.into()),
        })?
    };
    let h = trajectory.step;
    let deviation = |z: &[f64]| {
        let y: Vec<f64> = z.iter().zip(&z_star).map(|(a, b)| a - b).collect();
        linalg::norm2(&y)
    };
    let norms: Vec<f64> = trajectory.states.iter().map(|z| deviation(z)).collect();
    let mut max_rate = f64::NEG_INFINITY;
    let mut t_max = 0.0;
    let mut skipped = 0;
    for (i, w) in norms.windows(2).enumerate() {
        if w[0] < FLOOR || w[1] < FLOOR {
            skipped += 1;
            continue;
        }
        let dt = trajectory.times[i + 1] - trajectory.times[i];
        let rate = (w[1].ln() - w[0].ln()) / dt;
        if rate > max_rate {
            max_rate = rate;
            t_max = trajectory.times[i];
        }
    }
    if max_rate == f64::NEG_INFINITY {
        return Err(SimError::DegenerateNorm { skipped });
    }
    let tolerance = 10.0 * h * norm_b * norm_b;
    Ok(DiniReport {
        max_rate,
        t_max,
        mu,
        tolerance,
        skipped,
        holds: max_rate <= mu + tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientGrowth {
    pub peak: f64,
    pub t_peak: f64,
    pub alpha: f64,
    pub mu: f64,
    /// Peak above 1 while every mode decays.
    pub amplifying: bool,
}

/// Peak of `‖e^{tB}‖₂` over `t_grid`.
pub fn measure_transient_growth(b: &Matrix, t_grid: &[f64]) -> Result<TransientGrowth, SimError> {
    if t_grid.is_empty() {
        return Err(SimError::InvalidArgument("empty time grid".into()));
    }
    let report = lognorm::analyze(b, t_grid)?;
    let peak = report
        .transient_peak()
        .ok_or_else(|| SimError::InvalidArgument("every envelope sample overflowed".into()))?;
    Ok(TransientGrowth {
        peak: peak.exp_norm,
        t_peak: peak.t,
        alpha: report.alpha,
        mu: report.mu,
        amplifying: peak.exp_norm > 1.0 && report.alpha < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lognorm::uniform_grid;

    #[test]
    fn scalar_decay() {
        let sys = AffineSystem::homogeneous(Matrix::from_diag(&[-1.0, -1.0]));
        let tr = integrate(&sys, &[1.0, 0.0], 1.0, 1e-3).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.final_state()[1], 0.0);
        assert!((tr.times[1000] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_arguments() {
        let sys = AffineSystem::homogeneous(Matrix::identity(2));
        assert!(matches!(
            integrate(&sys, &[1.0], 1.0, 0.1),
            Err(SimError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            integrate(&sys, &[1.0, 0.0], 1.0, 0.0),
            Err(SimError::InvalidArgument(_))
        ));
        assert!(matches!(
            integrate(&sys, &[1.0, 0.0], 0.01, 0.1),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn divergence_truncates() {
        let sys = AffineSystem::homogeneous(Matrix::from_diag(&[50.0]));
        let tr = integrate(&sys, &[1.0], 10.0, 0.01).unwrap();
        assert!(tr.diverged());
        assert!(tr.len() < 1001);
        assert!(tr
            .states
            .iter()
            .all(|z| z[0].is_finite() && z[0] <= 1e12 * 2.0));
    }

    #[test]
    fn dini_on_normal_and_skew() {
        let d = AffineSystem::homogeneous(Matrix::from_diag(&[-1.0, -2.0]));
        let tr = integrate(&d, &[1.0, 0.0], 2.0, 1e-3).unwrap();
        let r = dini_check(&tr, &d).unwrap();
        assert!((r.max_rate + 1.0).abs() < 1e-6, "{r:?}");
        assert!(r.holds);

        let skew = AffineSystem::homogeneous(Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]));
        let tr = integrate(&skew, &[1.0, 0.0], 2.0, 1e-3).unwrap();
        let r = dini_check(&tr, &skew).unwrap();
        assert!(r.max_rate.abs() < 1e-9, "{r:?}");
        assert!(r.holds);
    }

    #[test]
    fn dini_degenerate_at_equilibrium() {
        let d = AffineSystem::homogeneous(Matrix::from_diag(&[-1.0]));
        let tr = integrate(&d, &[0.0], 1.0, 0.1).unwrap();
        assert!(matches!(
            dini_check(&tr, &d),
            Err(SimError::DegenerateNorm { skipped: 10 })
        ));
    }

    #[test]
    fn transient_growth_cases() {
        let normal = Matrix::from_diag(&[-1.0, -2.0]);
        let g = measure_transient_growth(&normal, &uniform_grid(3.0, 31)).unwrap();
        assert_eq!((g.peak, g.t_peak), (1.0, 0.0));
        assert!(!g.amplifying);

        let jordan = Matrix::from_rows(&[[-1.0, 4.0], [0.0, -1.0]]);
        let g = measure_transient_growth(&jordan, &uniform_grid(3.0, 31)).unwrap();
        assert!(g.peak > 1.0 && g.t_peak > 0.0);
        assert!(g.amplifying);
    }

    #[test]
    fn convergence_exponent_on_rotation() {
        let sys = AffineSystem::homogeneous(Matrix::from_rows(&[[-0.5, 2.0], [-2.0, -0.5]]));
        let c = convergence_order(&sys, &[1.0, 0.0], 2.0, 0.1).unwrap();
        assert!(c.exponent > 3.7, "{c:?}");
        assert!(c.halving_ratio > 14.0 && c.halving_ratio < 17.0, "{c:?}");
    }

    #[test]
    fn hash_depends_on_contents() {
        let a = AffineSystem::homogeneous(Matrix::identity(2));
        let mut b = a.clone();
        assert_eq!(system_hash(&a), system_hash(&b));
        b.k[1] = 1e-300;
        assert_ne!(system_hash(&a), system_hash(&b));
    }
}
