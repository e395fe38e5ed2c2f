use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lognorm_grid::assembly::{
    assemble_closed_loop, assemble_open_loop, equilibrium, permutation_matrix, DroopConfig,
    RoleAssignment,
};
use lognorm_grid::linalg::{eigenvalues, expm, Matrix};
use lognorm_grid::lognorm::{
    log_norm, matrix_two_norm, pseudospectral_abscissa_lower_bound, spectral_abscissa,
};
use lognorm_grid::simulator::{
    dini_check, integrate, integrate_with_load_steps, AffineSystem, LoadStep,
};
use lognorm_grid::topology::{MicrogridGraph, NodeId, ParamRanges};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let data = (0..n * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_row_major(n, n, data)
}

fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..40 {
        let n = rng.random_range(1..=15);
        let b = random_matrix(&mut rng, n);
        let mut ours: Vec<_> = eigenvalues(&b).unwrap();
        let mut theirs: Vec<_> = na(&b).complex_eigenvalues().iter().cloned().collect();
        let key = |z: &num_complex::Complex64| (z.re, z.im);
        ours.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        theirs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        for (a, t) in ours.iter().zip(&theirs) {
            assert!(
                (a.re - t.re).abs() < 1e-8 && (a.im - t.im).abs() < 1e-8,
                "{a} vs {t}"
            );
        }
    }
}

#[test]
fn norms_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let n = rng.random_range(1..=20);
        let b = random_matrix(&mut rng, n);
        let nb = na(&b);
        let sym = (&nb + nb.transpose()) * 0.5;
        assert_relative_eq!(
            log_norm(&b).unwrap(),
            sym.symmetric_eigen().eigenvalues.max(),
            epsilon = 1e-10
        );
        let sv = nb.singular_values().max();
        assert_relative_eq!(matrix_two_norm(&b).unwrap(), sv, max_relative = 1e-10);

        // any unit vector gives a lower bound on the 2-norm
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y = b.matvec(&x);
            let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(yn / xn <= sv * (1.0 + 1e-12));
        }
    }
}

#[test]
fn expm_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.random_range(1..=10);
        let b = random_matrix(&mut rng, n).scale(rng.random_range(0.1..3.0));
        let ours = expm(&b).unwrap();
        let theirs = na(&b).exp();
        let scale = theirs.norm();
        assert!(
            na(&ours).relative_eq(&theirs, 1e-11 * scale, 1e-10),
            "{}",
            (na(&ours) - &theirs).norm()
        );
    }
}

#[test]
fn pseudospectral_bound_brackets_abscissa() {
    let b = Matrix::from_rows(&[[-1.0, 50.0], [0.0, -2.0]]);
    let alpha = spectral_abscissa(&b).unwrap();
    let mu = log_norm(&b).unwrap();
    let eps = 1e-2;
    let est = pseudospectral_abscissa_lower_bound(&b, eps, 200, 5).unwrap();
    assert!(est >= alpha - 1e-12);
    assert!(est <= mu + eps + 1e-12);
    // strong nonnormality: tiny perturbations move eigenvalues by far more than eps
    assert!(est - alpha > 10.0 * eps);
}

#[test]
fn role_relabelling_is_a_similarity() {
    let g = MicrogridGraph::generate(6, &ParamRanges::default(), 4).unwrap();
    let m = g.edge_count();
    let n = g.node_count();
    let droop = DroopConfig::uniform(n, 48.0, -12.0, 25.0);
    let roles = RoleAssignment::with_producers(n, &[NodeId(3), NodeId(5)]).unwrap();
    let sys = assemble_closed_loop(&g, &roles, &droop).unwrap();

    // B in original node order, built from the open-loop matrix
    let mut direct = assemble_open_loop(&g).unwrap().a;
    let caps = g.capacitances();
    for p in [3, 5] {
        direct[(m + p, m + p)] = droop.gains[p] / caps[p];
    }

    let mut t = Matrix::identity(m + n);
    t.set_block(m, m, &permutation_matrix(&roles, n).unwrap().transpose());
    let back = t.matmul(&sys.b).matmul(&t.transpose());
    assert_eq!(back, direct);
    assert_relative_eq!(
        log_norm(&back).unwrap(),
        log_norm(&sys.b).unwrap(),
        max_relative = 1e-12
    );
    let scale = matrix_two_norm(&sys.b).unwrap();
    assert_relative_eq!(
        spectral_abscissa(&back).unwrap(),
        spectral_abscissa(&sys.b).unwrap(),
        epsilon = 1e-9 * scale
    );
}

#[test]
fn homogeneous_trajectories_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = random_matrix(&mut rng, 5).shift_diagonal(-3.0);
    let sys = AffineSystem::homogeneous(b);
    let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
    let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let tx = integrate(&sys, &x, 1.0, 0.01).unwrap();
    let ty = integrate(&sys, &y, 1.0, 0.01).unwrap();
    let tc = integrate(&sys, &comb, 1.0, 0.01).unwrap();
    for ((a, b), c) in tx
        .final_state()
        .iter()
        .zip(ty.final_state())
        .zip(tc.final_state())
    {
        assert_relative_eq!(2.0 * a - 0.5 * b, *c, epsilon = 1e-12);
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let g = MicrogridGraph::generate(8, &ParamRanges::default(), 21).unwrap();
    let roles = RoleAssignment::with_producers(8, &[NodeId(0), NodeId(4)]).unwrap();
    let sys =
        assemble_closed_loop(&g, &roles, &DroopConfig::uniform(8, 48.0, -20.0, 40.0)).unwrap();
    let z = equilibrium(&sys).unwrap();
    let tr = integrate(&sys, &z, 1e-3, 1e-6).unwrap();
    for (a, b) in tr.final_state().iter().zip(&z) {
        assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn dini_rate_reaches_mu_on_nonnormal_start() {
    let b = Matrix::from_rows(&[[-1.0, 4.0], [0.0, -1.0]]);
    let mu = log_norm(&b).unwrap();
    // start along the top eigenvector of the symmetric part, where growth is steepest
    let y0 = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
    let sys = AffineSystem::homogeneous(b);
    let tr = integrate(&sys, &y0, 2.0, 1e-4).unwrap();
    let rep = dini_check(&tr, &sys).unwrap();
    assert!(rep.holds);
    assert!((rep.max_rate - mu).abs() < 1e-3, "{} vs {mu}", rep.max_rate);
    assert_eq!(rep.t_max, 0.0);
}

#[test]
fn load_step_settles_at_new_equilibrium() {
    let g = MicrogridGraph::generate(5, &ParamRanges::default(), 8).unwrap();
    let roles = RoleAssignment::with_producers(5, &[NodeId(0)]).unwrap();
    let droop = DroopConfig::uniform(5, 48.0, -30.0, 20.0);
    let sys = assemble_closed_loop(&g, &roles, &droop).unwrap();
    let z0 = equilibrium(&sys).unwrap();
    let step = LoadStep {
        time: 0.01,
        node: 3,
        load: 80.0,
    };
    let tr = integrate_with_load_steps(&g, &sys, &z0, 0.3, 1e-6, &[step]).unwrap();

    let mut after = droop.clone();
    after.loads[3] = 80.0;
    let target = equilibrium(&assemble_closed_loop(&g, &roles, &after).unwrap()).unwrap();
    for (a, b) in tr.final_state().iter().zip(&target) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
    }
    // the load was actually applied
    assert!((tr.final_state()[sys.lines + 3] - z0[sys.lines + 3]).abs() > 1e-3);
}
