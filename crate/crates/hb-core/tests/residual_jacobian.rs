//! Residual and Jacobian checks against independent oracles: quadrature
//! Galerkin projection, finite differences, and linear closed forms.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hb_core::continuation::ContinuationSettings;
use hb_core::harmonic::{assemble_a, assemble_a_domega, HarmonicGrid};
use hb_core::solver::Workspace;
use hb_testutil::{
    duffing, duffing_with_dashpot, galerkin_residual_oracle, linear_chain_3dof, DuffingParams,
};

fn random_state(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

#[test]
fn residual_is_exact_for_linear_systems() {
    let model = linear_chain_3dof();
    for n_h in [1, 4] {
        let grid = HarmonicGrid::new(n_h, 256, 1, 3, 0.9).unwrap();
        let ws = Workspace::new(&model, &grid).unwrap();
        let z = ws.linear_guess(0.9).unwrap();
        let h = ws.residual(&z, 0.9).unwrap();
        assert!(h.norm() <= 1e-10, "linear residual {} at N_H = {n_h}", h.norm());
    }
}

#[test]
fn residual_vanishes_at_zero_forcing_equilibrium() {
    let model = duffing(DuffingParams::default()).with_parameter("F", 0.0).unwrap();
    let grid = HarmonicGrid::new(5, 128, 1, 1, 1.2).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let z = DVector::zeros(grid.coeff_len());
    let h = ws.residual(&z, 1.2).unwrap();
    assert_eq!(h.norm(), 0.0);
}

#[test]
fn residual_matches_quadrature_galerkin_oracle() {
    let model = duffing(DuffingParams::default());
    let n_h = 5;
    let n = 256;
    let grid = HarmonicGrid::new(n_h, n, 1, 1, 1.3).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let z = random_state(&mut rng, grid.coeff_len(), 1.0);
        let h = ws.residual(&z, 1.3).unwrap();
        let oracle = galerkin_residual_oracle(&model, &z, 1.3, n_h, 8 * n);
        let err = (&h - &oracle).norm();
        assert!(err <= 1e-10 * (1.0 + oracle.norm()), "residual vs oracle: {err}");
    }
}

#[test]
fn residual_reports_nonlinearity_overflow() {
    let model = duffing(DuffingParams::default());
    let grid = HarmonicGrid::new(3, 64, 1, 1, 1.0).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut z = DVector::zeros(grid.coeff_len());
    z[1] = 1e240; // cubic overflows to inf
    let err = ws.residual(&z, 1.0).unwrap_err();
    assert!(matches!(err, hb_core::HbError::NonFiniteForce { dof: 0, .. }), "got {err}");
}

#[test]
fn jacobian_z_is_a_for_linear_models() {
    let model = linear_chain_3dof();
    let grid = HarmonicGrid::new(3, 128, 1, 3, 1.1).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = random_state(&mut rng, grid.coeff_len(), 2.0);
    let hz = ws.jacobian_z(&z, 1.1).unwrap();
    let a = assemble_a(&model, &grid.with_omega(1.1));
    assert_eq!(hz, a);
}

#[test]
fn jacobian_z_matches_finite_differences() {
    // Velocity-dependent model: both the displacement and velocity chains
    // must agree with differenced residuals.
    let model = duffing_with_dashpot(DuffingParams::default(), 0.02);
    let grid = HarmonicGrid::new(4, 128, 1, 1, 1.4).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let z = random_state(&mut rng, grid.coeff_len(), 1.0);
        let hz = ws.jacobian_z(&z, 1.4).unwrap();
        let fd = hb_testutil::fd_jacobian(|zz| ws.residual(zz, 1.4).unwrap(), &z, 1e-7);
        let err = (&hz - &fd).norm() / (1.0 + hz.norm());
        assert!(err <= 1e-6, "jacobian_z vs fd: {err}");
    }
}

#[test]
fn jacobian_rows_of_linear_dofs_equal_a() {
    // 3-DOF chain with a cubic on dof 1 only: rows/columns of untouched
    // DOFs must coincide with A.
    let mut record = linear_chain_3dof().to_file_record();
    record.elements.push(hb_core::model::NonlinearElement {
        dof_i: 1,
        dof_j: None,
        law: hb_core::model::ElementLaw::Cubic { coefficient: 0.7 },
        parameter: None,
    });
    let model = hb_core::SystemModel::from_file_record(record).unwrap();
    let grid = HarmonicGrid::new(3, 128, 1, 3, 1.2).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_state(&mut rng, grid.coeff_len(), 0.5);
    let hz = ws.jacobian_z(&z, 1.2).unwrap();
    let a = assemble_a(&model, &grid.with_omega(1.2));
    let nc = grid.n_coeffs();
    for b1 in 0..nc {
        for b2 in 0..nc {
            for dof in [0usize, 2] {
                // Rows of linear DOFs.
                assert_eq!(hz[(b1 * 3 + dof, b2 * 3 + 1)], a[(b1 * 3 + dof, b2 * 3 + 1)]);
                // Columns of linear DOFs.
                assert_eq!(hz[(b1 * 3 + 1, b2 * 3 + dof)], a[(b1 * 3 + 1, b2 * 3 + dof)]);
            }
        }
    }
}

#[test]
fn jacobian_omega_displacement_only_is_da_z() {
    let model = duffing(DuffingParams::default());
    let grid = HarmonicGrid::new(4, 128, 1, 1, 1.25).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let z = random_state(&mut rng, grid.coeff_len(), 1.0);
    let hw = ws.jacobian_omega(&z, 1.25).unwrap();
    let da = assemble_a_domega(&model, &grid.with_omega(1.25));
    assert_eq!(hw, &da * &z);
}

#[test]
fn jacobian_omega_matches_finite_differences_with_velocity_elements() {
    let model = duffing_with_dashpot(DuffingParams::default(), 0.03);
    let grid = HarmonicGrid::new(4, 128, 1, 1, 1.4).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..3 {
        let z = random_state(&mut rng, grid.coeff_len(), 1.0);
        let hw = ws.jacobian_omega(&z, 1.4).unwrap();
        let eps = 1e-7 * (1.0 + 1.4_f64);
        let fp = ws.residual(&z, 1.4 + eps).unwrap();
        let fm = ws.residual(&z, 1.4 - eps).unwrap();
        let fd = (fp - fm) / (2.0 * eps);
        let err = (&hw - &fd).norm() / (1.0 + hw.norm());
        assert!(err <= 1e-6, "jacobian_omega vs fd: {err}");
    }
}

#[test]
fn fixed_omega_newton_reaches_linear_frf_from_perturbed_start() {
    let model = linear_chain_3dof();
    let grid = HarmonicGrid::new(2, 64, 1, 3, 1.05).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let settings = ContinuationSettings::new(0.5, 2.0);
    let exact = ws.linear_guess(1.05).unwrap();
    let mut start = exact.clone();
    for (i, v) in start.iter_mut().enumerate() {
        *v += 0.1 * ((i as f64) * 0.7).sin();
    }
    let solved = ws.solve_fixed_omega(&start, 1.05, &settings).unwrap();
    assert!((solved - exact).norm() < 1e-8);
}
