//! Branch continuation: linear exactness, fold traversal on the Duffing
//! oscillator, event detection, and direction independence.

use nalgebra::DVector;

use hb_core::bifurcation::BifurcationKind;
use hb_core::continuation::ContinuationSettings;
use hb_core::harmonic::HarmonicGrid;
use hb_core::solver::{continue_branch, correct_moore_penrose, BranchStatus, Workspace};
use hb_core::stability::Stability;
use hb_testutil::{duffing, duffing_amplitudes, duffing_fold_frequencies, linear_chain_3dof, DuffingParams};

fn duffing_settings(lo: f64, hi: f64) -> ContinuationSettings {
    let mut s = ContinuationSettings::new(lo, hi);
    s.initial_step = 0.01;
    s.max_step = 0.05;
    s
}

#[test]
fn linear_branch_reproduces_receptance() {
    let model = linear_chain_3dof();
    let grid = HarmonicGrid::new(1, 64, 1, 3, 0.5).unwrap();
    let mut settings = ContinuationSettings::new(0.5, 2.0);
    settings.initial_step = 0.02;
    settings.max_step = 0.05;
    let branch = continue_branch(&model, &grid, &settings).unwrap();
    assert_eq!(branch.status, BranchStatus::Completed);
    assert!(branch.points.len() > 20);
    let ws = Workspace::new(&model, &grid).unwrap();
    for p in &branch.points {
        let amp = ws.dof_amplitudes(p.state.coeffs()).unwrap();
        let frf = model.linear_frf(p.omega).unwrap();
        for dof in 0..3 {
            let expected = frf[dof].norm();
            assert!(
                (amp[dof] - expected).abs() <= 1e-8 * (1.0 + expected),
                "dof {dof} at omega {}: {} vs {}",
                p.omega,
                amp[dof],
                expected
            );
        }
        // Linear branches never report bifurcations and are stable.
        assert_eq!(p.stability, Stability::Stable);
    }
    assert!(branch.events.is_empty());
    // Constant-sign fold test along the monotone sweep.
    let signs: Vec<f64> = branch.points.iter().map(|p| p.tests.fold.signum()).collect();
    assert!(signs.windows(2).all(|w| w[0] == w[1]), "fold test changed sign on a linear sweep");
}

#[test]
fn duffing_branch_folds_and_detects_the_fold_pair() {
    let p = DuffingParams::default();
    let model = duffing(p);
    let grid = HarmonicGrid::new(5, 128, 1, 1, 0.6).unwrap();
    let settings = duffing_settings(0.6, 2.2);
    let branch = continue_branch(&model, &grid, &settings).unwrap();
    assert_eq!(branch.status, BranchStatus::Completed);

    // Exactly two fold events, at the oracle frequencies.
    let oracle_folds = duffing_fold_frequencies(p, (0.8, 2.2));
    assert_eq!(oracle_folds.len(), 2);
    let fold_events: Vec<_> = branch
        .events
        .iter()
        .filter(|e| e.kind == BifurcationKind::Fold)
        .collect();
    assert_eq!(fold_events.len(), 2, "events: {:?}", branch.events);
    let mut located: Vec<f64> = fold_events.iter().map(|e| branch.points[e.point_index].omega).collect();
    located.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // The oracle is the single-harmonic amplitude cubic; at N_H = 5 the
    // fold moves by the higher-harmonic correction, a few parts in 1e3.
    for (loc, ora) in located.iter().zip(&oracle_folds) {
        assert!(
            (loc - ora).abs() <= 5e-3 * ora,
            "fold at {loc} vs oracle {ora}"
        );
    }

    // The fold test function changes sign exactly twice along the branch.
    let mut sign_changes = 0;
    for w in branch.points.windows(2) {
        if w[0].tests.fold * w[1].tests.fold < 0.0 {
            sign_changes += 1;
        }
    }
    assert_eq!(sign_changes, 2);

    // No spurious Neimark-Sacker events on the Duffing model.
    assert!(branch.events.iter().all(|e| e.kind != BifurcationKind::NeimarkSacker));

    // Three coexisting solutions inside the bistable window; their
    // amplitudes match the cubic roots.
    let ws = Workspace::new(&model, &grid).unwrap();
    let w_mid = 0.5 * (oracle_folds[0] + oracle_folds[1]);
    let mut crossings = Vec::new();
    for w in branch.points.windows(2) {
        let (w0, w1) = (w[0].omega, w[1].omega);
        if (w0 - w_mid) * (w1 - w_mid) < 0.0 {
            let closer = if (w0 - w_mid).abs() < (w1 - w_mid).abs() { &w[0] } else { &w[1] };
            let z = ws
                .solve_fixed_omega(closer.state.coeffs(), w_mid, &settings)
                .unwrap();
            let amp = ws.dof_amplitudes(&z).unwrap()[0];
            crossings.push(amp);
        }
    }
    crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(crossings.len(), 3, "crossings: {crossings:?}");
    let oracle_amps = duffing_amplitudes(p, w_mid);
    assert_eq!(oracle_amps.len(), 3);
    for (got, want) in crossings.iter().zip(&oracle_amps) {
        // The HB(5) amplitude (max over the period) differs from the
        // single-harmonic root through higher harmonics; a percent-level
        // agreement is all the truncations share.
        assert!((got - want).abs() <= 2e-2 * want, "{got} vs {want}");
    }

    // Stability pattern: the middle branch between the folds is unstable.
    let (f0, f1) = (fold_events[0].point_index.min(fold_events[1].point_index),
                    fold_events[0].point_index.max(fold_events[1].point_index));
    for p in &branch.points[f0 + 1..f1] {
        assert_eq!(p.stability, Stability::Unstable, "expected unstable between folds at {}", p.omega);
    }
    assert_eq!(branch.points[f0.saturating_sub(2)].stability, Stability::Stable);
    assert_eq!(branch.points[(f1 + 2).min(branch.points.len() - 1)].stability, Stability::Stable);
}

#[test]
fn branch_residuals_and_tangent_continuity_hold_everywhere() {
    let model = duffing(DuffingParams::default());
    let grid = HarmonicGrid::new(5, 128, 1, 1, 0.7).unwrap();
    let settings = duffing_settings(0.7, 2.0);
    let branch = continue_branch(&model, &grid, &settings).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    for p in &branch.points {
        let h = ws.residual(p.state.coeffs(), p.omega).unwrap();
        let b = ws.force_coeffs(p.state.coeffs(), p.omega).unwrap();
        assert!(h.norm() <= settings.newton_tol * (1.0 + b.norm()) * 1.001);
    }
    for w in branch.points.windows(2) {
        assert!(w[0].tangent.dot(&w[1].tangent) > 0.0, "tangent flip at omega {}", w[1].omega);
    }
}

#[test]
fn tangent_is_orthogonal_to_jacobian_rows_along_branch() {
    let model = duffing(DuffingParams::default());
    let grid = HarmonicGrid::new(3, 64, 1, 1, 0.8).unwrap();
    let settings = duffing_settings(0.8, 1.8);
    let branch = continue_branch(&model, &grid, &settings).unwrap();
    let ws = Workspace::new(&model, &grid).unwrap();
    let m = grid.coeff_len();
    for p in branch.points.iter().step_by(5) {
        let hz = ws.jacobian_z(p.state.coeffs(), p.omega).unwrap();
        let hw = ws.jacobian_omega(p.state.coeffs(), p.omega).unwrap();
        let mut j = nalgebra::DMatrix::zeros(m, m + 1);
        j.view_mut((0, 0), (m, m)).copy_from(&hz);
        j.column_mut(m).copy_from(&hw);
        let jt = &j * &p.tangent;
        assert!(jt.norm() <= 1e-8 * (1.0 + j.norm()), "J t = {} at omega {}", jt.norm(), p.omega);
    }
}

#[test]
fn corrector_shows_superlinear_residual_decay() {
    let model = duffing(DuffingParams::default());
    let grid = HarmonicGrid::new(5, 128, 1, 1, 1.0).unwrap();
    let settings = duffing_settings(1.0, 2.0);
    let ws = Workspace::new(&model, &grid).unwrap();
    let guess = ws.linear_guess(1.25).unwrap();
    let z = ws.solve_fixed_omega(&guess, 1.25, &settings).unwrap();
    let m = grid.coeff_len();
    let mut y = DVector::zeros(m + 1);
    y.rows_mut(0, m).copy_from(&z);
    y[m] = 1.25;
    let hz = ws.jacobian_z(&z, 1.25).unwrap();
    let hw = ws.jacobian_omega(&z, 1.25).unwrap();
    let t = hb_core::solver::tangent(&hz, &hw, &DVector::from_element(m + 1, 1.0)).unwrap();
    // A step large enough to require several Newton iterations.
    let y_pred = &y + &t * 0.1;
    let out = correct_moore_penrose(&ws, &y_pred, &t, &settings).unwrap();
    let r = &out.residuals;
    assert!(r.len() >= 3, "history too short for a decay check: {r:?}");
    // Quadratic-like contraction over the final iterations: each residual
    // at least squares the previous order of magnitude (up to a generous
    // constant), and decays monotonically by 10x.
    for k in 1..r.len() - 1 {
        if r[k] < 1e-2 && r[k + 1] > 0.0 {
            assert!(r[k + 1] <= 1e6 * r[k] * r[k], "no quadratic contraction: {r:?}");
            assert!(r[k + 1] <= 0.1 * r[k], "slow contraction: {r:?}");
        }
    }
}

#[test]
fn sweep_direction_does_not_change_the_branch() {
    // Both sweeps trace the same solution set. Away from the folds the
    // branch is parametrized by frequency per sheet, so each forward
    // point is re-solved at its exact frequency starting from the nearest
    // backward point; both must land on the same solution.
    let p = DuffingParams::default();
    let model = duffing(p);
    let grid = HarmonicGrid::new(5, 128, 1, 1, 0.8).unwrap();
    let settings = duffing_settings(0.8, 2.0);
    let fwd = continue_branch(&model, &grid, &settings).unwrap();
    let bwd = continue_branch(&model, &grid, &duffing_settings(2.0, 0.8)).unwrap();
    assert_eq!(fwd.status, BranchStatus::Completed);
    assert_eq!(bwd.status, BranchStatus::Completed);
    let ws = Workspace::new(&model, &grid).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for pf in fwd.points.iter().step_by(3) {
        if pf.tests.fold.abs() < 0.05 {
            continue; // fixed-frequency parametrization degenerates at folds
        }
        let nearest = bwd
            .points
            .iter()
            .min_by(|a, b| {
                let da = (a.omega - pf.omega).powi(2)
                    + (a.state.coeffs().norm() - pf.state.coeffs().norm()).powi(2);
                let db = (b.omega - pf.omega).powi(2)
                    + (b.state.coeffs().norm() - pf.state.coeffs().norm()).powi(2);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let re_solved = ws
            .solve_fixed_omega(nearest.state.coeffs(), pf.omega, &settings)
            .unwrap();
        let d = (re_solved - pf.state.coeffs()).norm();
        worst = worst.max(d);
        checked += 1;
    }
    assert!(checked > 20, "too few comparable points");
    assert!(worst < 1e-6, "forward/backward mismatch {worst}");
}
