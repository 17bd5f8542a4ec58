//! Harmonic balance residual `h(z, w) = A(w) z - b(z)` with analytic
//! Jacobians, and frequency-response branch continuation.
//!
//! `b(z)` gathers the Fourier coefficients of external minus nonlinear
//! forces through the collocation transform pair; the nonlinearity is
//! evaluated on the time samples of one period (alternating
//! frequency/time evaluation). The Jacobian is
//!
//! ```text
//! h_z = A + G+ (df_nl/dx) G + G+ (df_nl/dv) G (nabla x I)
//! ```
//!
//! assembled DOF-blockwise from the sampled force derivatives; the last
//! term only appears for velocity-dependent elements.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bifurcation::{self, DetectionContext, TestFunctionRecord};
use crate::continuation::{
    moore_penrose_correct, trace_path, ContinuationSettings, ContinuationSystem, CorrectorOutcome,
    PathStatus,
};
use crate::error::{HbError, Result};
use crate::harmonic::{assemble_a, assemble_a_domega, Collocation, FourierState, HarmonicGrid};
use crate::model::SystemModel;
use crate::stability::Stability;

/// Cached operators for residual and Jacobian evaluation at one grid.
/// The collocation basis is frequency-independent and shared; `A(w)` is
/// reassembled at the requested frequency on each call.
#[derive(Clone)]
pub struct Workspace<'m> {
    model: &'m SystemModel,
    grid: HarmonicGrid,
    colloc: Arc<Collocation>,
    /// External forcing in coefficient space (cosine block of the forcing
    /// harmonic), with the `F` parameter applied.
    external: DVector<f64>,
    /// Series harmonic carrying the external force.
    forcing_harmonic: usize,
    /// DOF pairs coupled by at least one element.
    active_pairs: Vec<(usize, usize)>,
}

impl<'m> Workspace<'m> {
    pub fn new(model: &'m SystemModel, grid: &HarmonicGrid) -> Result<Self> {
        Self::with_collocation(model, grid, Arc::new(Collocation::for_grid(grid)))
    }

    pub fn with_collocation(
        model: &'m SystemModel,
        grid: &HarmonicGrid,
        colloc: Arc<Collocation>,
    ) -> Result<Self> {
        if grid.n_dof != model.dof() {
            return Err(HbError::Dimension {
                expected: model.dof(),
                got: grid.n_dof,
                context: "grid DOF count",
            });
        }
        if grid.nu != model.forcing().nu {
            return Err(HbError::Config("grid and forcing subharmonic divisors differ".into()));
        }
        let q = model.forcing().harmonic as usize * grid.nu as usize;
        if q > grid.n_harmonics {
            return Err(HbError::Config(format!(
                "forcing occupies series harmonic {q} but only {} are retained",
                grid.n_harmonics
            )));
        }
        let mut external = DVector::zeros(grid.coeff_len());
        let amp = model.forcing_amplitude();
        for dof in 0..grid.n_dof {
            external[grid.coeff_index(2 * q, dof)] = amp[dof];
        }
        let mut active_pairs: Vec<(usize, usize)> = Vec::new();
        for el in model.elements() {
            let mut push = |p: (usize, usize)| {
                if !active_pairs.contains(&p) {
                    active_pairs.push(p);
                }
            };
            push((el.dof_i, el.dof_i));
            if let Some(j) = el.dof_j {
                push((el.dof_i, j));
                push((j, el.dof_i));
                push((j, j));
            }
        }
        active_pairs.sort_unstable();
        Ok(Self { model, grid: *grid, colloc, external, forcing_harmonic: q, active_pairs })
    }

    /// Same operators bound to a different model value (used for parameter
    /// perturbations; the collocation basis is shared).
    pub fn with_model<'b>(&self, model: &'b SystemModel) -> Result<Workspace<'b>> {
        Workspace::with_collocation(model, &self.grid, Arc::clone(&self.colloc))
    }

    pub fn model(&self) -> &'m SystemModel {
        self.model
    }

    pub fn grid(&self) -> &HarmonicGrid {
        &self.grid
    }

    pub fn collocation(&self) -> &Collocation {
        &self.colloc
    }

    pub fn coeff_len(&self) -> usize {
        self.grid.coeff_len()
    }

    /// Coefficient vector of the external forcing (the constant part of `b`).
    pub fn external_coeffs(&self) -> &DVector<f64> {
        &self.external
    }

    /// Nonlinear force on the time grid, DOF-major. Fails with the offending
    /// DOF when the nonlinearity overflows.
    fn sampled_nonlinear_force(
        &self,
        x_samples: &DVector<f64>,
        v_samples: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.grid.n_dof;
        let ns = self.colloc.n_samples();
        let mut out = DVector::zeros(n * ns);
        if self.model.elements().is_empty() {
            return Ok(out);
        }
        let mut x = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        for j in 0..ns {
            for dof in 0..n {
                x[dof] = x_samples[dof * ns + j];
                v[dof] = v_samples[dof * ns + j];
            }
            let f = self.model.eval_nonlinear_force(&x, &v);
            for dof in 0..n {
                if !f[dof].is_finite() {
                    return Err(HbError::NonFiniteForce { dof, sample: j });
                }
                out[dof * ns + j] = f[dof];
            }
        }
        Ok(out)
    }

    /// Force coefficients `b(z)` (external minus nonlinear).
    pub fn force_coeffs(&self, z: &DVector<f64>, omega: f64) -> Result<DVector<f64>> {
        let n = self.grid.n_dof;
        let x = self.colloc.inverse_transform(z, n)?;
        let v = self.colloc.velocity_samples(z, n, omega / self.grid.nu as f64)?;
        let fnl = self.sampled_nonlinear_force(&x, &v)?;
        let bnl = self.colloc.forward_transform(&fnl, n)?;
        Ok(&self.external - bnl)
    }

    /// Residual `h(z, w) = A(w) z - b(z)`.
    pub fn residual(&self, z: &DVector<f64>, omega: f64) -> Result<DVector<f64>> {
        let a = assemble_a(self.model, &self.grid.with_omega(omega));
        Ok(&a * z - self.force_coeffs(z, omega)?)
    }

    /// Analytic Jacobian `dh/dz`.
    pub fn jacobian_z(&self, z: &DVector<f64>, omega: f64) -> Result<DMatrix<f64>> {
        let n = self.grid.n_dof;
        let nc = self.grid.n_coeffs();
        let ns = self.colloc.n_samples();
        let base_freq = omega / self.grid.nu as f64;
        let mut h = assemble_a(self.model, &self.grid.with_omega(omega));
        if self.active_pairs.is_empty() {
            return Ok(h);
        }
        let x = self.colloc.inverse_transform(z, n)?;
        let v = self.colloc.velocity_samples(z, n, base_freq)?;
        // Per-sample force derivatives for the coupled DOF pairs.
        let np = self.active_pairs.len();
        let mut dx = DMatrix::zeros(ns, np);
        let mut dv = DMatrix::zeros(ns, np);
        let mut xs = DVector::zeros(n);
        let mut vs = DVector::zeros(n);
        let mut any_velocity = false;
        for j in 0..ns {
            for dof in 0..n {
                xs[dof] = x[dof * ns + j];
                vs[dof] = v[dof * ns + j];
            }
            let (jx, jv) = self.model.eval_nonlinear_jacobians(&xs, &vs);
            for (p, &(r, c)) in self.active_pairs.iter().enumerate() {
                dx[(j, p)] = jx[(r, c)];
                dv[(j, p)] = jv[(r, c)];
                if jv[(r, c)] != 0.0 {
                    any_velocity = true;
                }
            }
        }
        let basis = self.colloc.basis();
        let scale = 2.0 / ns as f64;
        // dbasis columns carry phase derivatives; velocity chain needs w/nu.
        for (p, &(r, c)) in self.active_pairs.iter().enumerate() {
            // (2/N) basis^T diag(dx) basis, scattered into the (r, c) blocks.
            let mut scaled = basis.clone();
            for j in 0..ns {
                let w = dx[(j, p)];
                for b in 0..nc {
                    scaled[(j, b)] *= w;
                }
            }
            let block = basis.transpose() * &scaled * scale;
            for b1 in 0..nc {
                for b2 in 0..nc {
                    h[(b1 * n + r, b2 * n + c)] += block[(b1, b2)];
                }
            }
            if any_velocity {
                let dbasis = velocity_basis(&self.colloc, base_freq);
                let mut vscaled = dbasis;
                for j in 0..ns {
                    let w = dv[(j, p)];
                    for b in 0..nc {
                        vscaled[(j, b)] *= w;
                    }
                }
                let vblock = basis.transpose() * &vscaled * scale;
                for b1 in 0..nc {
                    for b2 in 0..nc {
                        h[(b1 * n + r, b2 * n + c)] += vblock[(b1, b2)];
                    }
                }
            }
        }
        Ok(h)
    }

    /// Analytic `dh/domega`. On the normalized time grid the displacement
    /// samples do not depend on `w`, so the only nonlinear contribution is
    /// the velocity chain `(df_nl/dv) * dv/dw` with `dv/dw = v/w`.
    pub fn jacobian_omega(&self, z: &DVector<f64>, omega: f64) -> Result<DVector<f64>> {
        let n = self.grid.n_dof;
        let ns = self.colloc.n_samples();
        let da = assemble_a_domega(self.model, &self.grid.with_omega(omega));
        let mut h_w = &da * z;
        if self.model.has_velocity_elements() {
            let x = self.colloc.inverse_transform(z, n)?;
            let v = self.colloc.velocity_samples(z, n, omega / self.grid.nu as f64)?;
            let mut xs = DVector::zeros(n);
            let mut vs = DVector::zeros(n);
            let mut corr = DVector::zeros(n * ns);
            for j in 0..ns {
                for dof in 0..n {
                    xs[dof] = x[dof * ns + j];
                    vs[dof] = v[dof * ns + j];
                }
                let (_, jv) = self.model.eval_nonlinear_jacobians(&xs, &vs);
                let dfdw = jv * &vs / omega;
                for dof in 0..n {
                    corr[dof * ns + j] = dfdw[dof];
                }
            }
            // b carries -f_nl, so dh/dw gains +G+ (df_nl/dw).
            h_w += self.colloc.forward_transform(&corr, n)?;
        }
        Ok(h_w)
    }

    /// Maximum displacement magnitude of each DOF over one period. The
    /// best collocation sample is refined by Newton iteration on the
    /// series derivative, so the result is the true extremum of the
    /// band-limited signal, not the sampled maximum.
    pub fn dof_amplitudes(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.grid.n_dof;
        let nc = self.grid.n_coeffs();
        if z.len() != nc * n {
            return Err(HbError::Dimension { expected: nc * n, got: z.len(), context: "amplitudes" });
        }
        let ns = self.colloc.n_samples();
        let x = self.colloc.inverse_transform(z, n)?;
        let n_h = self.grid.n_harmonics;
        let mut amp = DVector::zeros(n);
        for dof in 0..n {
            let eval = |theta: f64| -> (f64, f64, f64) {
                let mut val = z[dof] / 2.0_f64.sqrt();
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for k in 1..=n_h {
                    let kf = k as f64;
                    let (s, c) = (kf * theta).sin_cos();
                    let sk = z[(2 * k - 1) * n + dof];
                    let ck = z[2 * k * n + dof];
                    val += sk * s + ck * c;
                    d1 += kf * (sk * c - ck * s);
                    d2 -= kf * kf * (sk * s + ck * c);
                }
                (val, d1, d2)
            };
            let mut best_j = 0;
            let mut best = 0.0_f64;
            for j in 0..ns {
                let v = x[dof * ns + j].abs();
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            let h = 2.0 * std::f64::consts::PI / ns as f64;
            let mut theta = best_j as f64 * h;
            let sign = x[dof * ns + best_j].signum();
            for _ in 0..20 {
                let (_, d1, d2) = eval(theta);
                if d2.abs() <= f64::MIN_POSITIVE || !d1.is_finite() {
                    break;
                }
                let step = (d1 / d2).clamp(-h, h);
                theta -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let (val, _, curv) = eval(theta);
            // Keep the refinement only if it is a genuine extremum of the
            // right kind and does not undershoot the samples.
            amp[dof] = if sign * curv <= 0.0 { best.max(val.abs()) } else { best };
        }
        Ok(amp)
    }

    /// Harmonic-1 packing of the linear receptance at `omega`, the
    /// continuation's initial guess.
    pub fn linear_guess(&self, omega: f64) -> Result<DVector<f64>> {
        let n = self.grid.n_dof;
        let q = self.forcing_harmonic;
        let x = self.model.linear_frf(self.model.forcing().harmonic as f64 * omega)?;
        let mut z = DVector::zeros(self.grid.coeff_len());
        for dof in 0..n {
            z[self.grid.coeff_index(2 * q - 1, dof)] = -x[dof].im;
            z[self.grid.coeff_index(2 * q, dof)] = x[dof].re;
        }
        Ok(z)
    }

    /// Plain Newton solve of `h(z, w) = 0` at fixed frequency.
    pub fn solve_fixed_omega(
        &self,
        z0: &DVector<f64>,
        omega: f64,
        settings: &ContinuationSettings,
    ) -> Result<DVector<f64>> {
        let mut z = z0.clone();
        for _ in 0..settings.max_corrector_iterations {
            let r = self.residual(&z, omega)?;
            let b = self.force_coeffs(&z, omega)?;
            if r.norm() <= settings.newton_tol * (1.0 + b.norm()) {
                return Ok(z);
            }
            let j = self.jacobian_z(&z, omega)?;
            let dz = j
                .lu()
                .solve(&r)
                .ok_or(HbError::Singular { context: "fixed-frequency Newton" })?;
            z -= dz;
        }
        let r = self.residual(&z, omega)?;
        let b = self.force_coeffs(&z, omega)?;
        if r.norm() <= settings.newton_tol * (1.0 + b.norm()) {
            Ok(z)
        } else {
            Err(HbError::CorrectorFailed {
                iterations: settings.max_corrector_iterations,
                residual: r.norm(),
            })
        }
    }
}

fn velocity_basis(colloc: &Collocation, base_freq: f64) -> DMatrix<f64> {
    let ns = colloc.n_samples();
    let nc = 2 * colloc.n_harmonics() + 1;
    let mut out = DMatrix::zeros(ns, nc);
    for b in 1..nc {
        let mut e = DVector::zeros(nc);
        e[b] = 1.0;
        let col = colloc.velocity_samples(&e, 1, base_freq).expect("basis column");
        for j in 0..ns {
            out[(j, b)] = col[j];
        }
    }
    out
}

/// Frequency-response family: unknowns `[z; omega]`.
pub struct FrfSystem<'w, 'm> {
    pub ws: &'w Workspace<'m>,
}

impl<'w, 'm> FrfSystem<'w, 'm> {
    pub fn split<'y>(&self, y: &'y DVector<f64>) -> (nalgebra::DVectorView<'y, f64>, f64) {
        let m = self.ws.coeff_len();
        (y.rows(0, m), y[m])
    }
}

impl<'w, 'm> ContinuationSystem for FrfSystem<'w, 'm> {
    fn residual_dim(&self) -> usize {
        self.ws.coeff_len()
    }

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.ws.coeff_len();
        let z = y.rows(0, m).into_owned();
        self.ws.residual(&z, y[m])
    }

    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.ws.coeff_len();
        let z = y.rows(0, m).into_owned();
        let omega = y[m];
        let hz = self.ws.jacobian_z(&z, omega)?;
        let hw = self.ws.jacobian_omega(&z, omega)?;
        let mut j = DMatrix::zeros(m, m + 1);
        j.view_mut((0, 0), (m, m)).copy_from(&hz);
        j.column_mut(m).copy_from(&hw);
        Ok(j)
    }

    fn converged(&self, y: &DVector<f64>, r: &DVector<f64>, tol: f64) -> Result<bool> {
        let m = self.ws.coeff_len();
        let z = y.rows(0, m).into_owned();
        let b = self.ws.force_coeffs(&z, y[m])?;
        Ok(r.norm() <= tol * (1.0 + b.norm()))
    }
}

/// Tangent at `(z, omega)` through the bordered solve with the previous
/// tangent as normalization row.
pub fn tangent(
    h_z: &DMatrix<f64>,
    h_omega: &DVector<f64>,
    t_prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = h_z.nrows();
    let mut j = DMatrix::zeros(m, m + 1);
    j.view_mut((0, 0), (m, m)).copy_from(h_z);
    j.column_mut(m).copy_from(h_omega);
    crate::continuation::tangent_from_jacobian(&j, t_prev)
}

/// Moore-Penrose correction of a predicted `[z; omega]` point.
pub fn correct_moore_penrose(
    ws: &Workspace,
    y_pred: &DVector<f64>,
    v0: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<CorrectorOutcome> {
    let sys = FrfSystem { ws };
    moore_penrose_correct(&sys, y_pred, v0, settings)
}

/// One converged branch point with stability and test-function metadata.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub state: FourierState,
    pub omega: f64,
    /// Unit tangent of the path at this point, `[dz; domega]`.
    pub tangent: DVector<f64>,
    pub stability: Stability,
    /// Selected Floquet exponents (2n values).
    pub floquet: Vec<nalgebra::Complex<f64>>,
    pub tests: TestFunctionRecord,
}

impl BranchPoint {
    pub fn unknowns(&self) -> DVector<f64> {
        let m = self.state.coeffs().len();
        let mut y = DVector::zeros(m + 1);
        y.rows_mut(0, m).copy_from(self.state.coeffs());
        y[m] = self.omega;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchStatus {
    /// Swept the whole frequency window.
    Completed,
    /// The branch left the window through the start boundary.
    LeftWindow,
    /// Step underflow; partial result.
    StepUnderflow,
    /// Step cap; partial result.
    MaxSteps,
}

impl BranchStatus {
    pub fn is_partial(&self) -> bool {
        matches!(self, BranchStatus::StepUnderflow | BranchStatus::MaxSteps)
    }
}

#[derive(Debug, Clone)]
pub struct BranchEvent {
    pub kind: bifurcation::BifurcationKind,
    /// Index of the refined point inside `Branch::points`.
    pub point_index: usize,
}

/// An ordered frequency-response branch with located bifurcation events.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub events: Vec<BranchEvent>,
    pub status: BranchStatus,
}

/// Continues the harmonically forced response from `omega_start` to
/// `omega_end`, traversing folds, classifying stability per point and
/// localizing fold / branch-point / Neimark-Sacker events.
pub fn continue_branch(
    model: &SystemModel,
    grid: &HarmonicGrid,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    settings.validate()?;
    let ws = Workspace::new(model, grid)?;
    let omega0 = settings.omega_start;
    let guess = ws.linear_guess(omega0)?;
    let z0 = ws.solve_fixed_omega(&guess, omega0, settings)?;
    let m = ws.coeff_len();
    let mut y0 = DVector::zeros(m + 1);
    y0.rows_mut(0, m).copy_from(&z0);
    y0[m] = omega0;

    let dir = (settings.omega_end - settings.omega_start).signum();
    let span = (settings.omega_end - settings.omega_start).abs();
    let mut orient = DVector::zeros(m + 1);
    orient[m] = dir;
    let mut left_window = false;
    let sys = FrfSystem { ws: &ws };
    let (path, status) = trace_path(
        &sys,
        y0,
        DVector::from_element(m + 1, 1.0),
        &orient,
        settings,
        |p| {
            let w = p.y[m];
            if (w - settings.omega_end) * dir >= 0.0 {
                return true;
            }
            if (w - settings.omega_start) * dir < -0.25 * span {
                left_window = true;
                return true;
            }
            false
        },
    )?;

    let ctx = DetectionContext::new(m);
    let mut points = Vec::with_capacity(path.len());
    for p in &path {
        points.push(bifurcation::evaluate_branch_point(&ws, &p.y, &p.tangent, &ctx)?);
    }

    let events = bifurcation::detect_and_locate(&ws, &mut points, &ctx, settings)?;

    let status = match status {
        PathStatus::Window if left_window => BranchStatus::LeftWindow,
        PathStatus::Window => BranchStatus::Completed,
        PathStatus::StepUnderflow => BranchStatus::StepUnderflow,
        PathStatus::MaxSteps => BranchStatus::MaxSteps,
    };
    Ok(Branch { points, events, status })
}
