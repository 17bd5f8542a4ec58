//! Time-domain reference computations: implicit Newmark integration of
//! the full nonlinear equations, Floquet multipliers from the variational
//! monodromy matrix, and swept-sine envelopes.
//!
//! These paths are deliberately independent of the frequency-domain
//! solver: they integrate the second-order equations directly and are
//! used to cross-validate balance solutions and Hill exponents.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{HbError, Result};
use crate::harmonic::{FourierState, HarmonicGrid};
use crate::model::SystemModel;
use crate::stability::eig_general;

type C64 = Complex<f64>;

/// Newmark parameters; average acceleration is unconditionally stable for
/// linear systems and second-order accurate.
const BETA: f64 = 0.25;
const GAMMA: f64 = 0.5;
/// Inner Newton tolerance scale per step.
const STEP_TOL: f64 = 1e-10;
const MAX_INNER_ITERS: usize = 30;
const MAX_HALVINGS: usize = 12;

/// Sampled trajectory of all DOFs.
#[derive(Debug, Clone)]
pub struct TimeHistory {
    pub times: Vec<f64>,
    /// `n x len(times)` displacement samples.
    pub displacement: DMatrix<f64>,
    /// `n x len(times)` velocity samples.
    pub velocity: DMatrix<f64>,
    pub scheme: &'static str,
    pub step: f64,
}

impl TimeHistory {
    /// Peak `|x|` of `dof` over the trailing `n_keep` samples, refined by a
    /// parabola through the best sample and its neighbours.
    pub fn peak_amplitude(&self, dof: usize, n_keep: usize) -> f64 {
        let len = self.times.len();
        let start = len.saturating_sub(n_keep);
        let mut best = start;
        for j in start..len {
            if self.displacement[(dof, j)].abs() > self.displacement[(dof, best)].abs() {
                best = j;
            }
        }
        let y0 = self.displacement[(dof, best)];
        if best == 0 || best + 1 >= len {
            return y0.abs();
        }
        let ym = self.displacement[(dof, best - 1)];
        let yp = self.displacement[(dof, best + 1)];
        let denom = ym - 2.0 * y0 + yp;
        if denom.abs() < f64::MIN_POSITIVE {
            return y0.abs();
        }
        let delta = 0.5 * (ym - yp) / denom;
        (y0 - 0.25 * (ym - yp) * delta).abs()
    }
}

/// One implicit Newmark step of the forced nonlinear system. Solves for
/// `x1` by Newton iteration; halves the step internally on divergence.
#[allow(clippy::too_many_arguments)]
fn newmark_step(
    model: &SystemModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    a0: &DVector<f64>,
    t0: f64,
    dt: f64,
    f_ext: &dyn Fn(f64) -> DVector<f64>,
    force_scale: f64,
    depth: usize,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let a1c = 1.0 / (BETA * dt * dt);
    let a2c = 1.0 / (BETA * dt);
    let a3c = 1.0 / (2.0 * BETA) - 1.0;
    let t1 = t0 + dt;
    let f1 = f_ext(t1);
    // Predictor: constant acceleration.
    let mut x1 = x0 + v0 * dt + a0 * (0.5 * dt * dt);
    let mut converged = false;
    for _ in 0..MAX_INNER_ITERS {
        let acc = (&x1 - x0) * a1c - v0 * a2c - a0 * a3c;
        let vel = v0 + (a0 * (1.0 - GAMMA) + &acc * GAMMA) * dt;
        let fnl = model.eval_nonlinear_force(&x1, &vel);
        let inertia = model.mass() * &acc;
        let r = &inertia + model.damping() * &vel + model.stiffness() * &x1 + fnl - &f1;
        if !r.iter().all(|x| x.is_finite()) {
            break;
        }
        // The inertia term is O(x / dt^2), so the attainable residual floor
        // scales with it; an absolute tolerance would stall at fine steps.
        let r_scale = force_scale + inertia.norm() + (model.stiffness() * &x1).norm();
        if r.norm() <= STEP_TOL * r_scale {
            converged = true;
            break;
        }
        let (jx, jv) = model.eval_nonlinear_jacobians(&x1, &vel);
        let jac = model.mass() * a1c
            + (model.damping() + &jv) * (GAMMA * a2c)
            + model.stiffness()
            + jx;
        let dx = jac
            .lu()
            .solve(&r)
            .ok_or(HbError::Singular { context: "Newmark effective stiffness" })?;
        let stagnated = dx.norm() <= 1e-15 * (1.0 + x1.norm());
        x1 -= dx;
        if stagnated {
            converged = true;
            break;
        }
    }
    if !converged {
        if depth >= MAX_HALVINGS {
            return Err(HbError::Integration(format!(
                "inner Newton diverged at t = {t0:.6e} even at dt = {dt:.3e}"
            )));
        }
        // Two half steps.
        let half = dt / 2.0;
        let (xm, vm, am) =
            newmark_step(model, x0, v0, a0, t0, half, f_ext, force_scale, depth + 1)?;
        return newmark_step(model, &xm, &vm, &am, t0 + half, half, f_ext, force_scale, depth + 1);
    }
    let acc = (&x1 - x0) * a1c - v0 * a2c - a0 * a3c;
    let vel = v0 + (a0 * (1.0 - GAMMA) + &acc * GAMMA) * dt;
    Ok((x1, vel, acc))
}

fn initial_acceleration(
    model: &SystemModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    f0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rhs = f0
        - model.damping() * v0
        - model.stiffness() * x0
        - model.eval_nonlinear_force(x0, v0);
    model
        .mass()
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(HbError::Singular { context: "initial acceleration" })
}

/// Integrates the forced system with a general forcing law, recording
/// every step.
pub fn integrate_forced(
    model: &SystemModel,
    x0: DVector<f64>,
    v0: DVector<f64>,
    t_end: f64,
    dt: f64,
    f_ext: impl Fn(f64) -> DVector<f64>,
) -> Result<TimeHistory> {
    let n = model.dof();
    let steps = (t_end / dt).round() as usize;
    let force_scale = 1.0 + f_ext(0.0).norm().max(f_ext(0.25 * t_end).norm());
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = DMatrix::zeros(n, steps + 1);
    let mut vs = DMatrix::zeros(n, steps + 1);
    let mut x = x0;
    let mut v = v0;
    let mut a = initial_acceleration(model, &x, &v, &f_ext(0.0))?;
    times.push(0.0);
    xs.column_mut(0).copy_from(&x);
    vs.column_mut(0).copy_from(&v);
    for s in 0..steps {
        let t = s as f64 * dt;
        let (x1, v1, a1) = newmark_step(model, &x, &v, &a, t, dt, &f_ext, force_scale, 0)?;
        x = x1;
        v = v1;
        a = a1;
        times.push(t + dt);
        xs.column_mut(s + 1).copy_from(&x);
        vs.column_mut(s + 1).copy_from(&v);
    }
    Ok(TimeHistory { times, displacement: xs, velocity: vs, scheme: "newmark-average", step: dt })
}

/// Integrates `n_periods` of the harmonically forced response at `omega`.
pub fn newmark_integrate(
    model: &SystemModel,
    x0: DVector<f64>,
    v0: DVector<f64>,
    omega: f64,
    n_periods: usize,
    steps_per_period: usize,
) -> Result<TimeHistory> {
    if steps_per_period < 20 {
        return Err(HbError::Config("need at least 20 steps per period".into()));
    }
    let nu = model.forcing().nu as f64;
    let period = 2.0 * std::f64::consts::PI * nu / omega;
    let dt = period / steps_per_period as f64;
    let amp = model.forcing_amplitude();
    let h = model.forcing().harmonic as f64;
    integrate_forced(model, x0, v0, period * n_periods as f64, dt, move |t| {
        &amp * (h * omega * t).cos()
    })
}

/// Monodromy matrix of the variational equations around a balance
/// solution, plus the Floquet exponents `log(mu)/T` on the principal
/// branch (imaginary parts folded into `(-w/2nu, w/2nu]`).
pub fn monodromy(
    model: &SystemModel,
    state: &FourierState,
    grid: &HarmonicGrid,
    steps_per_period: usize,
) -> Result<(DMatrix<f64>, Vec<C64>)> {
    let n = model.dof();
    let period = grid.period();
    let dt = period / steps_per_period as f64;
    let a1c = 1.0 / (BETA * dt * dt);
    let a2c = 1.0 / (BETA * dt);
    let a3c = 1.0 / (2.0 * BETA) - 1.0;

    // Column blocks [dx; dv] of the transition matrix, advanced together.
    let mut dx = DMatrix::<f64>::zeros(n, 2 * n);
    let mut dv = DMatrix::<f64>::zeros(n, 2 * n);
    for i in 0..n {
        dx[(i, i)] = 1.0;
        dv[(i, n + i)] = 1.0;
    }
    // Initial variational accelerations: M da = -(C + Jv) dv - (K + Jx) dx.
    let (x_orb, v_orb) = state.evaluate(grid, 0.0);
    let (jx0, jv0) = model.eval_nonlinear_jacobians(&x_orb, &v_orb);
    let mass_lu = model.mass().clone().lu();
    let mut da = mass_lu
        .solve(&(-((model.damping() + &jv0) * &dv + (model.stiffness() + &jx0) * &dx)))
        .ok_or(HbError::Singular { context: "variational initial acceleration" })?;

    for s in 0..steps_per_period {
        let t1 = (s + 1) as f64 * dt;
        let (x1, v1) = state.evaluate(grid, t1);
        let (jx, jv) = model.eval_nonlinear_jacobians(&x1, &v1);
        let ct = model.damping() + jv;
        let kt = model.stiffness() + jx;
        let keff = model.mass() * a1c + &ct * (GAMMA * a2c) + &kt;
        // r0 collects the history terms of the acceleration update.
        let r0 = &dx * a1c + &dv * a2c + &da * a3c;
        let rhs = model.mass() * &r0 - &ct * (&dv + &da * (dt * (1.0 - GAMMA)) - &r0 * (dt * GAMMA));
        let dx1 = keff
            .lu()
            .solve(&rhs)
            .ok_or(HbError::Singular { context: "variational Newmark step" })?;
        let da1 = &dx1 * a1c - &r0;
        let dv1 = &dv + (&da * (1.0 - GAMMA) + &da1 * GAMMA) * dt;
        dx = dx1;
        dv = dv1;
        da = da1;
    }

    let mut phi = DMatrix::zeros(2 * n, 2 * n);
    phi.view_mut((0, 0), (n, 2 * n)).copy_from(&dx);
    phi.view_mut((n, 0), (n, 2 * n)).copy_from(&dv);

    let (multipliers, _) = eig_general(&phi)?;
    let exponents = multipliers
        .iter()
        .map(|mu| {
            let l = mu.ln() / period;
            C64::new(l.re, l.im)
        })
        .collect();
    Ok((phi, exponents))
}

/// Per-cycle maximum-amplitude envelope of a swept-sine response.
#[derive(Debug, Clone)]
pub struct SweptSineEnvelope {
    /// Mid-cycle times.
    pub times: Vec<f64>,
    /// Instantaneous excitation frequency at mid-cycle (rad/s).
    pub omegas: Vec<f64>,
    /// `n x cycles` peak `|x|` per excitation cycle.
    pub envelope: DMatrix<f64>,
}

/// Linear swept-sine excitation from `omega_range.0` to `omega_range.1` at
/// `sweep_rate` (rad/s per second), sampled at `sample_rate` Hz. The
/// forcing amplitude is the model's (scaled by `F` when registered),
/// optionally overridden by `forcing`.
pub fn swept_sine(
    model: &SystemModel,
    forcing: Option<f64>,
    sweep_rate: f64,
    omega_range: (f64, f64),
    sample_rate: f64,
) -> Result<SweptSineEnvelope> {
    let (w_lo, w_hi) = omega_range;
    if !(w_hi > w_lo && w_lo > 0.0 && sweep_rate > 0.0) {
        return Err(HbError::Config("invalid sweep range or rate".into()));
    }
    let h = model.forcing().harmonic as f64;
    let f_max = w_hi * h / (2.0 * std::f64::consts::PI);
    if sample_rate < 50.0 * f_max {
        return Err(HbError::Config(format!(
            "sample rate {sample_rate} Hz below 50x the peak excitation frequency ({f_max} Hz)"
        )));
    }
    let scaled;
    let model = match forcing {
        Some(f) => {
            scaled = model.with_parameter("F", f)?;
            &scaled
        }
        None => model,
    };
    let amp = model.forcing_amplitude();
    let duration = (w_hi - w_lo) / sweep_rate;
    let dt = 1.0 / sample_rate;
    let phase = move |t: f64| w_lo * t + 0.5 * sweep_rate * t * t;
    let history = integrate_forced(
        model,
        DVector::zeros(model.dof()),
        DVector::zeros(model.dof()),
        duration,
        dt,
        move |t| &amp * (h * phase(t)).cos(),
    )?;

    let n = model.dof();
    let mut times = Vec::new();
    let mut omegas = Vec::new();
    let mut peaks: Vec<DVector<f64>> = Vec::new();
    let mut cycle = 0u64;
    let mut current = DVector::<f64>::zeros(n);
    let mut cycle_start = 0.0;
    for (j, &t) in history.times.iter().enumerate() {
        let k = (phase(t) / (2.0 * std::f64::consts::PI)) as u64;
        if k > cycle {
            let mid = 0.5 * (cycle_start + t);
            times.push(mid);
            omegas.push(w_lo + sweep_rate * mid);
            peaks.push(current.clone());
            current.fill(0.0);
            cycle = k;
            cycle_start = t;
        }
        for dof in 0..n {
            current[dof] = current[dof].max(history.displacement[(dof, j)].abs());
        }
    }
    let mut envelope = DMatrix::zeros(n, peaks.len());
    for (c, p) in peaks.iter().enumerate() {
        envelope.column_mut(c).copy_from(p);
    }
    Ok(SweptSineEnvelope { times, omegas, envelope })
}
