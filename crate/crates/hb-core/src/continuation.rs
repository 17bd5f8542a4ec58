//! Generic path-following: tangent prediction and Moore-Penrose correction
//! on a one-parameter solution manifold `r(y) = 0` with `dim y = dim r + 1`.
//!
//! The same machinery drives frequency-response branches (unknowns
//! `[z; omega]`) and codimension-2 bifurcation curves (unknowns
//! `[z; omega; p2]` with the bordered test function appended to the
//! residual).

use nalgebra::{DMatrix, DVector};

use crate::error::{HbError, Result};

/// One-parameter family of nonlinear systems traced by the continuation.
pub trait ContinuationSystem {
    /// Length of the residual vector (one less than the unknown vector).
    fn residual_dim(&self) -> usize;

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>>;

    /// Full Jacobian of the residual, `residual_dim x (residual_dim + 1)`.
    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Convergence test for the corrector.
    fn converged(&self, y: &DVector<f64>, r: &DVector<f64>, tol: f64) -> Result<bool> {
        let _ = y;
        Ok(r.norm() <= tol)
    }
}

/// Step sizes, tolerances and sweep window of a continuation run.
#[derive(Debug, Clone)]
pub struct ContinuationSettings {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Newton tolerance on the residual norm; systems scale it internally
    /// (the branch corrector uses `tol * (1 + |b|)`).
    pub newton_tol: f64,
    pub max_corrector_iterations: usize,
    /// Step multiplier after a fast correction (at most
    /// `growth_iteration_threshold` iterations).
    pub growth_factor: f64,
    pub shrink_factor: f64,
    pub growth_iteration_threshold: usize,
    pub omega_start: f64,
    pub omega_end: f64,
    /// Hard cap on accepted points.
    pub max_steps: usize,
    /// Tolerance on normalized test functions for root localization.
    pub test_tol: f64,
}

impl ContinuationSettings {
    pub fn new(omega_start: f64, omega_end: f64) -> Self {
        Self {
            initial_step: 1e-2,
            min_step: 1e-9,
            max_step: 0.1,
            newton_tol: 1e-9,
            max_corrector_iterations: 15,
            growth_factor: 1.3,
            shrink_factor: 0.5,
            growth_iteration_threshold: 3,
            omega_start,
            omega_end,
            max_steps: 100_000,
            test_tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_step > 0.0 && self.min_step <= self.initial_step && self.initial_step <= self.max_step)
        {
            return Err(HbError::Config(
                "continuation steps must satisfy 0 < min <= initial <= max".into(),
            ));
        }
        if !(self.newton_tol > 0.0) {
            return Err(HbError::Config("newton tolerance must be positive".into()));
        }
        if self.omega_start == self.omega_end {
            return Err(HbError::Config("degenerate omega range".into()));
        }
        Ok(())
    }
}

/// Tangent of the solution path at `y`: solves the bordered system
/// `[J; row^T] t = e_last` and normalizes to unit length. With
/// `row = previous tangent` the solution keeps a positive inner product
/// with it, so the sweep never reverses silently.
pub fn path_tangent<S: ContinuationSystem>(
    sys: &S,
    y: &DVector<f64>,
    row: &DVector<f64>,
) -> Result<DVector<f64>> {
    let j = sys.jacobian(y)?;
    tangent_from_jacobian(&j, row)
}

/// Same as [`path_tangent`] for a precomputed Jacobian.
pub fn tangent_from_jacobian(j: &DMatrix<f64>, row: &DVector<f64>) -> Result<DVector<f64>> {
    let d = j.nrows();
    let m = d + 1;
    if j.ncols() != m || row.len() != m {
        return Err(HbError::Dimension { expected: m, got: j.ncols().max(row.len()), context: "tangent" });
    }
    let mut bordered = DMatrix::zeros(m, m);
    bordered.view_mut((0, 0), (d, m)).copy_from(j);
    bordered.row_mut(d).copy_from(&row.transpose());
    let mut rhs = DVector::zeros(m);
    rhs[d] = 1.0;
    let t = bordered
        .lu()
        .solve(&rhs)
        .ok_or(HbError::Singular { context: "tangent bordered system" })?;
    let norm = t.norm();
    if !(norm > 0.0) || !t.iter().all(|x| x.is_finite()) {
        return Err(HbError::Singular { context: "tangent normalization" });
    }
    Ok(t / norm)
}

/// Result of one Moore-Penrose correction.
#[derive(Debug, Clone)]
pub struct CorrectorOutcome {
    pub y: DVector<f64>,
    pub v: DVector<f64>,
    pub iterations: usize,
    /// Residual norms per iteration, including the accepted one.
    pub residuals: Vec<f64>,
}

/// Newton iteration on the bordered system with the moving auxiliary
/// direction `v`:
///
/// ```text
/// y_{j+1} = y_j - Gy^-1 [r; 0],   v_{j+1} = v_j - Gy^-1 [J v; 0],
/// Gy = [J; v^T]
/// ```
///
/// `v` is renormalized each iteration; it converges to the tangent at the
/// corrected point.
pub fn moore_penrose_correct<S: ContinuationSystem>(
    sys: &S,
    y_pred: &DVector<f64>,
    v0: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<CorrectorOutcome> {
    let d = sys.residual_dim();
    let m = d + 1;
    let mut y = y_pred.clone();
    let mut v = v0.normalize();
    let mut residuals = Vec::new();
    for iter in 0..=settings.max_corrector_iterations {
        let r = sys.residual(&y)?;
        let rnorm = r.norm();
        residuals.push(rnorm);
        if sys.converged(&y, &r, settings.newton_tol)? {
            return Ok(CorrectorOutcome { y, v, iterations: iter, residuals });
        }
        if iter == settings.max_corrector_iterations {
            break;
        }
        let j = sys.jacobian(&y)?;
        let mut gy = DMatrix::zeros(m, m);
        gy.view_mut((0, 0), (d, m)).copy_from(&j);
        gy.row_mut(d).copy_from(&v.transpose());
        let lu = gy.lu();
        let mut rhs_y = DVector::zeros(m);
        rhs_y.rows_mut(0, d).copy_from(&r);
        let dy = lu
            .solve(&rhs_y)
            .ok_or(HbError::Singular { context: "corrector bordered system" })?;
        let jv = &j * &v;
        let mut rhs_v = DVector::zeros(m);
        rhs_v.rows_mut(0, d).copy_from(&jv);
        let dv = lu
            .solve(&rhs_v)
            .ok_or(HbError::Singular { context: "corrector bordered system" })?;
        y -= dy;
        v -= dv;
        let vnorm = v.norm();
        if !(vnorm > 0.0) {
            return Err(HbError::Singular { context: "corrector direction collapse" });
        }
        v /= vnorm;
        if !y.iter().all(|x| x.is_finite()) {
            return Err(HbError::CorrectorFailed { iterations: iter + 1, residual: f64::INFINITY });
        }
    }
    Err(HbError::CorrectorFailed {
        iterations: settings.max_corrector_iterations,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// An accepted point on the traced path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub y: DVector<f64>,
    pub tangent: DVector<f64>,
    pub corrector_iterations: usize,
}

/// Why the trace stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathStatus {
    /// The stop predicate fired (sweep window exhausted).
    Window,
    /// Step control underflowed; the path is partial.
    StepUnderflow,
    /// The hard step cap was hit; the path is partial.
    MaxSteps,
}

impl PathStatus {
    pub fn is_partial(&self) -> bool {
        !matches!(self, PathStatus::Window)
    }
}

/// Traces the path from a converged start point. `first_row` seeds the
/// bordering row of the very first tangent solve (the all-ones row imposes
/// a unit component sum); afterwards the previous tangent is used.
/// `orient` fixes the initial direction: the first tangent is flipped if
/// its inner product with `orient` is negative.
pub fn trace_path<S: ContinuationSystem>(
    sys: &S,
    y_start: DVector<f64>,
    first_row: DVector<f64>,
    orient: &DVector<f64>,
    settings: &ContinuationSettings,
    mut stop: impl FnMut(&PathPoint) -> bool,
) -> Result<(Vec<PathPoint>, PathStatus)> {
    settings.validate()?;
    let mut tangent = path_tangent(sys, &y_start, &first_row)?;
    if tangent.dot(orient) < 0.0 {
        tangent = -tangent;
    }
    let start = PathPoint { y: y_start, tangent, corrector_iterations: 0 };
    let stop_now = stop(&start);
    let mut points = vec![start];
    if stop_now {
        return Ok((points, PathStatus::Window));
    }
    let mut step = settings.initial_step;
    loop {
        if points.len() >= settings.max_steps {
            return Ok((points, PathStatus::MaxSteps));
        }
        let prev = points.last().expect("path has points");
        let y_pred = &prev.y + &prev.tangent * step;
        match moore_penrose_correct(sys, &y_pred, &prev.tangent, settings) {
            Ok(out) => {
                // Guard against the corrector landing back on (or behind)
                // the previous point after a fold-scale step.
                let advance = (&out.y - &prev.y).dot(&prev.tangent);
                if advance <= 0.0 {
                    step *= settings.shrink_factor;
                    if step < settings.min_step {
                        return Ok((points, PathStatus::StepUnderflow));
                    }
                    continue;
                }
                let mut tangent = path_tangent(sys, &out.y, &prev.tangent)?;
                if tangent.dot(&prev.tangent) < 0.0 {
                    tangent = -tangent;
                }
                let accepted = PathPoint {
                    y: out.y,
                    tangent,
                    corrector_iterations: out.iterations,
                };
                let done = stop(&accepted);
                points.push(accepted);
                if done {
                    return Ok((points, PathStatus::Window));
                }
                if out.iterations <= settings.growth_iteration_threshold {
                    step = (step * settings.growth_factor).min(settings.max_step);
                }
            }
            Err(HbError::CorrectorFailed { .. }) | Err(HbError::Singular { .. }) => {
                step *= settings.shrink_factor;
                if step < settings.min_step {
                    return Ok((points, PathStatus::StepUnderflow));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Circle x^2 + y^2 = 1 traced as a one-parameter family.
    struct Circle;

    impl ContinuationSystem for Circle {
        fn residual_dim(&self) -> usize {
            1
        }
        fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![y[0] * y[0] + y[1] * y[1] - 1.0]))
        }
        fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[2.0 * y[0], 2.0 * y[1]]))
        }
    }

    #[test]
    fn tangent_matches_hand_solve() {
        // [1 1; 1 0] t = [0; 1] -> [1, -1]/sqrt(2)
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let row = DVector::from_vec(vec![1.0, 0.0]);
        let t = tangent_from_jacobian(&j, &row).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert!((t[0] - s).abs() < 1e-14 && (t[1] + s).abs() < 1e-14);
    }

    #[test]
    fn first_step_sum_convention() {
        // [1 -1; 1 1] t = [0; 1] -> [0.5, 0.5] before normalization.
        let j = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        let t = tangent_from_jacobian(&j, &ones).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert!((t[0] - s).abs() < 1e-14 && (t[1] - s).abs() < 1e-14);
    }

    #[test]
    fn corrector_returns_on_branch_point_unchanged() {
        let sys = Circle;
        let settings = ContinuationSettings::new(0.0, 1.0);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        let out = moore_penrose_correct(&sys, &y, &v, &settings).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.y, y);
    }

    #[test]
    fn corrector_pulls_back_to_circle() {
        let sys = Circle;
        let settings = ContinuationSettings::new(0.0, 1.0);
        let y = DVector::from_vec(vec![1.05, 0.1]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        let out = moore_penrose_correct(&sys, &y, &v, &settings).unwrap();
        let r = sys.residual(&out.y).unwrap();
        assert!(r.norm() <= 1e-9);
    }

    #[test]
    fn trace_walks_around_the_circle_fold() {
        // Start at angle 0 moving +y; the path must traverse the fold at
        // y = 1 (turning point in the first coordinate) without stalling.
        let sys = Circle;
        let mut settings = ContinuationSettings::new(0.0, 1.0);
        settings.initial_step = 0.05;
        settings.max_step = 0.1;
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let orient = DVector::from_vec(vec![0.0, 1.0]);
        let (points, status) = trace_path(
            &sys,
            y0,
            DVector::from_vec(vec![1.0, 1.0]),
            &orient,
            &settings,
            |p| p.y[0] <= -0.99,
        )
        .unwrap();
        assert_eq!(status, PathStatus::Window);
        // All points on the circle, consecutive tangents consistent.
        for w in points.windows(2) {
            assert!(w[0].tangent.dot(&w[1].tangent) > 0.0);
        }
        for p in &points {
            assert!(sys.residual(&p.y).unwrap().norm() < 1e-8);
        }
        // The fold (max of y[1]) was crossed.
        assert!(points.iter().any(|p| p.y[1] > 0.99));
    }
}
