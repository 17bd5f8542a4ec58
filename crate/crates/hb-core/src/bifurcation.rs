//! Bifurcation test functions, bordered determinant replacements,
//! eigenvalue derivatives, and root localization along branches.
//!
//! Three codimension-1 bifurcations are monitored:
//!
//! * fold: the frequency component of the path tangent changes sign;
//! * branch point: the bordered determinant of `[h_z h_w; t^T]` vanishes;
//! * Neimark-Sacker: a filtered product of pairwise Floquet-exponent sums
//!   (the diagonal bialternate construction) vanishes.
//!
//! Determinants are never formed: the bordering technique replaces them by
//! the scalar unknown of an augmented solve that vanishes together with
//! them.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::continuation::ContinuationSettings;
use crate::error::{HbError, Result};
use crate::harmonic::FourierState;
use crate::solver::{correct_moore_penrose, tangent, BranchEvent, BranchPoint, Workspace};
use crate::stability::{self, default_re_tolerance};

type C64 = nalgebra::Complex<f64>;

/// Imaginary-part threshold of the neutral-saddle filter: only pair sums
/// where both exponents are genuinely complex enter the product.
pub const NS_FILTER_IM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BifurcationKind {
    Fold,
    BranchPoint,
    NeimarkSacker,
}

impl BifurcationKind {
    pub fn label(&self) -> &'static str {
        match self {
            BifurcationKind::Fold => "fold",
            BifurcationKind::BranchPoint => "branch_point",
            BifurcationKind::NeimarkSacker => "neimark_sacker",
        }
    }
}

/// Test-function values carried by every branch point.
#[derive(Debug, Clone, Copy)]
pub struct TestFunctionRecord {
    pub fold: f64,
    pub branch_point: f64,
    pub neimark_sacker: f64,
    /// Number of complex exponent pairs entering the Neimark-Sacker
    /// product; its sign changes are only comparable between points with
    /// the same pair structure.
    pub ns_pairs: usize,
}

impl TestFunctionRecord {
    pub fn value(&self, kind: BifurcationKind) -> f64 {
        match kind {
            BifurcationKind::Fold => self.fold,
            BifurcationKind::BranchPoint => self.branch_point,
            BifurcationKind::NeimarkSacker => self.neimark_sacker,
        }
    }
}

/// Fold test function: the component of the unit tangent along the active
/// parameter (last entry of the tangent vector).
pub fn test_fold(tangent: &DVector<f64>) -> f64 {
    tangent[tangent.len() - 1]
}

/// Bordered replacement of `det [h_z h_w; t^T]`, the branch-point test.
pub fn test_bp(
    h_z: &DMatrix<f64>,
    h_omega: &DVector<f64>,
    t: &DVector<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<f64> {
    let m = h_z.nrows();
    let mut big = DMatrix::zeros(m + 1, m + 1);
    big.view_mut((0, 0), (m, m)).copy_from(h_z);
    big.view_mut((0, m), (m, 1)).copy_from(h_omega);
    big.row_mut(m).copy_from(&t.transpose());
    let (g, _) = bordered_solve(&big, p, q)?;
    Ok(g)
}

/// Neimark-Sacker test function: product of `(l_i + l_j)/2` over exponent
/// pairs in which both members are complex (`|Im| >` the neutral-saddle
/// threshold). The result is real for a conjugation-closed exponent set;
/// an empty product returns 1.
pub fn test_ns(floquet: &[C64]) -> f64 {
    let mut prod = C64::new(1.0, 0.0);
    for i in 0..floquet.len() {
        for j in (i + 1)..floquet.len() {
            if floquet[i].im.abs() > NS_FILTER_IM_TOL && floquet[j].im.abs() > NS_FILTER_IM_TOL {
                prod *= (floquet[i] + floquet[j]) * 0.5;
            }
        }
    }
    debug_assert!(
        prod.im.abs() <= 1e-8 * (1.0 + prod.re.abs()),
        "NS product not real: {prod}"
    );
    prod.re
}

/// Number of complex-conjugate exponent pairs passing the neutral-saddle
/// filter.
pub fn ns_filtered_pairs(floquet: &[C64]) -> usize {
    floquet.iter().filter(|l| l.im.abs() > NS_FILTER_IM_TOL).count() / 2
}

/// Solves the bordered system `[G p; q* 0] [w; g] = [0; 1]`. The scalar
/// `g` vanishes exactly when `det G` does (for admissible borders).
pub fn bordered_solve<T: ComplexField + Copy>(
    g_mat: &DMatrix<T>,
    p: &DVector<T>,
    q: &DVector<T>,
) -> Result<(T, DVector<T>)> {
    let n = g_mat.nrows();
    if p.len() != n || q.len() != n {
        return Err(HbError::Dimension { expected: n, got: p.len().max(q.len()), context: "borders" });
    }
    let mut big = DMatrix::<T>::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(g_mat);
    big.view_mut((0, n), (n, 1)).copy_from(p);
    big.view_mut((n, 0), (1, n)).copy_from(&q.adjoint());
    let mut rhs = DVector::<T>::zeros(n + 1);
    rhs[n] = T::one();
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or(HbError::Singular { context: "bordered system" })?;
    let w = sol.rows(0, n).into_owned();
    Ok((sol[n], w))
}

/// Adjoint bordered solve `[G p; q* 0]* [v; e] = [0; 1]`, yielding the left
/// vector `v` used by the derivative formula.
pub fn bordered_solve_adjoint<T: ComplexField + Copy>(
    g_mat: &DMatrix<T>,
    p: &DVector<T>,
    q: &DVector<T>,
) -> Result<(T, DVector<T>)> {
    let n = g_mat.nrows();
    let mut big = DMatrix::<T>::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(g_mat);
    big.view_mut((0, n), (n, 1)).copy_from(p);
    big.view_mut((n, 0), (1, n)).copy_from(&q.adjoint());
    let big_adj = big.adjoint();
    let mut rhs = DVector::<T>::zeros(n + 1);
    rhs[n] = T::one();
    let sol = big_adj
        .lu()
        .solve(&rhs)
        .ok_or(HbError::Singular { context: "adjoint bordered system" })?;
    let v = sol.rows(0, n).into_owned();
    Ok((sol[n], v))
}

/// Derivative of the bordered scalar: `g_a = -v* G_a w`.
pub fn g_derivative(g_alpha: &DMatrix<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    -(v.transpose() * g_alpha * w)[(0, 0)]
}

/// Variable with respect to which `h_z` (or the bordered scalar) is
/// differentiated.
#[derive(Debug, Clone, Copy)]
pub enum Alpha<'a> {
    /// A component of the Fourier coefficient vector.
    Coeff(usize),
    Omega,
    /// A registered model parameter.
    Parameter(&'a str),
}

/// Central finite difference of `h_z` with respect to `alpha`. Coefficient
/// directions of DOFs untouched by any nonlinear element return an exact
/// zero matrix without evaluation.
pub fn h_z_alpha_fd(
    ws: &Workspace,
    z: &DVector<f64>,
    omega: f64,
    alpha: Alpha,
    eps: Option<f64>,
) -> Result<DMatrix<f64>> {
    let m = ws.coeff_len();
    let n = ws.grid().n_dof;
    let step = |base: f64, eps: Option<f64>| eps.unwrap_or(1e-6 * (1.0 + base.abs()));
    match alpha {
        Alpha::Coeff(idx) => {
            if idx >= m {
                return Err(HbError::Dimension { expected: m, got: idx, context: "alpha index" });
            }
            let dof = idx % n;
            if !ws.model().dof_is_nonlinear(dof) {
                return Ok(DMatrix::zeros(m, m));
            }
            let e = step(z[idx], eps);
            let mut zp = z.clone();
            zp[idx] += e;
            let mut zm = z.clone();
            zm[idx] -= e;
            Ok((ws.jacobian_z(&zp, omega)? - ws.jacobian_z(&zm, omega)?) / (2.0 * e))
        }
        Alpha::Omega => {
            let e = step(omega, eps);
            Ok((ws.jacobian_z(z, omega + e)? - ws.jacobian_z(z, omega - e)?) / (2.0 * e))
        }
        Alpha::Parameter(name) => {
            let base = ws.model().parameter(name)?;
            let e = step(base, eps);
            let mp = ws.model().with_parameter(name, base + e)?;
            let mm = ws.model().with_parameter(name, base - e)?;
            let wp = ws.with_model(&mp)?;
            let wm = ws.with_model(&mm)?;
            Ok((wp.jacobian_z(z, omega)? - wm.jacobian_z(z, omega)?) / (2.0 * e))
        }
    }
}

/// Top blocks of `dB/da` for the Hill linearization
/// `B = [-D2^-1 D1, -D2^-1 h_z; I, 0]`: only the first block row depends
/// on the point, through `h_z` (any `alpha`) and `D1` (`alpha = omega`).
#[derive(Debug, Clone)]
pub struct HillDerivative {
    /// `-D2^-1 dD1/da`, present only for frequency derivatives.
    pub top_left: Option<DMatrix<f64>>,
    /// `-D2^-1 dh_z/da`.
    pub top_right: DMatrix<f64>,
}

impl HillDerivative {
    /// Materialized `2m x 2m` matrix, mostly for cross-checks.
    pub fn full(&self) -> DMatrix<f64> {
        let m = self.top_right.nrows();
        let mut b = DMatrix::zeros(2 * m, 2 * m);
        if let Some(tl) = &self.top_left {
            b.view_mut((0, 0), (m, m)).copy_from(tl);
        }
        b.view_mut((0, m), (m, m)).copy_from(&self.top_right);
        b
    }
}

/// Reusable factorization for eigenvalue derivatives of selected Hill
/// exponents: `dl_i/da = (L^-1 dB/da L)_(xi_i, xi_i)` with `L` the
/// eigenvector matrix.
pub struct EigenDerivativeContext {
    /// Rows `xi_i` of `L^-1` (solves of `L^T y = e_xi`).
    rows: Vec<DVector<C64>>,
    /// Columns `xi_i` of `L`.
    cols: Vec<DVector<C64>>,
    xi: Vec<usize>,
    condition: f64,
}

impl EigenDerivativeContext {
    pub fn new(eigenvectors: &DMatrix<C64>, xi: &[usize]) -> Result<Self> {
        let dim = eigenvectors.nrows();
        let lu_t = eigenvectors.transpose().lu();
        let inv_norm = match eigenvectors.clone().lu().try_inverse() {
            Some(inv) => inv.norm(),
            None => return Err(HbError::Eigen("defective eigenvector matrix".into())),
        };
        let condition = eigenvectors.norm() * inv_norm;
        let mut rows = Vec::with_capacity(xi.len());
        let mut cols = Vec::with_capacity(xi.len());
        for &i in xi {
            if i >= dim {
                return Err(HbError::Dimension { expected: dim, got: i, context: "localization index" });
            }
            let mut e = DVector::<C64>::zeros(dim);
            e[i] = C64::new(1.0, 0.0);
            let y = lu_t
                .solve(&e)
                .ok_or(HbError::Eigen("singular eigenvector matrix".into()))?;
            rows.push(y);
            cols.push(eigenvectors.column(i).into_owned());
        }
        Ok(Self { rows, cols, xi: xi.to_vec(), condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn well_conditioned(&self) -> bool {
        self.condition < 1e8
    }

    /// Derivatives of the localized eigenvalues for one `dB/da`.
    pub fn derivatives(&self, db: &HillDerivative) -> Vec<C64> {
        let m = db.top_right.nrows();
        self.xi
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let col = &self.cols[k];
                // top = TL * col_top + TR * col_bottom (complex columns,
                // real blocks); the bottom block row of dB/da is zero.
                let mut top = DVector::<C64>::zeros(m);
                for r in 0..m {
                    let mut acc = C64::new(0.0, 0.0);
                    if let Some(tl) = &db.top_left {
                        for c in 0..m {
                            acc += C64::new(tl[(r, c)], 0.0) * col[c];
                        }
                    }
                    for c in 0..m {
                        acc += C64::new(db.top_right[(r, c)], 0.0) * col[m + c];
                    }
                    top[r] = acc;
                }
                let row = &self.rows[k];
                let mut out = C64::new(0.0, 0.0);
                for r in 0..m {
                    out += row[r] * top[r];
                }
                out
            })
            .collect()
    }
}

/// Derivatives `(L^-1 dB/da L)_(xi_i, xi_i)` for a dense `dB/da`.
pub fn eigenvalue_derivatives(
    eigenvectors: &DMatrix<C64>,
    xi: &[usize],
    b_alpha: &DMatrix<f64>,
) -> Result<Vec<C64>> {
    let dim = eigenvectors.nrows();
    if b_alpha.nrows() != dim || b_alpha.ncols() != dim {
        return Err(HbError::Dimension { expected: dim, got: b_alpha.nrows(), context: "dB/da" });
    }
    let lu_t = eigenvectors.transpose().lu();
    let mut out = Vec::with_capacity(xi.len());
    for &i in xi {
        if i >= dim {
            return Err(HbError::Dimension { expected: dim, got: i, context: "localization index" });
        }
        let mut e = DVector::<C64>::zeros(dim);
        e[i] = C64::new(1.0, 0.0);
        let row = lu_t
            .solve(&e)
            .ok_or(HbError::Eigen("singular eigenvector matrix".into()))?;
        let col = eigenvectors.column(i);
        let mut d = C64::new(0.0, 0.0);
        for r in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..dim {
                acc += C64::new(b_alpha[(r, c)], 0.0) * col[c];
            }
            d += row[r] * acc;
        }
        out.push(d);
    }
    Ok(out)
}

/// Frozen borders and thresholds used while decorating one branch.
#[derive(Debug, Clone)]
pub struct DetectionContext {
    /// Borders of the branch-point bordered matrix, frozen along the branch
    /// so the scalar's sign is comparable between points.
    pub bp_p: DVector<f64>,
    pub bp_q: DVector<f64>,
    /// Verification threshold on the relative smallest singular value at
    /// located branch points.
    pub bp_rank_tol: f64,
    /// Verification threshold on `|Re|` of the crossing pair at located
    /// Neimark-Sacker points.
    pub ns_re_tol: f64,
}

impl DetectionContext {
    /// `m` is the coefficient-vector length; the bordered matrix has side
    /// `m + 1`.
    pub fn new(m: usize) -> Self {
        Self {
            bp_p: seeded_unit_vector(m + 1, 0x5eed_0001),
            bp_q: seeded_unit_vector(m + 1, 0x5eed_0002),
            bp_rank_tol: 1e-6,
            ns_re_tol: 1e-6,
        }
    }
}

/// Deterministic pseudo-random unit vector (splitmix64 stream).
pub fn seeded_unit_vector(len: usize, seed: u64) -> DVector<f64> {
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let v = DVector::from_fn(len, |_, _| next());
    let n = v.norm();
    v / n
}

/// Fully decorated branch point at the unknowns `y = [z; omega]`:
/// stability, Floquet exponents and the three test functions.
pub fn evaluate_branch_point(
    ws: &Workspace,
    y: &DVector<f64>,
    tangent_at_y: &DVector<f64>,
    ctx: &DetectionContext,
) -> Result<BranchPoint> {
    let m = ws.coeff_len();
    let z = y.rows(0, m).into_owned();
    let omega = y[m];
    let grid = ws.grid().with_omega(omega);
    let h_z = ws.jacobian_z(&z, omega)?;
    let h_w = ws.jacobian_omega(&z, omega)?;
    let spectrum = stability::hill_eigen(ws.model(), &grid, &h_z)?;
    let verdict = stability::is_stable(&spectrum.floquet, default_re_tolerance(omega));
    let tests = TestFunctionRecord {
        fold: test_fold(tangent_at_y),
        branch_point: test_bp(&h_z, &h_w, tangent_at_y, &ctx.bp_p, &ctx.bp_q)?,
        neimark_sacker: test_ns(&spectrum.floquet),
        ns_pairs: ns_filtered_pairs(&spectrum.floquet),
    };
    Ok(BranchPoint {
        state: FourierState::new(z, &grid)?,
        omega,
        tangent: tangent_at_y.clone(),
        stability: verdict.flag(),
        floquet: spectrum.floquet,
        tests,
    })
}

/// Secant localization of a test-function root inside a bracketing branch
/// segment. Every trial is pulled back onto the branch by a full
/// Moore-Penrose correction before the test function is re-evaluated.
/// Returns the refined point and its chord coordinate in `[0, 1]`.
pub fn locate_root(
    ws: &Workspace,
    a: &BranchPoint,
    b: &BranchPoint,
    kind: BifurcationKind,
    ctx: &DetectionContext,
    settings: &ContinuationSettings,
) -> Result<(BranchPoint, f64)> {
    let phi_a = a.tests.value(kind);
    let phi_b = b.tests.value(kind);
    if !(phi_a * phi_b < 0.0) {
        return Err(HbError::NoSignChange { test: kind.label(), a: phi_a, b: phi_b });
    }
    let scale = phi_a.abs().max(phi_b.abs());
    let ya = a.unknowns();
    let yb = b.unknowns();
    let dir = (&yb - &ya).normalize();

    let (mut sl, mut fl) = (0.0, phi_a);
    let (mut sh, mut fh) = (1.0, phi_b);
    let mut best: Option<(BranchPoint, f64, f64)> = None;
    const MAX_ITERS: usize = 25;
    for _ in 0..MAX_ITERS {
        // Regula-falsi trial, kept strictly inside the bracket.
        let mut s = (sl * fh - sh * fl) / (fh - fl);
        let width = sh - sl;
        s = s.clamp(sl + 0.02 * width, sh - 0.02 * width);
        let y_pred = &ya * (1.0 - s) + &yb * s;
        let out = match correct_moore_penrose(ws, &y_pred, &dir, settings) {
            Ok(out) => out,
            Err(HbError::CorrectorFailed { .. }) => {
                // Fall back to the bracket midpoint once before giving up.
                let mid = &ya * (1.0 - 0.5 * (sl + sh)) + &yb * (0.5 * (sl + sh));
                correct_moore_penrose(ws, &mid, &dir, settings)?
            }
            Err(e) => return Err(e),
        };
        let h_z = {
            let m = ws.coeff_len();
            ws.jacobian_z(&out.y.rows(0, m).into_owned(), out.y[m])?
        };
        let h_w = {
            let m = ws.coeff_len();
            ws.jacobian_omega(&out.y.rows(0, m).into_owned(), out.y[m])?
        };
        let t = tangent(&h_z, &h_w, &a.tangent)?;
        let point = evaluate_branch_point(ws, &out.y, &t, ctx)?;
        let phi = point.tests.value(kind);
        if phi.abs() <= settings.test_tol * scale {
            return Ok((point, s));
        }
        if best.as_ref().map_or(true, |(_, _, bp)| phi.abs() < *bp) {
            best = Some((point.clone(), s, phi.abs()));
        }
        if phi.signum() == fl.signum() {
            sl = s;
            fl = phi;
        } else {
            sh = s;
            fh = phi;
        }
        if sh - sl < 1e-13 {
            break;
        }
    }
    // Accept a collapsed bracket whose best trial still improved the
    // endpoints by orders of magnitude.
    if let Some((point, s, phi_abs)) = best {
        if phi_abs <= 1e-4 * scale {
            log::warn!(
                "root localization for {} accepted at |phi| = {phi_abs:.3e} (bracket collapsed)",
                kind.label()
            );
            return Ok((point, s));
        }
    }
    Err(HbError::RootNotLocated { iterations: MAX_ITERS })
}

/// Verification of a located event before it is recorded.
fn verify_event(ws: &Workspace, point: &BranchPoint, kind: BifurcationKind, ctx: &DetectionContext) -> Result<bool> {
    match kind {
        BifurcationKind::Fold => Ok(true),
        BifurcationKind::BranchPoint => {
            // A genuine branch point makes the full bordered matrix itself
            // rank deficient, independently of the border vectors.
            let m = ws.coeff_len();
            let z = point.state.coeffs();
            let h_z = ws.jacobian_z(z, point.omega)?;
            let h_w = ws.jacobian_omega(z, point.omega)?;
            let mut big = DMatrix::zeros(m + 1, m + 1);
            big.view_mut((0, 0), (m, m)).copy_from(&h_z);
            big.view_mut((0, m), (m, 1)).copy_from(&h_w);
            big.row_mut(m).copy_from(&point.tangent.transpose());
            let svd = big.svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            Ok(smin <= ctx.bp_rank_tol * smax)
        }
        BifurcationKind::NeimarkSacker => {
            let crossing = point
                .floquet
                .iter()
                .filter(|l| l.im.abs() > 1e-3)
                .map(|l| l.re.abs())
                .fold(f64::INFINITY, f64::min);
            Ok(crossing <= ctx.ns_re_tol)
        }
    }
}

/// Scans a decorated branch for test-function sign changes, localizes each
/// root, inserts the refined points into the branch and returns the event
/// list (indices into the updated point sequence).
pub fn detect_and_locate(
    ws: &Workspace,
    points: &mut Vec<BranchPoint>,
    ctx: &DetectionContext,
    settings: &ContinuationSettings,
) -> Result<Vec<BranchEvent>> {
    let kinds = [
        BifurcationKind::Fold,
        BifurcationKind::BranchPoint,
        BifurcationKind::NeimarkSacker,
    ];
    let mut located: Vec<(usize, f64, BifurcationKind, BranchPoint)> = Vec::new();
    for i in 0..points.len().saturating_sub(1) {
        for kind in kinds {
            let fa = points[i].tests.value(kind);
            let fb = points[i + 1].tests.value(kind);
            if !(fa.is_finite() && fb.is_finite()) || fa * fb >= 0.0 {
                continue;
            }
            if kind == BifurcationKind::NeimarkSacker {
                // The product is only continuous while the filtered pair
                // structure is unchanged; a pair collapsing onto the real
                // axis (fold neighborhood) flips the sign without a root.
                let (na, nb) = (points[i].tests.ns_pairs, points[i + 1].tests.ns_pairs);
                if na != nb || na == 0 {
                    continue;
                }
            }
            match locate_root(ws, &points[i], &points[i + 1], kind, ctx, settings) {
                Ok((point, s)) => {
                    if verify_event(ws, &point, kind, ctx)? {
                        located.push((i, s, kind, point));
                    } else {
                        log::warn!(
                            "discarding spurious {} sign change near omega = {:.6}",
                            kind.label(),
                            points[i].omega
                        );
                    }
                }
                Err(HbError::RootNotLocated { iterations }) => {
                    log::warn!(
                        "{} root in [{:.6}, {:.6}] not located after {iterations} iterations",
                        kind.label(),
                        points[i].omega,
                        points[i + 1].omega
                    );
                }
                Err(e) => return Err(e),
            }
        }
    }
    located.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    let mut events = Vec::with_capacity(located.len());
    for (offset, (seg, _, kind, point)) in located.into_iter().enumerate() {
        let idx = seg + 1 + offset;
        points.insert(idx, point);
        events.push(BranchEvent { kind, point_index: idx });
    }
    Ok(events)
}
