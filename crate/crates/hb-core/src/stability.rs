//! Hill's method: frequency-domain Floquet analysis of a converged
//! periodic solution.
//!
//! Perturbing the solution with an exponentially modulated series turns
//! the balance equations into the quadratic eigenvalue problem
//!
//! ```text
//! ( D2 l^2 + D1 l + h_z ) u = 0,
//! D1 = nabla x 2M + I x C,   D2 = I x M
//! ```
//!
//! linearized as the double-size matrix `B = [-D2^-1 D1, -D2^-1 h_z; I, 0]`.
//! Only `2n` of its eigenvalues approximate Floquet exponents; they are
//! selected as the ones with the smallest imaginary part in modulus, the
//! rest are spurious translates at multiples of the base frequency.

use nalgebra::{Complex, DMatrix, DVector};
use ndarray::Array2;
use ndarray_linalg::Eig;

use crate::error::{HbError, Result};
use crate::harmonic::HarmonicGrid;
use crate::model::SystemModel;

type C64 = Complex<f64>;

/// Relative tolerance used to recognize complex-conjugate partners.
const PAIRING_TOL: f64 = 1e-8;

/// Hill eigensolution at one branch point.
#[derive(Debug, Clone)]
pub struct HillSpectrum {
    /// All `2 (2 N_H + 1) n` eigenvalues of the linearization.
    pub eigenvalues: Vec<C64>,
    /// Right eigenvector matrix (columns match `eigenvalues`).
    pub eigenvectors: DMatrix<C64>,
    /// Selected Floquet exponents, `2n` values closed under conjugation.
    pub floquet: Vec<C64>,
    /// Indices of the selected exponents inside `eigenvalues`.
    pub localization: Vec<usize>,
    /// `|Im|` gap between the first rejected and last selected eigenvalue.
    pub selection_margin: f64,
}

/// Dense eigendecomposition of a general real matrix (LAPACK dgeev).
pub fn eig_general(a: &DMatrix<f64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = a.nrows();
    let arr = Array2::from_shape_fn((n, n), |(i, j)| a[(i, j)]);
    let (vals, vecs) = arr
        .eig()
        .map_err(|e| HbError::Eigen(format!("dgeev failed: {e}")))?;
    let eigenvalues: Vec<C64> = vals.iter().map(|v| C64::new(v.re, v.im)).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |i, j| C64::new(vecs[(i, j)].re, vecs[(i, j)].im));
    Ok((eigenvalues, eigenvectors))
}

/// `D1 = nabla x 2M + I x C` and `D2 = I x M` at the grid frequency.
pub fn hill_matrices(model: &SystemModel, grid: &HarmonicGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = grid.n_dof;
    let m = grid.coeff_len();
    let w = grid.base_freq();
    let (mm, cc) = (model.mass(), model.damping());
    let mut d1 = DMatrix::zeros(m, m);
    let mut d2 = DMatrix::zeros(m, m);
    d1.view_mut((0, 0), (n, n)).copy_from(cc);
    d2.view_mut((0, 0), (n, n)).copy_from(mm);
    for k in 1..=grid.n_harmonics {
        let kw2 = 2.0 * k as f64 * w;
        let s = (2 * k - 1) * n;
        let c = 2 * k * n;
        for i in 0..n {
            for j in 0..n {
                d1[(s + i, s + j)] = cc[(i, j)];
                d1[(c + i, c + j)] = cc[(i, j)];
                d1[(s + i, c + j)] = -kw2 * mm[(i, j)];
                d1[(c + i, s + j)] = kw2 * mm[(i, j)];
                d2[(s + i, s + j)] = mm[(i, j)];
                d2[(c + i, c + j)] = mm[(i, j)];
            }
        }
    }
    (d1, d2)
}

/// Applies `D2^-1` blockwise (`D2 = I x M`, so this is `2 N_H + 1`
/// independent solves with `M`).
pub fn solve_delta2(
    mass_lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n_dof: usize,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = x.nrows();
    let blocks = m / n_dof;
    let mut out = DMatrix::zeros(m, x.ncols());
    for b in 0..blocks {
        let rows = x.rows(b * n_dof, n_dof).into_owned();
        let sol = mass_lu
            .solve(&rows)
            .ok_or(HbError::Singular { context: "mass solve in Hill linearization" })?;
        out.rows_mut(b * n_dof, n_dof).copy_from(&sol);
    }
    Ok(out)
}

/// Linearization matrix `B = [-D2^-1 D1, -D2^-1 h_z; I, 0]`.
pub fn hill_linearization(
    model: &SystemModel,
    grid: &HarmonicGrid,
    h_z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = grid.coeff_len();
    let (d1, _) = hill_matrices(model, grid);
    let mass_lu = model.mass().clone().lu();
    let t1 = solve_delta2(&mass_lu, grid.n_dof, &d1)?;
    let t2 = solve_delta2(&mass_lu, grid.n_dof, h_z)?;
    let mut b = DMatrix::zeros(2 * m, 2 * m);
    b.view_mut((0, 0), (m, m)).copy_from(&(-&t1));
    b.view_mut((0, m), (m, m)).copy_from(&(-&t2));
    for i in 0..m {
        b[(m + i, i)] = 1.0;
    }
    Ok(b)
}

/// Solves the Hill eigenproblem and selects the Floquet exponents.
pub fn hill_eigen(
    model: &SystemModel,
    grid: &HarmonicGrid,
    h_z: &DMatrix<f64>,
) -> Result<HillSpectrum> {
    let b = hill_linearization(model, grid, h_z)?;
    let (eigenvalues, eigenvectors) = eig_general(&b)?;
    let (floquet, localization, selection_margin) =
        sort_floquet(&eigenvalues, grid.n_dof)?;
    let warn_margin = 0.1 * grid.base_freq();
    if selection_margin < warn_margin {
        log::warn!(
            "Floquet selection margin {selection_margin:.3e} below {warn_margin:.3e} at omega = {:.6}; \
             spurious and physical exponents are close",
            grid.omega
        );
    }
    Ok(HillSpectrum { eigenvalues, eigenvectors, floquet, localization, selection_margin })
}

/// Selects the `2n` eigenvalues with the smallest `|Im|`, keeping
/// conjugate pairs together; ties break by ascending real part. Returns
/// the exponents, their indices in `eigenvalues`, and the `|Im|` margin
/// between the first rejected and the last selected eigenvalue.
pub fn sort_floquet(eigenvalues: &[C64], n_dof: usize) -> Result<(Vec<C64>, Vec<usize>, f64)> {
    let want = 2 * n_dof;
    if eigenvalues.len() < want {
        return Err(HbError::Eigen(format!(
            "spectrum carries {} values, need at least {want}",
            eigenvalues.len()
        )));
    }

    // Group the spectrum into conjugate pairs and real singletons.
    #[derive(Debug)]
    enum Unit {
        Single(usize),
        Pair(usize, usize),
    }
    let mut used = vec![false; eigenvalues.len()];
    let mut units = Vec::new();
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (eigenvalues[a], eigenvalues[b]);
        za.im
            .abs()
            .partial_cmp(&zb.im.abs())
            .unwrap()
            .then(za.re.partial_cmp(&zb.re).unwrap())
            .then(za.im.partial_cmp(&zb.im).unwrap())
    });
    for &i in &order {
        if used[i] {
            continue;
        }
        let z = eigenvalues[i];
        let scale = 1.0 + z.norm();
        if z.im.abs() <= PAIRING_TOL * scale {
            used[i] = true;
            units.push(Unit::Single(i));
            continue;
        }
        // Closest unused conjugate partner.
        let mut best: Option<(usize, f64)> = None;
        for (j, zj) in eigenvalues.iter().enumerate() {
            if used[j] || j == i {
                continue;
            }
            let d = (zj - z.conj()).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) if d <= PAIRING_TOL * scale => {
                used[i] = true;
                used[j] = true;
                units.push(Unit::Pair(i, j));
            }
            _ => {
                log::warn!("eigenvalue {z} has no conjugate partner within tolerance");
                used[i] = true;
                units.push(Unit::Single(i));
            }
        }
    }

    // Greedy fill by |Im|; a pair that does not fit in the last slot is
    // swapped for the next singleton.
    let mut selected: Vec<usize> = Vec::with_capacity(want);
    let mut skipped_pair: Option<usize> = None;
    let mut iter = units.iter().enumerate();
    for (uidx, unit) in iter.by_ref() {
        match unit {
            Unit::Single(i) => selected.push(*i),
            Unit::Pair(i, j) => {
                if selected.len() + 2 <= want {
                    selected.push(*i);
                    selected.push(*j);
                } else {
                    skipped_pair = Some(uidx);
                    break;
                }
            }
        }
        if selected.len() == want {
            break;
        }
    }
    if selected.len() < want {
        if skipped_pair.is_some() {
            // One slot left but the next unit is a pair: prefer a later
            // singleton to keep conjugate closure.
            let replacement = units.iter().skip(skipped_pair.unwrap() + 1).find_map(|u| match u {
                Unit::Single(i) => Some(*i),
                Unit::Pair(..) => None,
            });
            match replacement {
                Some(i) => {
                    log::warn!("Floquet selection widened past a conjugate pair at the boundary");
                    selected.push(i);
                }
                None => {
                    return Err(HbError::Eigen(
                        "cannot select a conjugation-closed Floquet set".into(),
                    ))
                }
            }
        } else {
            return Err(HbError::Eigen("spectrum exhausted during Floquet selection".into()));
        }
    }

    // Order the selection itself by |Im| then Re for reproducibility.
    selected.sort_by(|&a, &b| {
        let (za, zb) = (eigenvalues[a], eigenvalues[b]);
        za.im
            .abs()
            .partial_cmp(&zb.im.abs())
            .unwrap()
            .then(za.re.partial_cmp(&zb.re).unwrap())
            .then(za.im.partial_cmp(&zb.im).unwrap())
    });
    let floquet: Vec<C64> = selected.iter().map(|&i| eigenvalues[i]).collect();

    let max_selected = floquet.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let min_rejected = eigenvalues
        .iter()
        .enumerate()
        .filter(|(i, _)| !selected.contains(i))
        .map(|(_, z)| z.im.abs())
        .fold(f64::INFINITY, f64::min);
    let margin = if min_rejected.is_finite() {
        (min_rejected - max_selected).max(0.0)
    } else {
        f64::INFINITY
    };
    Ok((floquet, selected, margin))
}

/// Stability classification of a periodic solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    Unknown,
}

/// Outcome of the real-part test on the Floquet exponents.
#[derive(Debug, Clone, Copy)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// The largest real part sits inside the `+-tol_re` band.
    pub marginal: bool,
    pub max_re: f64,
}

impl StabilityVerdict {
    pub fn flag(&self) -> Stability {
        if self.stable {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }
}

/// Unstable iff some exponent has real part above `tol_re`.
pub fn is_stable(floquet: &[C64], tol_re: f64) -> StabilityVerdict {
    let max_re = floquet.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    StabilityVerdict { stable: max_re <= tol_re, marginal: max_re.abs() <= tol_re, max_re }
}

/// Default frequency-scaled threshold for the real-part test.
pub fn default_re_tolerance(omega: f64) -> f64 {
    1e-6 * omega
}

/// Residual `|(D2 l^2 + D1 l + h_z) u|` of one eigenpair, relative to
/// `(|D2| |l|^2 + |D1| |l| + |h_z|) |u|`.
pub fn quadratic_residual(
    d1: &DMatrix<f64>,
    d2: &DMatrix<f64>,
    h_z: &DMatrix<f64>,
    lambda: C64,
    u: &DVector<C64>,
) -> f64 {
    let m = h_z.nrows();
    let mut r = DVector::<C64>::zeros(m);
    for i in 0..m {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..m {
            acc += (C64::new(d2[(i, j)], 0.0) * lambda * lambda
                + C64::new(d1[(i, j)], 0.0) * lambda
                + C64::new(h_z[(i, j)], 0.0))
                * u[j];
        }
        r[i] = acc;
    }
    let scale = d2.norm() * lambda.norm() * lambda.norm() + d1.norm() * lambda.norm() + h_z.norm();
    r.norm() / (scale * u.norm()).max(f64::MIN_POSITIVE)
}
