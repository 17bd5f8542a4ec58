//! Shared test oracles and desk-scale model factories.
//!
//! Everything here is an independent cross-check: the oracles never call
//! into the solver paths they validate. Used as a dev-dependency only.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};

use hb_core::model::{ElementLaw, ForcingSpec, NonlinearElement, PolyTerm, SystemModel};

/// Reference Duffing parameters used across tests:
/// `x'' + c x' + x + k3 x^3 = F cos(w t)`.
#[derive(Debug, Clone, Copy)]
pub struct DuffingParams {
    pub damping: f64,
    pub cubic: f64,
    pub forcing: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self { damping: 0.05, cubic: 1.0, forcing: 0.1 }
    }
}

/// Unit-mass, unit-stiffness Duffing oscillator with the forcing amplitude
/// registered as parameter `F`.
pub fn duffing(p: DuffingParams) -> SystemModel {
    SystemModel::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, p.damping),
        DMatrix::from_element(1, 1, 1.0),
        vec![NonlinearElement {
            dof_i: 0,
            dof_j: None,
            law: ElementLaw::Cubic { coefficient: p.cubic },
            parameter: None,
        }],
        ForcingSpec { amplitude: vec![1.0], harmonic: 1, nu: 1 },
        BTreeMap::from([("F".to_string(), p.forcing)]),
    )
    .expect("valid Duffing model")
}

/// Lightly damped 3-DOF chain with distinct modes, for linear exactness
/// checks.
pub fn linear_chain_3dof() -> SystemModel {
    let mass = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 0.8]);
    let stiffness =
        DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.5, -1.2, 0.0, -1.2, 1.9]);
    // Light proportional damping keeps every resonance finite.
    let damping = &stiffness * 0.01 + &mass * 0.005;
    SystemModel::new(
        mass,
        damping,
        stiffness,
        vec![],
        ForcingSpec { amplitude: vec![1.0, 0.0, 0.3], harmonic: 1, nu: 1 },
        BTreeMap::new(),
    )
    .expect("valid linear chain")
}

/// Duffing oscillator with an extra quadratic stiffness term, activating
/// even harmonics.
pub fn asymmetric_duffing(p: DuffingParams, quadratic: f64) -> SystemModel {
    SystemModel::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, p.damping),
        DMatrix::from_element(1, 1, 1.0),
        vec![NonlinearElement {
            dof_i: 0,
            dof_j: None,
            law: ElementLaw::Polynomial {
                terms: vec![
                    PolyTerm { power: 2, coefficient: quadratic },
                    PolyTerm { power: 3, coefficient: p.cubic },
                ],
            },
            parameter: None,
        }],
        ForcingSpec { amplitude: vec![1.0], harmonic: 1, nu: 1 },
        BTreeMap::from([("F".to_string(), p.forcing)]),
    )
    .expect("valid asymmetric Duffing model")
}

/// Duffing with a dashpot element bound to parameter `c_nl`, exercising the
/// velocity-dependent force paths.
pub fn duffing_with_dashpot(p: DuffingParams, c_nl: f64) -> SystemModel {
    SystemModel::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, p.damping),
        DMatrix::from_element(1, 1, 1.0),
        vec![
            NonlinearElement {
                dof_i: 0,
                dof_j: None,
                law: ElementLaw::Cubic { coefficient: p.cubic },
                parameter: None,
            },
            NonlinearElement {
                dof_i: 0,
                dof_j: None,
                law: ElementLaw::Dashpot { coefficient: c_nl },
                parameter: Some("c_nl".to_string()),
            },
        ],
        ForcingSpec { amplitude: vec![1.0], harmonic: 1, nu: 1 },
        BTreeMap::from([("F".to_string(), p.forcing), ("c_nl".to_string(), c_nl)]),
    )
    .expect("valid dashpot Duffing model")
}

/// Roots of the single-harmonic Duffing amplitude equation
/// `((1 - w^2) a + (3/4) k3 a^3)^2 + (c w a)^2 = F^2`, returned as the
/// positive amplitudes `a` (1 or 3 values). Solved as a cubic in `u = a^2`
/// through its companion matrix.
pub fn duffing_amplitudes(p: DuffingParams, omega: f64) -> Vec<f64> {
    let k3 = p.cubic;
    let d = 1.0 - omega * omega;
    // (9/16) k3^2 u^3 + (3/2) k3 d u^2 + (d^2 + c^2 w^2) u - F^2 = 0
    let a3 = 9.0 / 16.0 * k3 * k3;
    let a2 = 1.5 * k3 * d;
    let a1 = d * d + p.damping * p.damping * omega * omega;
    let a0 = -p.forcing * p.forcing;
    let mut out: Vec<f64> = cubic_roots(a3, a2, a1, a0)
        .into_iter()
        .filter(|r| r.im.abs() < 1e-9 * (1.0 + r.re.abs()) && r.re > 0.0)
        .map(|r| r.re.sqrt())
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// All roots of `a3 x^3 + a2 x^2 + a1 x + a0` via the companion matrix.
pub fn cubic_roots(a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<Complex<f64>> {
    assert!(a3 != 0.0, "not a cubic");
    let companion = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, 0.0, -a0 / a3, 1.0, 0.0, -a1 / a3, 0.0, 1.0, -a2 / a3],
    );
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Discriminant of `a x^3 + b x^2 + c x + d`.
pub fn cubic_discriminant(a: f64, b: f64, c: f64, d: f64) -> f64 {
    18.0 * a * b * c * d - 4.0 * b * b * b * d + b * b * c * c
        - 4.0 * a * c * c * c
        - 27.0 * a * a * d * d
}

/// Fold locus of the Duffing response in closed form. At a fold the
/// amplitude cubic has a double root, i.e. `dA/du = 0` at a root; the
/// stationary points `u+-(w)` do not depend on `F`, so each yields a fold
/// branch `F(w)`. Returns `(amplitude, forcing)` pairs at `omega`
/// (0, 1 or 2 of them).
pub fn duffing_fold_locus(p: DuffingParams, omega: f64) -> Vec<(f64, f64)> {
    let k3 = p.cubic;
    let d = 1.0 - omega * omega;
    let a3 = 9.0 / 16.0 * k3 * k3;
    let a2 = 1.5 * k3 * d;
    let a1 = d * d + p.damping * p.damping * omega * omega;
    // dA/du = 3 a3 u^2 + 2 a2 u + a1 = 0
    let disc = a2 * a2 - 3.0 * a3 * a1;
    if disc <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for sign in [-1.0, 1.0] {
        let u = (-a2 + sign * disc.sqrt()) / (3.0 * a3);
        if u > 0.0 {
            let f2 = a3 * u * u * u + a2 * u * u + a1 * u;
            if f2 > 0.0 {
                out.push((u.sqrt(), f2.sqrt()));
            }
        }
    }
    out
}

/// Fold frequencies of the Duffing response at the parameter set's forcing
/// level, located by bisection along each closed-form fold branch.
pub fn duffing_fold_frequencies(p: DuffingParams, omega_range: (f64, f64)) -> Vec<f64> {
    let f_target = p.forcing;
    let samples = 4000;
    let (lo, hi) = omega_range;
    let mut folds = Vec::new();
    for branch in 0..2 {
        let value = |w: f64| -> Option<f64> {
            let locus = duffing_fold_locus(p, w);
            locus.get(branch).map(|(_, f)| f - f_target)
        };
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=samples {
            let w = lo + (hi - lo) * i as f64 / samples as f64;
            let Some(val) = value(w) else {
                prev = None;
                continue;
            };
            if let Some((wp, vp)) = prev {
                if vp * val < 0.0 {
                    let (mut a, mut fa, mut b) = (wp, vp, w);
                    for _ in 0..80 {
                        let mid = 0.5 * (a + b);
                        let fm = value(mid).expect("inside branch");
                        if fa * fm <= 0.0 {
                            b = mid;
                        } else {
                            a = mid;
                            fa = fm;
                        }
                    }
                    folds.push(0.5 * (a + b));
                }
            }
            prev = Some((w, val));
        }
    }
    folds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    folds.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    folds
}

/// Cusp of the Duffing fold curve (minimum forcing with coincident folds):
/// the stationary points merge when `(1 - w^2)^2 = 3 c^2 w^2`, giving
/// `w^2 - sqrt(3) c w - 1 = 0` on the hardening side.
pub fn duffing_cusp(p: DuffingParams) -> (f64, f64) {
    let c = p.damping;
    let s3 = 3.0_f64.sqrt();
    let omega = 0.5 * (s3 * c + (3.0 * c * c + 4.0).sqrt());
    let k3 = p.cubic;
    let d = 1.0 - omega * omega;
    let a3 = 9.0 / 16.0 * k3 * k3;
    let a2 = 1.5 * k3 * d;
    let a1 = d * d + c * c * omega * omega;
    let u = -a2 / (3.0 * a3); // double stationary point
    let f2 = a3 * u * u * u + a2 * u * u + a1 * u;
    (omega, f2.sqrt())
}

/// Independent Galerkin residual: projects the equations of motion onto
/// the trigonometric basis by trapezoid quadrature on `quad_samples`
/// points, with the motion evaluated directly from the Fourier series.
/// Matches the balance residual `h` when the quadrature resolves every
/// force harmonic.
pub fn galerkin_residual_oracle(
    model: &SystemModel,
    z: &DVector<f64>,
    omega: f64,
    n_harmonics: usize,
    quad_samples: usize,
) -> DVector<f64> {
    let n = model.dof();
    let nc = 2 * n_harmonics + 1;
    assert_eq!(z.len(), nc * n);
    let nu = model.forcing().nu as f64;
    let base = omega / nu;
    let period = 2.0 * std::f64::consts::PI / base;
    let amp = model.forcing_amplitude();
    let h_force = model.forcing().harmonic as f64;
    let mut h = DVector::zeros(nc * n);
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    for j in 0..quad_samples {
        let t = period * j as f64 / quad_samples as f64;
        // Direct series evaluation.
        let mut x = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        let mut acc = DVector::zeros(n);
        for dof in 0..n {
            x[dof] = z[dof] * inv_sqrt2;
        }
        for k in 1..=n_harmonics {
            let kw = k as f64 * base;
            let (s, c) = (kw * t).sin_cos();
            for dof in 0..n {
                let sk = z[(2 * k - 1) * n + dof];
                let ck = z[2 * k * n + dof];
                x[dof] += sk * s + ck * c;
                v[dof] += kw * (sk * c - ck * s);
                acc[dof] += -kw * kw * (sk * s + ck * c);
            }
        }
        let f_ext = &amp * (h_force * omega * t).cos();
        let r = model.mass() * &acc
            + model.damping() * &v
            + model.stiffness() * &x
            + model.eval_nonlinear_force(&x, &v)
            - f_ext;
        // (2/T) integral of r(t) Q_b(t) dt; trapezoid on a periodic
        // integrand has uniform weights.
        let w_quad = 2.0 / quad_samples as f64;
        for dof in 0..n {
            h[dof] += w_quad * r[dof] * inv_sqrt2;
        }
        for k in 1..=n_harmonics {
            let (s, c) = (k as f64 * base * t).sin_cos();
            for dof in 0..n {
                h[(2 * k - 1) * n + dof] += w_quad * r[dof] * s;
                h[2 * k * n + dof] += w_quad * r[dof] * c;
            }
        }
    }
    h
}

/// Central finite difference of a vector-valued function.
pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    rel_step: f64,
) -> DMatrix<f64> {
    let fx = f(x);
    let mut j = DMatrix::zeros(fx.len(), x.len());
    for col in 0..x.len() {
        let h = rel_step * (1.0 + x[col].abs());
        let mut xp = x.clone();
        xp[col] += h;
        let mut xm = x.clone();
        xm[col] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        j.column_mut(col).copy_from(&d);
    }
    j
}

/// Discrete Hausdorff distance between two polylines (max over points of
/// one to the segment chain of the other, both ways).
pub fn polyline_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    fn point_segment(p: (f64, f64), s0: (f64, f64), s1: (f64, f64)) -> f64 {
        let (dx, dy) = (s1.0 - s0.0, s1.1 - s0.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - s0.0) * dx + (p.1 - s0.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (s0.0 + t * dx, s0.1 + t * dy);
        ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
    }
    fn one_way(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
        from.iter()
            .map(|&p| {
                to.windows(2)
                    .map(|w| point_segment(p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
    one_way(a, b).max(one_way(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_roots_factors() {
        // (x - 1)(x - 2)(x - 3)
        let roots = cubic_roots(1.0, -6.0, 11.0, -6.0);
        let mut re: Vec<f64> = roots.iter().map(|r| r.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] - 1.0).abs() < 1e-10);
        assert!((re[1] - 2.0).abs() < 1e-10);
        assert!((re[2] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn duffing_amplitude_counts() {
        let p = DuffingParams::default();
        // Far below resonance: single solution.
        assert_eq!(duffing_amplitudes(p, 0.5).len(), 1);
        // Inside the bistable window of the hardening response: three.
        let folds = duffing_fold_frequencies(p, (1.0, 3.0));
        assert_eq!(folds.len(), 2, "expected a fold pair, got {folds:?}");
        let mid = 0.5 * (folds[0] + folds[1]);
        assert_eq!(duffing_amplitudes(p, mid).len(), 3);
        // Above the upper fold: single again.
        assert_eq!(duffing_amplitudes(p, folds[1] + 0.3).len(), 1);
    }

    #[test]
    fn fold_frequencies_lie_on_discriminant_zeros() {
        let p = DuffingParams::default();
        let folds = duffing_fold_frequencies(p, (1.0, 3.0));
        for w in folds {
            let k3 = p.cubic;
            let d = 1.0 - w * w;
            let disc = cubic_discriminant(
                9.0 / 16.0 * k3 * k3,
                1.5 * k3 * d,
                d * d + p.damping * p.damping * w * w,
                -p.forcing * p.forcing,
            );
            assert!(disc.abs() < 1e-7, "discriminant at fold {w}: {disc}");
        }
    }

    #[test]
    fn cusp_merges_the_fold_pair() {
        let p = DuffingParams::default();
        let (w_cusp, f_cusp) = duffing_cusp(p);
        // Slightly above the cusp forcing two folds exist, slightly below
        // none.
        let above = DuffingParams { forcing: f_cusp * 1.02, ..p };
        let below = DuffingParams { forcing: f_cusp * 0.98, ..p };
        assert_eq!(duffing_fold_frequencies(above, (1.0, w_cusp + 1.0)).len(), 2);
        assert_eq!(duffing_fold_frequencies(below, (1.0, w_cusp + 1.0)).len(), 0);
    }

    #[test]
    fn hausdorff_of_shifted_line() {
        let a: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let b: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.5)).collect();
        assert!((polyline_hausdorff(&a, &b) - 0.5).abs() < 1e-12);
    }
}
