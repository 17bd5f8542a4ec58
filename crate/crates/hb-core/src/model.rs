//! Structural system definition: matrices, nonlinear elements, forcing and
//! named tunable parameters.
//!
//! The model describes the second-order equations of motion
//!
//! ```text
//! M x'' + C x' + K x + f_nl(x, x') = f_ext(omega, t)
//! ```
//!
//! with dense `M`, `C`, `K`, lumped nonlinear elements acting on single DOFs
//! or on the relative motion of a DOF pair, and a harmonic external force.
//! A model is immutable after construction; changing a named parameter
//! produces a new model value.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HbError, Result};

/// Lumped force law of a nonlinear element, expressed on the element
/// deflection `d` (and deflection rate for dashpots).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementLaw {
    /// `f = k3 * d^3`
    Cubic { coefficient: f64 },
    /// Linear slope `k_in` up to the clearance, slope `k_out` beyond it.
    /// The clearance may be negative (stop on the negative side).
    Bilinear { k_in: f64, k_out: f64, clearance: f64 },
    /// Trilinear stop pair with C1 polynomial blends near both clearances.
    TrilinearRegularized {
        k_in: f64,
        k_out_minus: f64,
        k_out_plus: f64,
        a_minus: f64,
        a_plus: f64,
        /// Blend half-width; defaults to `0.01 * min(|a_minus|, a_plus)`.
        #[serde(default)]
        delta: Option<f64>,
    },
    /// `f = sum_k coefficient_k * d^power_k`, integer powers >= 1.
    Polynomial { terms: Vec<PolyTerm> },
    /// Viscous dashpot `f = c * d'` on the element deflection rate.
    Dashpot { coefficient: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolyTerm {
    pub power: u32,
    pub coefficient: f64,
}

/// One nonlinear element. `dof_j = None` means the element acts on the
/// absolute motion of `dof_i`; otherwise on `x_i - x_j` with equal and
/// opposite reaction on `dof_j`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NonlinearElement {
    pub dof_i: usize,
    #[serde(default)]
    pub dof_j: Option<usize>,
    #[serde(flatten)]
    pub law: ElementLaw,
    /// Name of a model parameter overriding the element's primary
    /// coefficient (cubic/dashpot coefficient, bilinear `k_out`).
    #[serde(default)]
    pub parameter: Option<String>,
}

/// Harmonic external force specification.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForcingSpec {
    /// Base amplitude per DOF, in N. Scaled by the parameter `F` when the
    /// model registers one.
    pub amplitude: Vec<f64>,
    /// The force is `amplitude * cos(harmonic * omega * t)`.
    #[serde(default = "default_harmonic")]
    pub harmonic: u32,
    /// Subharmonic divisor: the response is sought with period `2*pi*nu/omega`.
    #[serde(default = "default_nu")]
    pub nu: u32,
}

fn default_harmonic() -> u32 {
    1
}
fn default_nu() -> u32 {
    1
}

/// Serialized form of a model: dense row-major matrices plus element,
/// forcing and parameter records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub dof: usize,
    pub mass: Vec<Vec<f64>>,
    pub damping: Vec<Vec<f64>>,
    pub stiffness: Vec<Vec<f64>>,
    #[serde(default)]
    pub elements: Vec<NonlinearElement>,
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

/// Immutable structural model.
#[derive(Debug, Clone)]
pub struct SystemModel {
    n: usize,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    elements: Vec<NonlinearElement>,
    trilinear: Vec<Option<RegularizedTrilinear>>,
    forcing: ForcingSpec,
    parameters: BTreeMap<String, f64>,
}

impl SystemModel {
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        elements: Vec<NonlinearElement>,
        forcing: ForcingSpec,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = mass.nrows();
        for (name, m) in [("M", &mass), ("C", &damping), ("K", &stiffness)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(HbError::InvalidModel(format!("{name} is not {n}x{n}")));
            }
            if !m.iter().all(|x| x.is_finite()) {
                return Err(HbError::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        let sym_tol = 1e-10;
        if rel_asym(&mass) > sym_tol {
            return Err(HbError::InvalidModel("M is not symmetric".into()));
        }
        if rel_asym(&stiffness) > sym_tol {
            return Err(HbError::InvalidModel("K is not symmetric".into()));
        }
        if mass.clone().cholesky().is_none() {
            return Err(HbError::InvalidModel("M is not positive definite".into()));
        }
        if forcing.amplitude.len() != n {
            return Err(HbError::Dimension {
                expected: n,
                got: forcing.amplitude.len(),
                context: "forcing amplitude",
            });
        }
        if forcing.amplitude.iter().all(|a| *a == 0.0) {
            return Err(HbError::InvalidModel("forcing amplitude is identically zero".into()));
        }
        if forcing.nu == 0 {
            return Err(HbError::InvalidModel("subharmonic divisor nu must be >= 1".into()));
        }
        if forcing.harmonic == 0 {
            return Err(HbError::InvalidModel("forcing harmonic index must be >= 1".into()));
        }
        let mut trilinear = Vec::with_capacity(elements.len());
        for el in &elements {
            if el.dof_i >= n {
                return Err(HbError::InvalidModel(format!("element dof {} out of range", el.dof_i)));
            }
            if let Some(j) = el.dof_j {
                if j >= n {
                    return Err(HbError::InvalidModel(format!("element dof {j} out of range")));
                }
                if j == el.dof_i {
                    return Err(HbError::InvalidModel("element dof pair must be distinct".into()));
                }
            }
            if let Some(p) = &el.parameter {
                if !parameters.contains_key(p) {
                    return Err(HbError::UnknownParameter(p.clone()));
                }
                match el.law {
                    ElementLaw::Cubic { .. } | ElementLaw::Dashpot { .. } | ElementLaw::Bilinear { .. } => {}
                    _ => {
                        return Err(HbError::InvalidModel(
                            "parameter binding is only supported for cubic, bilinear and dashpot elements"
                                .into(),
                        ))
                    }
                }
            }
            trilinear.push(match &el.law {
                ElementLaw::TrilinearRegularized {
                    k_in,
                    k_out_minus,
                    k_out_plus,
                    a_minus,
                    a_plus,
                    delta,
                } => Some(RegularizedTrilinear::new(
                    *k_in,
                    *k_out_minus,
                    *k_out_plus,
                    *a_minus,
                    *a_plus,
                    *delta,
                )?),
                ElementLaw::Polynomial { terms } => {
                    if terms.iter().any(|t| t.power == 0 || !t.coefficient.is_finite()) {
                        return Err(HbError::InvalidModel(
                            "polynomial terms need integer powers >= 1 and finite coefficients".into(),
                        ));
                    }
                    None
                }
                _ => None,
            });
        }
        Ok(Self {
            n,
            mass,
            damping,
            stiffness,
            elements,
            trilinear,
            forcing,
            parameters,
        })
    }

    pub fn from_file_record(record: ModelFile) -> Result<Self> {
        let to_mat = |rows: &[Vec<f64>], name: &str| -> Result<DMatrix<f64>> {
            let n = record.dof;
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(HbError::InvalidModel(format!("{name} is not {n}x{n}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        let mass = to_mat(&record.mass, "mass")?;
        let damping = to_mat(&record.damping, "damping")?;
        let stiffness = to_mat(&record.stiffness, "stiffness")?;
        Self::new(mass, damping, stiffness, record.elements, record.forcing, record.parameters)
    }

    pub fn to_file_record(&self) -> ModelFile {
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..self.n).map(|i| (0..self.n).map(|j| m[(i, j)]).collect()).collect()
        };
        ModelFile {
            dof: self.n,
            mass: to_rows(&self.mass),
            damping: to_rows(&self.damping),
            stiffness: to_rows(&self.stiffness),
            elements: self.elements.clone(),
            forcing: self.forcing.clone(),
            parameters: self.parameters.clone(),
        }
    }

    pub fn dof(&self) -> usize {
        self.n
    }
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }
    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }
    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }
    pub fn elements(&self) -> &[NonlinearElement] {
        &self.elements
    }
    pub fn forcing(&self) -> &ForcingSpec {
        &self.forcing
    }
    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn parameter(&self, name: &str) -> Result<f64> {
        self.parameters
            .get(name)
            .copied()
            .ok_or_else(|| HbError::UnknownParameter(name.to_string()))
    }

    /// New model with `name` set to `value`. The parameter must already be
    /// registered.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        if !self.parameters.contains_key(name) {
            return Err(HbError::UnknownParameter(name.to_string()));
        }
        let mut out = self.clone();
        out.parameters.insert(name.to_string(), value);
        Ok(out)
    }

    /// Effective forcing amplitude vector, with the `F` parameter applied
    /// when registered.
    pub fn forcing_amplitude(&self) -> DVector<f64> {
        let scale = self.parameters.get("F").copied().unwrap_or(1.0);
        DVector::from_iterator(self.n, self.forcing.amplitude.iter().map(|a| a * scale))
    }

    /// True if any nonlinear element touches `dof`.
    pub fn dof_is_nonlinear(&self, dof: usize) -> bool {
        self.elements
            .iter()
            .any(|el| el.dof_i == dof || el.dof_j == Some(dof))
    }

    pub fn has_velocity_elements(&self) -> bool {
        self.elements
            .iter()
            .any(|el| matches!(el.law, ElementLaw::Dashpot { .. }))
    }

    fn element_coefficient(&self, el: &NonlinearElement, base: f64) -> f64 {
        match &el.parameter {
            Some(name) => self.parameters.get(name).copied().unwrap_or(base),
            None => base,
        }
    }

    /// Scalar element force and its deflection/rate derivatives at
    /// deflection `d` and deflection rate `dv`.
    fn element_force(&self, idx: usize, d: f64, dv: f64) -> (f64, f64, f64) {
        let el = &self.elements[idx];
        match &el.law {
            ElementLaw::Cubic { coefficient } => {
                let k = self.element_coefficient(el, *coefficient);
                (k * d * d * d, 3.0 * k * d * d, 0.0)
            }
            ElementLaw::Bilinear { k_in, k_out, clearance } => {
                let k_out = self.element_coefficient(el, *k_out);
                let a = *clearance;
                let beyond = if a >= 0.0 { d > a } else { d < a };
                if beyond {
                    (k_in * a + k_out * (d - a), k_out, 0.0)
                } else {
                    (k_in * d, *k_in, 0.0)
                }
            }
            ElementLaw::TrilinearRegularized { .. } => {
                let law = self.trilinear[idx].as_ref().expect("trilinear law built");
                (law.force(d), law.slope(d), 0.0)
            }
            ElementLaw::Polynomial { terms } => {
                let mut f = 0.0;
                let mut df = 0.0;
                for t in terms {
                    let p = t.power as i32;
                    f += t.coefficient * d.powi(p);
                    df += t.coefficient * p as f64 * d.powi(p - 1);
                }
                (f, df, 0.0)
            }
            ElementLaw::Dashpot { coefficient } => {
                let c = self.element_coefficient(el, *coefficient);
                (c * dv, 0.0, c)
            }
        }
    }

    /// Assembled nonlinear force vector at displacements `x`, velocities `v`.
    pub fn eval_nonlinear_force(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.n);
        for (idx, el) in self.elements.iter().enumerate() {
            let (d, dv) = match el.dof_j {
                Some(j) => (x[el.dof_i] - x[j], v[el.dof_i] - v[j]),
                None => (x[el.dof_i], v[el.dof_i]),
            };
            let (fe, _, _) = self.element_force(idx, d, dv);
            f[el.dof_i] += fe;
            if let Some(j) = el.dof_j {
                f[j] -= fe;
            }
        }
        f
    }

    /// Analytic `df_nl/dx` and `df_nl/dv` at the given state.
    pub fn eval_nonlinear_jacobians(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut jx = DMatrix::zeros(self.n, self.n);
        let mut jv = DMatrix::zeros(self.n, self.n);
        for (idx, el) in self.elements.iter().enumerate() {
            let (d, dv) = match el.dof_j {
                Some(j) => (x[el.dof_i] - x[j], v[el.dof_i] - v[j]),
                None => (x[el.dof_i], v[el.dof_i]),
            };
            let (_, dfd, dfv) = self.element_force(idx, d, dv);
            let i = el.dof_i;
            jx[(i, i)] += dfd;
            jv[(i, i)] += dfv;
            if let Some(j) = el.dof_j {
                jx[(i, j)] -= dfd;
                jx[(j, i)] -= dfd;
                jx[(j, j)] += dfd;
                jv[(i, j)] -= dfv;
                jv[(j, i)] -= dfv;
                jv[(j, j)] += dfv;
            }
        }
        (jx, jv)
    }

    /// Complex receptance at physical frequency `omega_phys`:
    /// `X = (K - w^2 M + i w C)^-1 * F`.
    pub fn linear_frf(&self, omega_phys: f64) -> Result<DVector<Complex<f64>>> {
        if omega_phys <= 0.0 {
            return Err(HbError::InvalidModel("linear_frf needs omega > 0".into()));
        }
        let n = self.n;
        let mut a = DMatrix::<Complex<f64>>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = Complex::new(
                    self.stiffness[(i, j)] - omega_phys * omega_phys * self.mass[(i, j)],
                    omega_phys * self.damping[(i, j)],
                );
            }
        }
        let rhs = self.forcing_amplitude().map(|x| Complex::new(x, 0.0));
        a.lu()
            .solve(&rhs)
            .ok_or(HbError::Singular { context: "linear FRF (undamped resonance)" })
    }
}

fn rel_asym(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm().max(1e-300);
    (m - m.transpose()).norm() / scale
}

/// Trilinear stop law with cubic Hermite blends of half-width `delta`
/// around both clearances, giving C1 continuity.
///
/// Outside the blends the law is the plain trilinear spring: slope `k_in`
/// between the clearances `a_minus < 0 < a_plus` and slopes `k_out_-`,
/// `k_out_+` beyond them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedTrilinear {
    k_in: f64,
    k_out_minus: f64,
    k_out_plus: f64,
    a_minus: f64,
    a_plus: f64,
    delta: f64,
    blend_plus: HermiteSegment,
    blend_minus: HermiteSegment,
}

/// Cubic `c0 + c1 u + c2 u^2 + c3 u^3` on `u = x - x_left`.
#[derive(Debug, Clone, PartialEq)]
struct HermiteSegment {
    x_left: f64,
    c: [f64; 4],
}

impl HermiteSegment {
    /// Cubic matching value and slope at both ends of `[x0, x1]`.
    fn fit(x0: f64, x1: f64, p0: f64, m0: f64, p1: f64, m1: f64) -> Self {
        let h = x1 - x0;
        let c0 = p0;
        let c1 = m0;
        let c2 = (3.0 * (p1 - p0) / h - 2.0 * m0 - m1) / h;
        let c3 = (2.0 * (p0 - p1) / h + m0 + m1) / (h * h);
        Self { x_left: x0, c: [c0, c1, c2, c3] }
    }

    fn value(&self, x: f64) -> f64 {
        let u = x - self.x_left;
        self.c[0] + u * (self.c[1] + u * (self.c[2] + u * self.c[3]))
    }

    fn slope(&self, x: f64) -> f64 {
        let u = x - self.x_left;
        self.c[1] + u * (2.0 * self.c[2] + u * 3.0 * self.c[3])
    }
}

impl RegularizedTrilinear {
    pub fn new(
        k_in: f64,
        k_out_minus: f64,
        k_out_plus: f64,
        a_minus: f64,
        a_plus: f64,
        delta: Option<f64>,
    ) -> Result<Self> {
        if !(a_minus < 0.0 && a_plus > 0.0) {
            return Err(HbError::InvalidModel("trilinear clearances need a_minus < 0 < a_plus".into()));
        }
        let delta = delta.unwrap_or(0.01 * a_minus.abs().min(a_plus));
        if delta <= 0.0 {
            return Err(HbError::InvalidModel("trilinear blend half-width must be positive".into()));
        }
        if delta >= a_minus.abs().min(a_plus) / 2.0 {
            return Err(HbError::InvalidModel(
                "trilinear blend intervals overlap; reduce delta".into(),
            ));
        }
        for k in [k_in, k_out_minus, k_out_plus] {
            if !k.is_finite() {
                return Err(HbError::InvalidModel("trilinear stiffness must be finite".into()));
            }
        }
        // Plain trilinear force, continuous at the clearances:
        //   x < a_-:          k_in a_- + k_out_-(x - a_-)
        //   a_- <= x <= a_+:  k_in x
        //   x > a_+:          k_in a_+ + k_out_+(x - a_+)
        let f_outer_plus = |x: f64| k_in * a_plus + k_out_plus * (x - a_plus);
        let f_outer_minus = |x: f64| k_in * a_minus + k_out_minus * (x - a_minus);
        let blend_plus = HermiteSegment::fit(
            a_plus - delta,
            a_plus + delta,
            k_in * (a_plus - delta),
            k_in,
            f_outer_plus(a_plus + delta),
            k_out_plus,
        );
        let blend_minus = HermiteSegment::fit(
            a_minus - delta,
            a_minus + delta,
            f_outer_minus(a_minus - delta),
            k_out_minus,
            k_in * (a_minus + delta),
            k_in,
        );
        Ok(Self {
            k_in,
            k_out_minus,
            k_out_plus,
            a_minus,
            a_plus,
            delta,
            blend_plus,
            blend_minus,
        })
    }

    pub fn force(&self, x: f64) -> f64 {
        if x < self.a_minus - self.delta {
            self.k_in * self.a_minus + self.k_out_minus * (x - self.a_minus)
        } else if x <= self.a_minus + self.delta {
            self.blend_minus.value(x)
        } else if x < self.a_plus - self.delta {
            self.k_in * x
        } else if x <= self.a_plus + self.delta {
            self.blend_plus.value(x)
        } else {
            self.k_in * self.a_plus + self.k_out_plus * (x - self.a_plus)
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        if x < self.a_minus - self.delta {
            self.k_out_minus
        } else if x <= self.a_minus + self.delta {
            self.blend_minus.slope(x)
        } else if x < self.a_plus - self.delta {
            self.k_in
        } else if x <= self.a_plus + self.delta {
            self.blend_plus.slope(x)
        } else {
            self.k_out_plus
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Blend knot abscissae, leftmost first.
    pub fn knots(&self) -> [f64; 4] {
        [
            self.a_minus - self.delta,
            self.a_minus + self.delta,
            self.a_plus - self.delta,
            self.a_plus + self.delta,
        ]
    }
}

/// Free-function constructor for a scalar regularized trilinear law.
pub fn build_regularized_trilinear(
    k_in: f64,
    k_out_minus: f64,
    k_out_plus: f64,
    a_minus: f64,
    a_plus: f64,
    delta: Option<f64>,
) -> Result<RegularizedTrilinear> {
    RegularizedTrilinear::new(k_in, k_out_minus, k_out_plus, a_minus, a_plus, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_oscillator(c: f64, elements: Vec<NonlinearElement>) -> SystemModel {
        SystemModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, 1.0),
            elements,
            ForcingSpec { amplitude: vec![1.0], harmonic: 1, nu: 1 },
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn no_elements_gives_zero_force() {
        let m = unit_oscillator(0.05, vec![]);
        let x = DVector::from_vec(vec![0.7]);
        let v = DVector::from_vec(vec![-1.3]);
        assert_eq!(m.eval_nonlinear_force(&x, &v), DVector::zeros(1));
        let (jx, jv) = m.eval_nonlinear_jacobians(&x, &v);
        assert_eq!(jx, DMatrix::zeros(1, 1));
        assert_eq!(jv, DMatrix::zeros(1, 1));
    }

    #[test]
    fn cubic_element_force_and_jacobian() {
        let m = unit_oscillator(
            0.05,
            vec![NonlinearElement {
                dof_i: 0,
                dof_j: None,
                law: ElementLaw::Cubic { coefficient: 0.1 },
                parameter: None,
            }],
        );
        let x = DVector::from_vec(vec![2.0]);
        let v = DVector::zeros(1);
        let f = m.eval_nonlinear_force(&x, &v);
        assert_relative_eq!(f[0], 0.8, max_relative = 1e-15);
        let (jx, _) = m.eval_nonlinear_jacobians(&x, &v);
        assert_relative_eq!(jx[(0, 0)], 1.2, max_relative = 1e-15);
    }

    #[test]
    fn trilinear_inner_band_is_exactly_linear() {
        let law = RegularizedTrilinear::new(1.0, 30.0, 25.0, -0.2, 0.15, Some(0.01)).unwrap();
        for x in [-0.18, -0.1, 0.0, 0.05, 0.13] {
            assert_eq!(law.force(x), x);
            assert_eq!(law.slope(x), 1.0);
        }
        assert_eq!(law.force(0.0), 0.0);
    }

    #[test]
    fn trilinear_knot_continuity_is_exact() {
        let law = RegularizedTrilinear::new(2.0, 40.0, 55.0, -0.3, 0.2, Some(0.02)).unwrap();
        for x in law.knots() {
            let eps = 1e-9 * (1.0 + x.abs());
            let (fl, fr) = (law.force(x - eps), law.force(x + eps));
            let (sl, sr) = (law.slope(x - eps), law.slope(x + eps));
            assert!((fl - fr).abs() <= 1e-7 * (1.0 + fl.abs()), "value jump at {x}");
            assert!((sl - sr).abs() <= 1e-5 * (1.0 + sl.abs()), "slope jump at {x}");
        }
        // Exact matching at the knots themselves.
        let d = law.delta();
        assert_relative_eq!(law.force(0.2 - d), 2.0 * (0.2 - d), max_relative = 1e-14);
        assert_relative_eq!(law.force(0.2 + d), 2.0 * 0.2 + 55.0 * d, max_relative = 1e-14);
        assert_relative_eq!(law.slope(0.2 + d), 55.0, max_relative = 1e-12);
        assert_relative_eq!(law.slope(-0.3 - d), 40.0, max_relative = 1e-12);
    }

    #[test]
    fn trilinear_slope_never_softens_below_branch_minimum() {
        // Dense sampling oracle: with all slopes positive the blend must not
        // undershoot the smallest branch stiffness.
        let law = RegularizedTrilinear::new(1.0, 30.0, 25.0, -0.2, 0.15, Some(0.015)).unwrap();
        let k_min = 1.0_f64.min(30.0).min(25.0);
        let lo = -0.4;
        let hi = 0.4;
        for i in 0..10_000 {
            let x = lo + (hi - lo) * (i as f64) / 9_999.0;
            assert!(law.slope(x) >= k_min - 1e-9, "softening at {x}: {}", law.slope(x));
        }
    }

    #[test]
    fn trilinear_rejects_bad_delta() {
        assert!(RegularizedTrilinear::new(1.0, 2.0, 2.0, -0.1, 0.1, Some(0.0)).is_err());
        assert!(RegularizedTrilinear::new(1.0, 2.0, 2.0, -0.1, 0.1, Some(0.06)).is_err());
        assert!(RegularizedTrilinear::new(1.0, 2.0, 2.0, 0.1, 0.2, None).is_err());
    }

    #[test]
    fn relative_element_is_antisymmetric() {
        let m = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            vec![NonlinearElement {
                dof_i: 0,
                dof_j: Some(1),
                law: ElementLaw::Cubic { coefficient: 2.0 },
                parameter: None,
            }],
            ForcingSpec { amplitude: vec![1.0, 0.0], harmonic: 1, nu: 1 },
            BTreeMap::new(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.5, -0.1]);
        let v = DVector::zeros(2);
        let f = m.eval_nonlinear_force(&x, &v);
        let d: f64 = 0.6;
        assert_relative_eq!(f[0], 2.0 * d.powi(3), max_relative = 1e-14);
        assert_relative_eq!(f[1], -2.0 * d.powi(3), max_relative = 1e-14);
    }

    #[test]
    fn forcing_scales_linearly_with_parameter() {
        let mut params = BTreeMap::new();
        params.insert("F".to_string(), 3.0);
        let m = SystemModel::new(
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, 0.05),
            DMatrix::identity(1, 1),
            vec![],
            ForcingSpec { amplitude: vec![2.0], harmonic: 1, nu: 1 },
            params,
        )
        .unwrap();
        assert_eq!(m.forcing_amplitude()[0], 6.0);
        let m2 = m.with_parameter("F", 6.0).unwrap();
        assert_eq!(m2.forcing_amplitude()[0], 12.0);
        assert!(m.with_parameter("absent", 1.0).is_err());
    }

    #[test]
    fn linear_frf_static_and_resonant_limits() {
        let m = unit_oscillator(0.05, vec![]);
        let x_static = m.linear_frf(1e-6).unwrap();
        assert_relative_eq!(x_static[0].norm(), 1.0, max_relative = 1e-6);
        let x_res = m.linear_frf(1.0).unwrap();
        assert_relative_eq!(x_res[0].norm(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn force_is_additive_over_elements() {
        let el = |k: f64| NonlinearElement {
            dof_i: 0,
            dof_j: None,
            law: ElementLaw::Cubic { coefficient: k },
            parameter: None,
        };
        let both = unit_oscillator(0.0, vec![el(0.1), el(0.4)]);
        let first = unit_oscillator(0.0, vec![el(0.1)]);
        let second = unit_oscillator(0.0, vec![el(0.4)]);
        let x = DVector::from_vec(vec![1.3]);
        let v = DVector::zeros(1);
        let sum = first.eval_nonlinear_force(&x, &v) + second.eval_nonlinear_force(&x, &v);
        assert_relative_eq!(both.eval_nonlinear_force(&x, &v)[0], sum[0], max_relative = 1e-14);
    }

    #[test]
    fn model_file_round_trip() {
        let record = ModelFile {
            dof: 2,
            mass: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            damping: vec![vec![0.02, 0.0], vec![0.0, 0.03]],
            stiffness: vec![vec![2.0, -1.0], vec![-1.0, 1.0]],
            elements: vec![NonlinearElement {
                dof_i: 1,
                dof_j: None,
                law: ElementLaw::Polynomial {
                    terms: vec![PolyTerm { power: 2, coefficient: 0.5 }],
                },
                parameter: None,
            }],
            forcing: ForcingSpec { amplitude: vec![1.0, 0.0], harmonic: 1, nu: 1 },
            parameters: BTreeMap::from([("F".to_string(), 0.5)]),
        };
        let json = serde_json::to_string(&record).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        let model = SystemModel::from_file_record(back).unwrap();
        assert_eq!(model.dof(), 2);
        assert_eq!(model.to_file_record().elements, record.elements);
    }

    #[test]
    fn rejects_invalid_models() {
        // Non-symmetric K.
        assert!(SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            vec![],
            ForcingSpec { amplitude: vec![1.0, 0.0], harmonic: 1, nu: 1 },
            BTreeMap::new(),
        )
        .is_err());
        // Indefinite M.
        assert!(SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            vec![],
            ForcingSpec { amplitude: vec![1.0, 0.0], harmonic: 1, nu: 1 },
            BTreeMap::new(),
        )
        .is_err());
        // Zero forcing.
        assert!(SystemModel::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            vec![],
            ForcingSpec { amplitude: vec![0.0], harmonic: 1, nu: 1 },
            BTreeMap::new(),
        )
        .is_err());
    }
}
