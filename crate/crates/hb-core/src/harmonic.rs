//! Frequency-domain operators for the harmonic balance formulation.
//!
//! State convention: the coefficient vector `z` of length `(2 N_H + 1) n`
//! stacks the blocks `[c0; s1; c1; ...; s_NH; c_NH]`, each of size `n`,
//! for the truncated series
//!
//! ```text
//! x(t) = c0 / sqrt(2) + sum_k ( s_k sin(k w t / nu) + c_k cos(k w t / nu) )
//! ```
//!
//! Time samples are uniform on one period, `t_j = j T / N` with
//! `T = 2 pi nu / w`, so the sampled basis depends only on the phases
//! `2 pi j / N` and is independent of `w`. Sample vectors are DOF-major:
//! `[x_1(t_0) .. x_1(t_{N-1}) .. x_n(t_0) .. x_n(t_{N-1})]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{HbError, Result};
use crate::model::SystemModel;

/// Discretization of one period: harmonic truncation and time sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicGrid {
    pub n_harmonics: usize,
    pub n_samples: usize,
    pub nu: u32,
    pub n_dof: usize,
    pub omega: f64,
}

impl HarmonicGrid {
    pub fn new(n_harmonics: usize, n_samples: usize, nu: u32, n_dof: usize, omega: f64) -> Result<Self> {
        if n_harmonics < 1 {
            return Err(HbError::Config("need at least one harmonic".into()));
        }
        if n_samples < 4 * n_harmonics {
            return Err(HbError::Config(format!(
                "N = {n_samples} violates the anti-aliasing margin N >= 4 N_H = {}",
                4 * n_harmonics
            )));
        }
        if !n_samples.is_power_of_two() {
            return Err(HbError::Config(format!("N = {n_samples} is not a power of two")));
        }
        if nu == 0 {
            return Err(HbError::Config("subharmonic divisor nu must be >= 1".into()));
        }
        if n_dof == 0 {
            return Err(HbError::Config("need at least one DOF".into()));
        }
        if !(omega > 0.0) {
            return Err(HbError::Config("omega must be positive".into()));
        }
        Ok(Self { n_harmonics, n_samples, nu, n_dof, omega })
    }

    /// Number of Fourier coefficients per DOF.
    pub fn n_coeffs(&self) -> usize {
        2 * self.n_harmonics + 1
    }

    /// Total length of the coefficient vector `z`.
    pub fn coeff_len(&self) -> usize {
        self.n_coeffs() * self.n_dof
    }

    /// Base circular frequency of the series, `omega / nu`.
    pub fn base_freq(&self) -> f64 {
        self.omega / self.nu as f64
    }

    /// Period of the sought solution.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.base_freq()
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        Self { omega, ..*self }
    }

    /// Flat index of coefficient block `b` (0 = c0, 2k-1 = s_k, 2k = c_k)
    /// for `dof`.
    pub fn coeff_index(&self, block: usize, dof: usize) -> usize {
        block * self.n_dof + dof
    }
}

/// Fourier coefficient vector of all DOFs, the continuation unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierState {
    coeffs: DVector<f64>,
    n_dof: usize,
    n_harmonics: usize,
}

impl FourierState {
    pub fn new(coeffs: DVector<f64>, grid: &HarmonicGrid) -> Result<Self> {
        if coeffs.len() != grid.coeff_len() {
            return Err(HbError::Dimension {
                expected: grid.coeff_len(),
                got: coeffs.len(),
                context: "Fourier state",
            });
        }
        if !coeffs.iter().all(|x| x.is_finite()) {
            return Err(HbError::InvalidModel("Fourier state has non-finite entries".into()));
        }
        Ok(Self { coeffs, n_dof: grid.n_dof, n_harmonics: grid.n_harmonics })
    }

    pub fn zeros(grid: &HarmonicGrid) -> Self {
        Self {
            coeffs: DVector::zeros(grid.coeff_len()),
            n_dof: grid.n_dof,
            n_harmonics: grid.n_harmonics,
        }
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn n_harmonics(&self) -> usize {
        self.n_harmonics
    }

    /// Constant-term coefficient `c0` of `dof` (the series carries `c0/sqrt(2)`).
    pub fn c0(&self, dof: usize) -> f64 {
        self.coeffs[dof]
    }

    pub fn sin_coeff(&self, k: usize, dof: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.n_harmonics);
        self.coeffs[(2 * k - 1) * self.n_dof + dof]
    }

    pub fn cos_coeff(&self, k: usize, dof: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.n_harmonics);
        self.coeffs[2 * k * self.n_dof + dof]
    }

    /// Harmonic magnitude `phi_k` of `dof`: `|c0|/sqrt(2)` for `k = 0`,
    /// `sqrt(s_k^2 + c_k^2)` otherwise.
    pub fn harmonic_magnitude(&self, k: usize, dof: usize) -> f64 {
        if k == 0 {
            self.c0(dof).abs() / 2.0_f64.sqrt()
        } else {
            self.sin_coeff(k, dof).hypot(self.cos_coeff(k, dof))
        }
    }

    /// Displacement and velocity of all DOFs at time `t`, by direct series
    /// evaluation.
    pub fn evaluate(&self, grid: &HarmonicGrid, t: f64) -> (DVector<f64>, DVector<f64>) {
        let w = grid.base_freq();
        let n = self.n_dof;
        let mut x = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        for dof in 0..n {
            x[dof] = self.c0(dof) / 2.0_f64.sqrt();
        }
        for k in 1..=self.n_harmonics {
            let (s, c) = (k as f64 * w * t).sin_cos();
            let kw = k as f64 * w;
            for dof in 0..n {
                let sk = self.sin_coeff(k, dof);
                let ck = self.cos_coeff(k, dof);
                x[dof] += sk * s + ck * c;
                v[dof] += kw * (sk * c - ck * s);
            }
        }
        (x, v)
    }
}

/// Block-diagonal differentiation operator on the stacked coefficient
/// vector: leading scalar 0 and 2x2 blocks `[0, -k w/nu; k w/nu, 0]`,
/// Kronecker-expanded to `n` DOFs.
pub fn nabla(grid: &HarmonicGrid) -> DMatrix<f64> {
    let n = grid.n_dof;
    let m = grid.coeff_len();
    let w = grid.base_freq();
    let mut out = DMatrix::zeros(m, m);
    for k in 1..=grid.n_harmonics {
        let kw = k as f64 * w;
        let s = (2 * k - 1) * n;
        let c = 2 * k * n;
        for d in 0..n {
            out[(s + d, c + d)] = -kw;
            out[(c + d, s + d)] = kw;
        }
    }
    out
}

/// Square of the differentiation operator: diagonal `-(k w/nu)^2` blocks.
pub fn nabla_squared(grid: &HarmonicGrid) -> DMatrix<f64> {
    let n = grid.n_dof;
    let m = grid.coeff_len();
    let w = grid.base_freq();
    let mut out = DMatrix::zeros(m, m);
    for k in 1..=grid.n_harmonics {
        let kw2 = (k as f64 * w) * (k as f64 * w);
        for b in [(2 * k - 1) * n, 2 * k * n] {
            for d in 0..n {
                out[(b + d, b + d)] = -kw2;
            }
        }
    }
    out
}

/// Linear-dynamics matrix: block 0 is `K`, block `k` is
/// `[K - (k w/nu)^2 M, -(k w/nu) C; (k w/nu) C, K - (k w/nu)^2 M]`.
pub fn assemble_a(model: &SystemModel, grid: &HarmonicGrid) -> DMatrix<f64> {
    let n = grid.n_dof;
    let m = grid.coeff_len();
    let w = grid.base_freq();
    let (mm, cc, kk) = (model.mass(), model.damping(), model.stiffness());
    let mut a = DMatrix::zeros(m, m);
    a.view_mut((0, 0), (n, n)).copy_from(kk);
    for k in 1..=grid.n_harmonics {
        let kw = k as f64 * w;
        let s = (2 * k - 1) * n;
        let c = 2 * k * n;
        for i in 0..n {
            for j in 0..n {
                let diag = kk[(i, j)] - kw * kw * mm[(i, j)];
                a[(s + i, s + j)] = diag;
                a[(c + i, c + j)] = diag;
                a[(s + i, c + j)] = -kw * cc[(i, j)];
                a[(c + i, s + j)] = kw * cc[(i, j)];
            }
        }
    }
    a
}

/// Analytic `dA/domega`.
pub fn assemble_a_domega(model: &SystemModel, grid: &HarmonicGrid) -> DMatrix<f64> {
    let n = grid.n_dof;
    let m = grid.coeff_len();
    let nu = grid.nu as f64;
    let w = grid.base_freq();
    let (mm, cc) = (model.mass(), model.damping());
    let mut a = DMatrix::zeros(m, m);
    for k in 1..=grid.n_harmonics {
        let kn = k as f64 / nu;
        let s = (2 * k - 1) * n;
        let c = 2 * k * n;
        for i in 0..n {
            for j in 0..n {
                // d/dw of K - (k w/nu)^2 M = -2 (k/nu)^2 w M
                let diag = -2.0 * kn * kn * grid.omega * mm[(i, j)];
                a[(s + i, s + j)] = diag;
                a[(c + i, c + j)] = diag;
                a[(s + i, c + j)] = -kn * cc[(i, j)];
                a[(c + i, s + j)] = kn * cc[(i, j)];
            }
        }
        let _ = w;
    }
    a
}

/// Sampled trigonometric basis on the uniform phase grid, shared by the
/// collocation operator and its pseudoinverse.
///
/// `basis` is `N x (2 N_H + 1)` with columns `[1/sqrt(2), sin(k th), cos(k th)]`
/// at phases `th_j = 2 pi j / N`; `dbasis` holds the phase derivatives
/// `[0, k cos(k th), -k sin(k th)]`, so velocity samples are
/// `(w/nu) * dbasis * z_dof`. Both are independent of `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    n_harmonics: usize,
    n_samples: usize,
    basis: DMatrix<f64>,
    dbasis: DMatrix<f64>,
}

impl Collocation {
    pub fn new(n_harmonics: usize, n_samples: usize) -> Self {
        let nc = 2 * n_harmonics + 1;
        let mut basis = DMatrix::zeros(n_samples, nc);
        let mut dbasis = DMatrix::zeros(n_samples, nc);
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        for j in 0..n_samples {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_samples as f64;
            basis[(j, 0)] = inv_sqrt2;
            for k in 1..=n_harmonics {
                let (s, c) = (k as f64 * theta).sin_cos();
                basis[(j, 2 * k - 1)] = s;
                basis[(j, 2 * k)] = c;
                dbasis[(j, 2 * k - 1)] = k as f64 * c;
                dbasis[(j, 2 * k)] = -(k as f64) * s;
            }
        }
        Self { n_harmonics, n_samples, basis, dbasis }
    }

    pub fn for_grid(grid: &HarmonicGrid) -> Self {
        Self::new(grid.n_harmonics, grid.n_samples)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_harmonics(&self) -> usize {
        self.n_harmonics
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Materialized collocation operator of shape `n N x (2 N_H + 1) n`
    /// mapping coefficients to DOF-major samples.
    pub fn gamma(&self, n_dof: usize) -> DMatrix<f64> {
        let nc = 2 * self.n_harmonics + 1;
        let mut g = DMatrix::zeros(n_dof * self.n_samples, nc * n_dof);
        for dof in 0..n_dof {
            for b in 0..nc {
                for j in 0..self.n_samples {
                    g[(dof * self.n_samples + j, b * n_dof + dof)] = self.basis[(j, b)];
                }
            }
        }
        g
    }

    /// Moore-Penrose pseudoinverse of the collocation operator. The sampled
    /// harmonics are orthogonal with squared norm `N/2` (the constant column
    /// carries `1/sqrt(2)`), so the pseudoinverse is exactly `(2/N) Gamma^T`.
    pub fn gamma_pinv(&self, n_dof: usize) -> DMatrix<f64> {
        self.gamma(n_dof).transpose() * (2.0 / self.n_samples as f64)
    }

    /// Coefficients to DOF-major displacement samples.
    pub fn inverse_transform(&self, z: &DVector<f64>, n_dof: usize) -> Result<DVector<f64>> {
        let nc = 2 * self.n_harmonics + 1;
        if z.len() != nc * n_dof {
            return Err(HbError::Dimension {
                expected: nc * n_dof,
                got: z.len(),
                context: "inverse transform",
            });
        }
        let mut samples = DVector::zeros(n_dof * self.n_samples);
        for dof in 0..n_dof {
            for b in 0..nc {
                let zc = z[b * n_dof + dof];
                if zc == 0.0 {
                    continue;
                }
                for j in 0..self.n_samples {
                    samples[dof * self.n_samples + j] += self.basis[(j, b)] * zc;
                }
            }
        }
        Ok(samples)
    }

    /// DOF-major samples to coefficients (discrete Fourier analysis).
    pub fn forward_transform(&self, samples: &DVector<f64>, n_dof: usize) -> Result<DVector<f64>> {
        let nc = 2 * self.n_harmonics + 1;
        if samples.len() != n_dof * self.n_samples {
            return Err(HbError::Dimension {
                expected: n_dof * self.n_samples,
                got: samples.len(),
                context: "forward transform",
            });
        }
        let scale = 2.0 / self.n_samples as f64;
        let mut z = DVector::zeros(nc * n_dof);
        for dof in 0..n_dof {
            for b in 0..nc {
                let mut acc = 0.0;
                for j in 0..self.n_samples {
                    acc += self.basis[(j, b)] * samples[dof * self.n_samples + j];
                }
                z[b * n_dof + dof] = acc * scale;
            }
        }
        Ok(z)
    }

    /// DOF-major velocity samples of the state `z` at base frequency
    /// `omega/nu`.
    pub fn velocity_samples(
        &self,
        z: &DVector<f64>,
        n_dof: usize,
        base_freq: f64,
    ) -> Result<DVector<f64>> {
        let nc = 2 * self.n_harmonics + 1;
        if z.len() != nc * n_dof {
            return Err(HbError::Dimension {
                expected: nc * n_dof,
                got: z.len(),
                context: "velocity samples",
            });
        }
        let mut samples = DVector::zeros(n_dof * self.n_samples);
        for dof in 0..n_dof {
            for b in 1..nc {
                let zc = z[b * n_dof + dof] * base_freq;
                if zc == 0.0 {
                    continue;
                }
                for j in 0..self.n_samples {
                    samples[dof * self.n_samples + j] += self.dbasis[(j, b)] * zc;
                }
            }
        }
        Ok(samples)
    }
}
