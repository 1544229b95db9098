//! Bivariate Lévy driver `L = (U, V)` and its cumulant function.
//!
//! The cumulant is written in the untruncated form
//!
//! ```text
//! ψ(z1, z2) = i z1 γ1 + i z2 γ2 − ½(c1² z1² + 2ρ c1 c2 z1 z2 + c2² z2²) + κ_J(z1, z2)
//! ```
//!
//! where `γ` is the full drift and `κ_J` the jump part. For the built-in
//! Merton family (compound Poisson with bivariate normal marks)
//! `κ_J(z) = λ (exp(i z·μ − ½ zᵀ Σ z) − 1)`, which is entire, so every complex
//! argument is admissible.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::quad::gauss_hermite;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Caller-supplied non-Gaussian part of a bivariate Lévy driver.
///
/// Implementations provide the jump part of the cumulant on a declared strip
/// of imaginary parts, and the exponential jump moments used by the hedging
/// system. Nothing is extracted numerically from the cumulant.
pub trait CustomJumps: Send + Sync {
    /// Jump part `κ_J(z1, z2)` of the cumulant.
    fn cumulant(&self, z1: Complex64, z2: Complex64) -> Complex64;

    /// Closed interval of imaginary parts on which `cumulant` is finite,
    /// applying to both coordinates.
    fn strip(&self) -> (f64, f64);

    /// `∫ (e^{u·z} − 1)(e^{v·z} − 1) ℓ(dz)`, or `None` when divergent.
    fn jump_product_moment(&self, u: [f64; 2], v: [f64; 2]) -> Option<f64>;

    /// Discrete approximation `(z, mass)` of the Lévy measure, used for
    /// integrals of non-polynomial functionals against `ℓ`.
    fn jump_nodes(&self) -> Option<Vec<([f64; 2], f64)>> {
        None
    }
}

/// Compound Poisson jumps with bivariate normal marks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonJumps {
    pub intensity: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl MertonJumps {
    pub fn new(intensity: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        ensure_finite("jumps.intensity", intensity)?;
        if intensity < 0.0 {
            return Err(Error::invalid("jumps.intensity", "must be nonnegative"));
        }
        for m in mean {
            ensure_finite("jumps.mean", m)?;
        }
        for row in cov {
            for x in row {
                ensure_finite("jumps.cov", x)?;
            }
        }
        let scale = cov[0][0].abs().max(cov[1][1].abs()).max(1.0);
        if (cov[0][1] - cov[1][0]).abs() > 1e-12 * scale {
            return Err(Error::invalid("jumps.cov", "must be symmetric"));
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if cov[0][0] < 0.0 || cov[1][1] < 0.0 || det < -1e-14 * scale * scale {
            return Err(Error::invalid("jumps.cov", "must be positive semidefinite"));
        }
        Ok(Self {
            intensity,
            mean,
            cov,
        })
    }

    /// Real moment generating function `E[exp(w·Z)]` of one mark.
    pub fn mgf(&self, w: [f64; 2]) -> f64 {
        let quad = w[0] * w[0] * self.cov[0][0]
            + 2.0 * w[0] * w[1] * self.cov[0][1]
            + w[1] * w[1] * self.cov[1][1];
        (w[0] * self.mean[0] + w[1] * self.mean[1] + 0.5 * quad).exp()
    }

    /// Jump part `λ(E[e^{i z·Z}] − 1)` of the cumulant.
    pub fn cumulant(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        let quad = z1 * z1 * self.cov[0][0]
            + 2.0 * z1 * z2 * self.cov[0][1]
            + z2 * z2 * self.cov[1][1];
        let expo = I * (z1 * self.mean[0] + z2 * self.mean[1]) - 0.5 * quad;
        self.intensity * (expo.exp() - 1.0)
    }

    /// Lower-triangular factor of the mark covariance; tolerates singular
    /// (including zero) covariance.
    pub fn cholesky(&self) -> [[f64; 2]; 2] {
        let l11 = self.cov[0][0].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov[0][1] / l11 } else { 0.0 };
        let l22 = (self.cov[1][1] - l21 * l21).max(0.0).sqrt();
        [[l11, 0.0], [l21, l22]]
    }
}

#[derive(Clone)]
pub enum JumpSpec {
    None,
    Merton(MertonJumps),
    Custom(Arc<dyn CustomJumps>),
}

impl fmt::Debug for JumpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpSpec::None => f.write_str("None"),
            JumpSpec::Merton(m) => f.debug_tuple("Merton").field(m).finish(),
            JumpSpec::Custom(c) => write!(f, "Custom(strip = {:?})", c.strip()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevyKind {
    Gaussian,
    Merton,
    Custom,
}

/// The driving bivariate Lévy process.
#[derive(Debug, Clone)]
pub struct BivariateLevySpec {
    pub gamma: [f64; 2],
    pub c: [f64; 2],
    pub rho: f64,
    pub jumps: JumpSpec,
}

impl BivariateLevySpec {
    pub fn gaussian(gamma: [f64; 2], c: [f64; 2], rho: f64) -> Result<Self> {
        Self::new(gamma, c, rho, JumpSpec::None)
    }

    pub fn merton(gamma: [f64; 2], c: [f64; 2], rho: f64, jumps: MertonJumps) -> Result<Self> {
        Self::new(gamma, c, rho, JumpSpec::Merton(jumps))
    }

    pub fn custom(
        gamma: [f64; 2],
        c: [f64; 2],
        rho: f64,
        jumps: Arc<dyn CustomJumps>,
    ) -> Result<Self> {
        let (lo, hi) = jumps.strip();
        if !(lo <= 0.0 && hi >= 0.0) {
            return Err(Error::invalid("jumps.strip", "strip must contain the real axis"));
        }
        Self::new(gamma, c, rho, JumpSpec::Custom(jumps))
    }

    fn new(gamma: [f64; 2], c: [f64; 2], rho: f64, jumps: JumpSpec) -> Result<Self> {
        for g in gamma {
            ensure_finite("gamma", g)?;
        }
        for ci in c {
            ensure_finite("c", ci)?;
            if ci < 0.0 {
                return Err(Error::invalid("c", "Brownian scales must be nonnegative"));
            }
        }
        ensure_finite("rho", rho)?;
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::invalid("rho", format!("must lie in (-1, 1), got {rho}")));
        }
        Ok(Self {
            gamma,
            c,
            rho,
            jumps,
        })
    }

    pub fn kind(&self) -> LevyKind {
        match self.jumps {
            JumpSpec::None => LevyKind::Gaussian,
            JumpSpec::Merton(_) => LevyKind::Merton,
            JumpSpec::Custom(_) => LevyKind::Custom,
        }
    }

    /// True when the driver has no jump component with positive mass.
    pub fn is_brownian(&self) -> bool {
        match &self.jumps {
            JumpSpec::None => true,
            JumpSpec::Merton(m) => m.intensity == 0.0,
            JumpSpec::Custom(_) => false,
        }
    }

    /// Imaginary-part strip on which the cumulant is finite.
    pub fn strip(&self) -> (f64, f64) {
        match &self.jumps {
            JumpSpec::Custom(c) => c.strip(),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// `ψ(z1, z2) = ln E[exp(i z1 U(1) + i z2 V(1))]` continued to complex
    /// arguments.
    pub fn cumulant(&self, z1: Complex64, z2: Complex64) -> Result<Complex64> {
        let gauss = self.gaussian_part(z1, z2);
        let jump = match &self.jumps {
            JumpSpec::None => Complex64::new(0.0, 0.0),
            JumpSpec::Merton(m) => m.cumulant(z1, z2),
            JumpSpec::Custom(c) => {
                let (lo, hi) = c.strip();
                for z in [z1, z2] {
                    if z.im < lo || z.im > hi {
                        return Err(Error::Domain(format!(
                            "cumulant argument {z} outside declared strip [{lo}, {hi}]"
                        )));
                    }
                }
                c.cumulant(z1, z2)
            }
        };
        Ok(gauss + jump)
    }

    fn gaussian_part(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        let [c1, c2] = self.c;
        I * (z1 * self.gamma[0] + z2 * self.gamma[1])
            - 0.5 * (c1 * c1 * z1 * z1 + 2.0 * self.rho * c1 * c2 * z1 * z2 + c2 * c2 * z2 * z2)
    }

    /// `ψ_U(z) = ψ(z, 0)`.
    pub fn marginal_cumulant_u(&self, z: Complex64) -> Result<Complex64> {
        self.cumulant(z, Complex64::new(0.0, 0.0))
    }

    /// `ψ_V(z) = ψ(0, z)`.
    pub fn marginal_cumulant_v(&self, z: Complex64) -> Result<Complex64> {
        self.cumulant(Complex64::new(0.0, 0.0), z)
    }

    /// `∫ (e^{u·z} − 1)(e^{v·z} − 1) ℓ(dz)`.
    pub fn jump_product_moment(&self, u: [f64; 2], v: [f64; 2]) -> Result<f64> {
        match &self.jumps {
            JumpSpec::None => Ok(0.0),
            JumpSpec::Merton(m) => {
                let uv = [u[0] + v[0], u[1] + v[1]];
                Ok(m.intensity * (m.mgf(uv) - m.mgf(u) - m.mgf(v) + 1.0))
            }
            JumpSpec::Custom(c) => c.jump_product_moment(u, v).ok_or_else(|| {
                Error::Domain(format!("divergent jump moment at u = {u:?}, v = {v:?}"))
            }),
        }
    }

    /// `∫ (e^{a z1} − 1)(e^{b z2} − 1) ℓ(dz1, dz2)`.
    pub fn exp_jump_moment(&self, a: f64, b: f64) -> Result<f64> {
        self.jump_product_moment([a, 0.0], [0.0, b])
    }

    /// True iff ψ is finite for imaginary parts in `[imag_lo, imag_hi]` on
    /// both coordinates.
    pub fn analyticity_check(&self, imag_lo: f64, imag_hi: f64) -> bool {
        let (lo, hi) = self.strip();
        imag_lo >= lo && imag_hi <= hi
    }

    /// Weighted nodes `(z, mass)` approximating the Lévy measure.
    ///
    /// Merton marks use a tensor Gauss–Hermite rule of `order²` nodes mapped
    /// through the Cholesky factor of the mark covariance; total mass is the
    /// jump intensity.
    pub fn jump_quadrature(&self, order: usize) -> Result<Vec<([f64; 2], f64)>> {
        match &self.jumps {
            JumpSpec::None => Ok(Vec::new()),
            JumpSpec::Merton(m) if m.intensity == 0.0 => Ok(Vec::new()),
            JumpSpec::Merton(m) => {
                let rule = gauss_hermite(order);
                let l = m.cholesky();
                let sqrt2 = std::f64::consts::SQRT_2;
                let norm = m.intensity / std::f64::consts::PI;
                let mut out = Vec::with_capacity(order * order);
                for (x1, w1) in rule.nodes.iter().zip(&rule.weights) {
                    for (x2, w2) in rule.nodes.iter().zip(&rule.weights) {
                        let e1 = sqrt2 * x1;
                        let e2 = sqrt2 * x2;
                        let z = [
                            m.mean[0] + l[0][0] * e1,
                            m.mean[1] + l[1][0] * e1 + l[1][1] * e2,
                        ];
                        out.push((z, norm * w1 * w2));
                    }
                }
                Ok(out)
            }
            JumpSpec::Custom(c) => c.jump_nodes().ok_or_else(|| {
                Error::Unsupported("custom jump measure does not provide quadrature nodes".into())
            }),
        }
    }
}
