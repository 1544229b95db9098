//! Quadratic hedge of the spread claim with the two forwards: the 2×2
//! system `𝔸(t) φ(t) = b(t)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier::{OptionTerms, SpreadPricer};
use crate::market::{MarketSnapshot, SpreadModel};
use crate::quad::pairwise_sum;

/// Gauss–Hermite order per axis for jump integrals in `b`.
pub const JUMP_QUADRATURE_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeSystem {
    pub t: f64,
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
    pub b1: f64,
    pub b2: f64,
}

impl HedgeSystem {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * x[0] + self.a12 * x[1],
            self.a12 * x[0] + self.a22 * x[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeSolution {
    pub phi1: f64,
    pub phi2: f64,
    pub determinant: f64,
    /// 2-norm condition number of 𝔸.
    pub condition: f64,
    /// `‖𝔸φ − b‖₂`.
    pub residual: f64,
    pub system: HedgeSystem,
}

/// How the jump part of `b` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpTerm {
    /// `∫ (Ĉ(f e^{zκ}) − Ĉ(f)) f_i (e^{z_i κ_i} − 1) ℓ(dz)`, the covariation
    /// of the claim with the forward jumps.
    #[default]
    Covariation,
    /// The covariation minus `Σ_j (e^{z_j κ_j} − 1) f_j ∂Ĉ/∂f_j` inside the
    /// integral.
    Compensated,
}

/// `(κ1, κ2) = (vol1 g(T, t), vol2 h(T, t))`.
pub fn kernel_loadings(model: &SpreadModel, t: f64, maturity: f64) -> Result<[f64; 2]> {
    Ok([
        model.spots[0].effective_kernel().eval(maturity, t)?,
        model.spots[1].effective_kernel().eval(maturity, t)?,
    ])
}

/// Matrix part of the system; `b` is left at zero.
pub fn assemble_matrix(snapshot: &MarketSnapshot, model: &SpreadModel, terms: &OptionTerms) -> Result<HedgeSystem> {
    let t = snapshot.t;
    let [k1, k2] = kernel_loadings(model, t, terms.maturity)?;
    let levy = &model.levy;
    let [c1, c2] = levy.c;
    let (f1, f2) = (snapshot.f1, snapshot.f2);
    let df = (-terms.rate * t).exp();
    let j11 = levy.jump_product_moment([k1, 0.0], [k1, 0.0])?;
    let j12 = levy.jump_product_moment([k1, 0.0], [0.0, k2])?;
    let j22 = levy.jump_product_moment([0.0, k2], [0.0, k2])?;
    let sys = HedgeSystem {
        t,
        a11: df * f1 * f1 * (c1 * c1 * k1 * k1 + j11),
        a12: df * f1 * f2 * (0.5 * levy.rho * c1 * c2 * k1 * k2 + j12),
        a22: df * f2 * f2 * (c2 * c2 * k2 * k2 + j22),
        b1: 0.0,
        b2: 0.0,
    };
    for x in [sys.a11, sys.a12, sys.a22] {
        if !x.is_finite() {
            return Err(Error::Domain("hedge matrix entry is not finite".into()));
        }
    }
    Ok(sys)
}

/// Vector part `b(t)`, with `Ĉ = e^{−rt} C̃` evaluated by `pricer`.
pub fn assemble_vector(
    snapshot: &MarketSnapshot,
    model: &SpreadModel,
    terms: &OptionTerms,
    pricer: &dyn SpreadPricer,
    jump_term: JumpTerm,
) -> Result<[f64; 2]> {
    let t = snapshot.t;
    if pricer.time() != t {
        return Err(Error::invalid("pricer", "valuation time differs from the snapshot"));
    }
    let [k1, k2] = kernel_loadings(model, t, terms.maturity)?;
    let levy = &model.levy;
    let [c1, c2] = levy.c;
    let (f1, f2) = (snapshot.f1, snapshot.f2);
    let df = (-terms.rate * t).exp();
    let (price, [d1, d2]) = pricer.price_and_greeks(f1, f2)?;
    let (c_hat, d1, d2) = (df * price, df * d1, df * d2);
    let cross = 0.5 * levy.rho * c1 * c2 * k1 * k2;
    let mut b = [
        d1 * f1 * f1 * c1 * c1 * k1 * k1 + cross * d2 * f1 * f2,
        d2 * f2 * f2 * c2 * c2 * k2 * k2 + cross * d1 * f1 * f2,
    ];
    if !levy.is_brownian() {
        let nodes = significant_nodes(levy.jump_quadrature(JUMP_QUADRATURE_ORDER)?);
        let terms_per_node = nodes
            .par_iter()
            .map(|&(z, mass)| -> Result<[f64; 2]> {
                let e1 = (z[0] * k1).exp_m1();
                let e2 = (z[1] * k2).exp_m1();
                let shifted = df * pricer.price(f1 * (1.0 + e1), f2 * (1.0 + e2))?;
                let mut dc = shifted - c_hat;
                if jump_term == JumpTerm::Compensated {
                    dc -= e1 * f1 * d1 + e2 * f2 * d2;
                }
                Ok([mass * dc * f1 * e1, mass * dc * f2 * e2])
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, bi) in b.iter_mut().enumerate() {
            let xs: Vec<f64> = terms_per_node.iter().map(|v| v[i]).collect();
            *bi += pairwise_sum(&xs);
        }
    }
    if !(b[0].is_finite() && b[1].is_finite()) {
        return Err(Error::Numerical("hedge vector is not finite".into()));
    }
    Ok(b)
}

/// Drops nodes whose mass is negligible against the total.
fn significant_nodes(nodes: Vec<([f64; 2], f64)>) -> Vec<([f64; 2], f64)> {
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    nodes.into_iter().filter(|n| n.1 > 1e-16 * total).collect()
}

/// Direct 2×2 solve with one step of iterative refinement.
pub fn solve_hedge(system: &HedgeSystem) -> Result<HedgeSolution> {
    let det = system.determinant();
    let norm = (system.a11 * system.a11 + 2.0 * system.a12 * system.a12 + system.a22 * system.a22).sqrt();
    let threshold = 1e-14 * norm * norm;
    if !(det.abs() > threshold) {
        return Err(Error::SingularHedge { det, threshold });
    }
    let b = [system.b1, system.b2];
    let cramer = |r: [f64; 2]| {
        [
            (r[0] * system.a22 - system.a12 * r[1]) / det,
            (system.a11 * r[1] - system.a12 * r[0]) / det,
        ]
    };
    let mut x = cramer(b);
    let ax = system.apply(x);
    let dx = cramer([b[0] - ax[0], b[1] - ax[1]]);
    x = [x[0] + dx[0], x[1] + dx[1]];
    let ax = system.apply(x);
    let residual = (b[0] - ax[0]).hypot(b[1] - ax[1]);
    let b_norm = b[0].hypot(b[1]);
    // far out of the money b is subnormal and 1e-12·|b| flushes to zero
    if residual > 1e-12 * b_norm && residual >= f64::MIN_POSITIVE {
        return Err(Error::Numerical(format!(
            "hedge residual {residual:.3e} exceeds 1e-12 * |b| = {:.3e}",
            1e-12 * b_norm
        )));
    }
    // symmetric: eigenvalues m ± sqrt(d² + a12²)
    let m = 0.5 * (system.a11 + system.a22);
    let r = (0.5 * (system.a11 - system.a22)).hypot(system.a12);
    let condition = (m.abs() + r) / ((m.abs() - r).abs());
    Ok(HedgeSolution {
        phi1: x[0],
        phi2: x[1],
        determinant: det,
        condition,
        residual,
        system: *system,
    })
}

/// Assembles and solves the full system at the snapshot.
pub fn quadratic_hedge(
    snapshot: &MarketSnapshot,
    model: &SpreadModel,
    terms: &OptionTerms,
    pricer: &dyn SpreadPricer,
    jump_term: JumpTerm,
) -> Result<HedgeSolution> {
    let mut sys = assemble_matrix(snapshot, model, terms)?;
    // fail on a singular matrix before spending time on b
    let det = sys.determinant();
    let norm2 = sys.a11 * sys.a11 + 2.0 * sys.a12 * sys.a12 + sys.a22 * sys.a22;
    if !(det.abs() > 1e-14 * norm2) {
        return Err(Error::SingularHedge {
            det,
            threshold: 1e-14 * norm2,
        });
    }
    let [b1, b2] = assemble_vector(snapshot, model, terms, pricer, jump_term)?;
    sys.b1 = b1;
    sys.b2 = b2;
    solve_hedge(&sys)
}

/// Determinant `e^{−2rt} f1² f2² c1² c2² (1 − ¼ρ²)` for a Brownian driver
/// with unit kernels.
pub fn gaussian_det(f1: f64, f2: f64, c1: f64, c2: f64, rho: f64, r: f64, t: f64) -> f64 {
    (-2.0 * r * t).exp() * f1 * f1 * f2 * f2 * c1 * c1 * c2 * c2 * (1.0 - 0.25 * rho * rho)
}
