//! Spread option `(S1(T) − k S2(T))^+` priced from the two forwards by a
//! damped Fourier integral, its forward deltas, and the Margrabe closed form
//! for Gaussian drivers.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::KernelSpec;
use crate::levy::{BivariateLevySpec, JumpSpec, LevyKind};
use crate::market::{sup_abs, Leg, MarketSnapshot, SpreadModel};
use crate::quad::{integrate, pairwise_sum, AdaptiveOptions, QuadValue};
use crate::stats::McEstimate;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionTerms {
    pub maturity: f64,
    pub heat_rate: f64,
    pub rate: f64,
}

impl OptionTerms {
    pub fn new(maturity: f64, heat_rate: f64, rate: f64) -> Result<Self> {
        ensure_finite("option.maturity", maturity)?;
        ensure_finite("option.heat_rate", heat_rate)?;
        ensure_finite("option.rate", rate)?;
        if heat_rate <= 0.0 {
            return Err(Error::invalid("option.heat_rate", "must be positive"));
        }
        if rate < 0.0 {
            return Err(Error::invalid("option.rate", "must be nonnegative"));
        }
        Ok(Self {
            maturity,
            heat_rate,
            rate,
        })
    }

    /// `e^{−r(T − t)}`.
    pub fn discount(&self, t: f64) -> f64 {
        (-self.rate * (self.maturity - t)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingConfig {
    pub c: f64,
}

impl DampingConfig {
    pub fn new(c: f64) -> Result<Self> {
        ensure_finite("damping.c", c)?;
        if c <= 1.0 {
            return Err(Error::invalid("damping.c", format!("must exceed 1, got {c}")));
        }
        Ok(Self { c })
    }
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self { c: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YMax {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    /// Absolute tolerance in price units.
    pub abs_tol: f64,
    pub y_max: YMax,
    pub max_subdivisions: usize,
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, abs_tol: f64, y_max: YMax, max_subdivisions: usize) -> Result<Self> {
        for (field, x) in [("quadrature.rel_tol", rel_tol), ("quadrature.abs_tol", abs_tol)] {
            ensure_finite(field, x)?;
            if x <= 0.0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if let YMax::Fixed(y) = y_max {
            ensure_finite("quadrature.y_max", y)?;
            if y <= 0.0 {
                return Err(Error::invalid("quadrature.y_max", "must be positive"));
            }
        }
        if max_subdivisions == 0 {
            return Err(Error::invalid("quadrature.max_subdivisions", "must be positive"));
        }
        Ok(Self {
            rel_tol,
            abs_tol,
            y_max,
            max_subdivisions,
        })
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            y_max: YMax::Auto,
            max_subdivisions: 20_000,
        }
    }
}

/// Fourier transform `A^{1−c−iy} / ((c+iy)(c+iy−1))` of the damped payoff
/// `e^{−cx}(e^x − A)^+`.
pub fn payoff_transform(c: f64, a: f64, y: f64) -> Result<Complex64> {
    if !(c > 1.0) {
        return Err(Error::invalid("damping.c", format!("must exceed 1, got {c}")));
    }
    if !(a > 0.0) {
        return Err(Error::invalid("A", "must be positive"));
    }
    let u = Complex64::new(c, y);
    Ok(((1.0 - u) * a.ln()).exp() / (u * (u - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceResult {
    pub price: f64,
    /// Quadrature error estimate plus truncation tail, in price units.
    pub abs_err: f64,
    pub y_max: f64,
    pub evaluations: usize,
}

/// Kernel integrals over `[t, T]` of the effective (vol-scaled) kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    g1: f64,
    h1: f64,
    gg: f64,
    gh: f64,
    hh: f64,
}

/// Pricing context for one valuation time and maturity.
#[derive(Debug, Clone)]
pub struct FourierPricer {
    levy: BivariateLevySpec,
    terms: OptionTerms,
    c: f64,
    quad: QuadratureSpec,
    t: f64,
    tau: f64,
    levels: [f64; 2],
    ln_a: f64,
    log_psi: [f64; 2],
    moments: Moments,
    /// `(weight, g(T, s), h(T, s))` on the s-rule, for jump parts.
    nodes: Vec<[f64; 3]>,
    discount: f64,
}

impl FourierPricer {
    pub fn new(
        model: &SpreadModel,
        terms: &OptionTerms,
        damping: &DampingConfig,
        quad: &QuadratureSpec,
        t: f64,
    ) -> Result<Self> {
        DampingConfig::new(damping.c)?;
        ensure_finite("t", t)?;
        let maturity = terms.maturity;
        if t > maturity {
            return Err(Error::Domain(format!("valuation time {t} after maturity {maturity}")));
        }
        let levy = model.levy.clone();
        let g = model.spots[0].effective_kernel();
        let h = model.spots[1].effective_kernel();
        let c = damping.c;
        if levy.kind() == LevyKind::Custom {
            let (gs, hs) = (sup_abs(&g), sup_abs(&h));
            let lo = -(c * gs).max((c - 1.0) * hs);
            let hi = (c * gs).max((c - 1.0) * hs);
            if !levy.analyticity_check(lo, hi) {
                return Err(Error::Domain(format!(
                    "damping c = {c} needs the cumulant on the strip [{lo}, {hi}]"
                )));
            }
        }
        let levels = [
            model.spots[0].seasonality.level_at(maturity),
            model.spots[1].seasonality.level_at(maturity),
        ];
        let log_psi = [
            crate::market::log_psi_marginal(&model.spots[0], &levy, Leg::First, t, maturity)?,
            crate::market::log_psi_marginal(&model.spots[1], &levy, Leg::Second, t, maturity)?,
        ];
        let moments = Moments {
            g1: g.integral(t, maturity),
            h1: h.integral(t, maturity),
            gg: g.product_integral(&g, t, maturity),
            gh: g.product_integral(&h, t, maturity),
            hh: h.product_integral(&h, t, maturity),
        };
        let nodes = if levy.is_brownian() || t == maturity {
            Vec::new()
        } else {
            let rule = g.s_rule(Some(&h), t, maturity);
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&s, &w)| [w, g.eval_lag(maturity - s), h.eval_lag(maturity - s)])
                .collect()
        };
        Ok(Self {
            levy,
            terms: *terms,
            c,
            quad: *quad,
            t,
            tau: maturity - t,
            levels,
            ln_a: (terms.heat_rate * levels[1] / levels[0]).ln(),
            log_psi,
            moments,
            nodes,
            discount: terms.discount(t),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn terms(&self) -> &OptionTerms {
        &self.terms
    }

    pub fn damping(&self) -> f64 {
        self.c
    }

    /// `ln Ψ_{c,t,T}(y) = ∫_t^T ψ((y − ic) g, ((c − 1)i − y) h) ds`.
    pub fn log_psi_c(&self, y: f64) -> Result<Complex64> {
        let c = self.c;
        let z1 = Complex64::new(y, -c);
        let z2 = Complex64::new(-y, c - 1.0);
        if let JumpSpec::Custom(_) = self.levy.jumps {
            let mut acc = Complex64::new(0.0, 0.0);
            for &[w, g, h] in &self.nodes {
                acc += w * self.levy.cumulant(z1 * g, z2 * h)?;
            }
            return Ok(acc);
        }
        let m = &self.moments;
        let [c1, c2] = self.levy.c;
        let rho = self.levy.rho;
        let mut acc = I * (z1 * self.levy.gamma[0] * m.g1 + z2 * self.levy.gamma[1] * m.h1)
            - 0.5 * (c1 * c1 * m.gg * z1 * z1 + 2.0 * rho * c1 * c2 * m.gh * z1 * z2 + c2 * c2 * m.hh * z2 * z2);
        if let JumpSpec::Merton(j) = &self.levy.jumps {
            for &[w, g, h] in &self.nodes {
                acc += w * j.cumulant(z1 * g, z2 * h);
            }
        }
        Ok(acc)
    }

    /// `ln(f_i / Λ_i(T)) − ln Ψ_i(t, T)`.
    fn states(&self, f1: f64, f2: f64) -> [f64; 2] {
        [
            (f1 / self.levels[0]).ln() - self.log_psi[0],
            (f2 / self.levels[1]).ln() - self.log_psi[1],
        ]
    }

    fn integrand_at(&self, y: f64, x: [f64; 2]) -> Result<Complex64> {
        let u = Complex64::new(self.c, y);
        let expo = (1.0 - u) * (self.ln_a + x[1]) + u * x[0] + self.log_psi_c(y)?;
        Ok(expo.exp() / (u * (u - 1.0)))
    }

    /// Integrand `F(y)` whose real part over `[0, ∞)`, times
    /// `e^{−r(T−t)} Λ1(T)/π`, is the price.
    pub fn integrand(&self, y: f64, f1: f64, f2: f64) -> Result<Complex64> {
        self.integrand_at(y, self.states(f1, f2))
    }

    fn prefactor(&self) -> f64 {
        self.discount * self.levels[0] / PI
    }

    fn intrinsic(&self, f1: f64, f2: f64) -> f64 {
        self.discount * (f1 - self.terms.heat_rate * f2).max(0.0)
    }

    fn check_forwards(f1: f64, f2: f64) -> Result<()> {
        if !(f1 > 0.0 && f1.is_finite() && f2 > 0.0 && f2.is_finite()) {
            return Err(Error::invalid("forwards", format!("must be positive and finite, got ({f1}, {f2})")));
        }
        Ok(())
    }

    fn truncation(&self, x: [f64; 2]) -> Result<(f64, f64)> {
        let pre = self.prefactor();
        let target = 0.01 * self.quad.abs_tol;
        let tail = |y: f64| -> Result<f64> { Ok(pre * self.integrand_at(y, x)?.norm() * y) };
        match self.quad.y_max {
            YMax::Fixed(y) => Ok((y, tail(y)?)),
            YMax::Auto => {
                let cap = 1e6;
                let mut y = 1.0;
                loop {
                    let here = tail(y)?;
                    if (here < target && tail(2.0 * y)? < target) || y >= cap {
                        return Ok((y, here));
                    }
                    y *= 2.0;
                }
            }
        }
    }

    fn run<V: QuadValue>(&self, f1: f64, f2: f64, eval: impl Fn(Complex64, Complex64) -> V) -> Result<(V, PriceResult)> {
        let x = self.states(f1, f2);
        let (y_max, tail) = self.truncation(x)?;
        let pre = self.prefactor();
        let omega = (x[0] - x[1] - self.ln_a).abs() + 1.0;
        let cap = (self.quad.max_subdivisions / 4).max(8);
        let opts = AdaptiveOptions {
            abs_tol: self.quad.abs_tol / pre,
            rel_tol: self.quad.rel_tol,
            max_subdivisions: self.quad.max_subdivisions,
            initial_panels: ((y_max * omega / PI).ceil() as usize).clamp(8, cap),
        };
        let mut failure = None;
        let integral = integrate(
            |y: f64| match self.integrand_at(y, x) {
                Ok(f) => eval(f, Complex64::new(self.c, y)),
                Err(e) => {
                    failure.get_or_insert(e);
                    V::zero()
                }
            },
            0.0,
            y_max,
            &opts,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        let price = pre * integral.value.component(0);
        let abs_err = pre * integral.abs_err + tail;
        if !price.is_finite() {
            return Err(Error::Numerical(format!("non-finite price {price}")));
        }
        Ok((
            integral.value,
            PriceResult {
                price,
                abs_err,
                y_max,
                evaluations: integral.evaluations,
            },
        ))
    }

    fn band(&self, f1: f64, f2: f64, mut r: PriceResult) -> Result<PriceResult> {
        let lower = self.intrinsic(f1, f2);
        let upper = self.discount * f1;
        let tol = self.quad.abs_tol + r.abs_err;
        if r.price < lower {
            if lower - r.price > tol {
                return Err(Error::ArbitrageBand { price: r.price, lower, upper });
            }
            r.price = lower;
        } else if r.price > upper {
            if r.price - upper > tol {
                return Err(Error::ArbitrageBand { price: r.price, lower, upper });
            }
            r.price = upper;
        }
        Ok(r)
    }

    pub fn price_detailed(&self, f1: f64, f2: f64) -> Result<PriceResult> {
        Self::check_forwards(f1, f2)?;
        if self.tau == 0.0 {
            return Ok(PriceResult {
                price: self.intrinsic(f1, f2),
                abs_err: 0.0,
                y_max: 0.0,
                evaluations: 0,
            });
        }
        let (_, r) = self.run(f1, f2, |f, _| f.re)?;
        self.band(f1, f2, r)
    }

    /// Price with `(∂C̃/∂f1, ∂C̃/∂f2)`.
    pub fn price_and_greeks_detailed(&self, f1: f64, f2: f64) -> Result<(PriceResult, [f64; 2])> {
        Self::check_forwards(f1, f2)?;
        if self.tau == 0.0 {
            let itm = if f1 > self.terms.heat_rate * f2 { 1.0 } else { 0.0 };
            let r = PriceResult {
                price: self.intrinsic(f1, f2),
                abs_err: 0.0,
                y_max: 0.0,
                evaluations: 0,
            };
            return Ok((r, [itm, -self.terms.heat_rate * itm]));
        }
        let (v, r) = self.run(f1, f2, |f, u| [f.re, (f * u).re / f1, (f * (1.0 - u)).re / f2])?;
        let pre = self.prefactor();
        let r = self.band(f1, f2, r)?;
        Ok((r, [pre * v[1], pre * v[2]]))
    }
}

/// Price (and deltas) of the spread claim at a fixed valuation time.
pub trait SpreadPricer: Sync {
    fn time(&self) -> f64;
    fn price(&self, f1: f64, f2: f64) -> Result<f64>;
    fn price_and_greeks(&self, f1: f64, f2: f64) -> Result<(f64, [f64; 2])>;
}

impl SpreadPricer for FourierPricer {
    fn time(&self) -> f64 {
        self.t
    }

    fn price(&self, f1: f64, f2: f64) -> Result<f64> {
        Ok(self.price_detailed(f1, f2)?.price)
    }

    fn price_and_greeks(&self, f1: f64, f2: f64) -> Result<(f64, [f64; 2])> {
        let (r, g) = self.price_and_greeks_detailed(f1, f2)?;
        Ok((r.price, g))
    }
}

/// Margrabe closed form for Gaussian drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MargrabePricer {
    pub t: f64,
    pub terms: OptionTerms,
    pub sigma: f64,
}

impl MargrabePricer {
    pub fn new(model: &SpreadModel, terms: &OptionTerms, t: f64) -> Result<Self> {
        if !model.levy.is_brownian() {
            return Err(Error::Unsupported("Margrabe pricing needs a Gaussian driver".into()));
        }
        Ok(Self {
            t,
            terms: *terms,
            sigma: model_total_vol(model, t, terms.maturity),
        })
    }
}

impl SpreadPricer for MargrabePricer {
    fn time(&self) -> f64 {
        self.t
    }

    fn price(&self, f1: f64, f2: f64) -> Result<f64> {
        Ok(margrabe_price(f1, f2, self.terms.heat_rate, self.sigma, self.terms.rate, self.t, self.terms.maturity))
    }

    fn price_and_greeks(&self, f1: f64, f2: f64) -> Result<(f64, [f64; 2])> {
        let p = self.price(f1, f2)?;
        let g = margrabe_greeks(f1, f2, self.terms.heat_rate, self.sigma, self.terms.rate, self.t, self.terms.maturity);
        Ok((p, g))
    }
}

fn check_snapshot(snapshot: &MarketSnapshot, terms: &OptionTerms) -> Result<()> {
    if snapshot.maturity != terms.maturity {
        return Err(Error::invalid(
            "snapshot.maturity",
            format!("{} differs from option maturity {}", snapshot.maturity, terms.maturity),
        ));
    }
    Ok(())
}

/// `Ψ_{c,t,T}(y)`.
pub fn psi_factor(model: &SpreadModel, c: f64, t: f64, maturity: f64, y: f64) -> Result<Complex64> {
    let terms = OptionTerms::new(maturity, 1.0, 0.0)?;
    let pricer = FourierPricer::new(model, &terms, &DampingConfig::new(c)?, &QuadratureSpec::default(), t)?;
    Ok(pricer.log_psi_c(y)?.exp())
}

pub fn price_spread_detailed(
    snapshot: &MarketSnapshot,
    model: &SpreadModel,
    terms: &OptionTerms,
    damping: &DampingConfig,
    quad: &QuadratureSpec,
) -> Result<PriceResult> {
    check_snapshot(snapshot, terms)?;
    FourierPricer::new(model, terms, damping, quad, snapshot.t)?.price_detailed(snapshot.f1, snapshot.f2)
}

pub fn price_spread(
    snapshot: &MarketSnapshot,
    model: &SpreadModel,
    terms: &OptionTerms,
    damping: &DampingConfig,
    quad: &QuadratureSpec,
) -> Result<f64> {
    Ok(price_spread_detailed(snapshot, model, terms, damping, quad)?.price)
}

/// `(∂C̃/∂f1, ∂C̃/∂f2)`.
pub fn greeks(
    snapshot: &MarketSnapshot,
    model: &SpreadModel,
    terms: &OptionTerms,
    damping: &DampingConfig,
    quad: &QuadratureSpec,
) -> Result<[f64; 2]> {
    check_snapshot(snapshot, terms)?;
    let pricer = FourierPricer::new(model, terms, damping, quad, snapshot.t)?;
    Ok(pricer.price_and_greeks_detailed(snapshot.f1, snapshot.f2)?.1)
}

/// `Σ(t, T) = sqrt(∫_t^T g² − 2ρ g h + h² ds)`.
pub fn total_vol(kernel1: &KernelSpec, kernel2: &KernelSpec, rho: f64, t: f64, maturity: f64) -> f64 {
    let v = kernel1.product_integral(kernel1, t, maturity) - 2.0 * rho * kernel1.product_integral(kernel2, t, maturity)
        + kernel2.product_integral(kernel2, t, maturity);
    v.max(0.0).sqrt()
}

/// Total volatility of `ln(S1/S2)` with the Brownian scales and spot vols
/// folded into the kernels.
pub fn model_total_vol(model: &SpreadModel, t: f64, maturity: f64) -> f64 {
    let [c1, c2] = model.levy.c;
    let g = model.spots[0].effective_kernel().scaled(c1);
    let h = model.spots[1].effective_kernel().scaled(c2);
    total_vol(&g, &h, model.levy.rho, t, maturity)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `(d1, d2)`.
pub fn margrabe_d(f1: f64, f2: f64, k: f64, sigma: f64) -> (f64, f64) {
    let d2 = ((f1 / f2).ln() - k.ln() - 0.5 * sigma * sigma) / sigma;
    (d2 + sigma, d2)
}

pub fn margrabe_price(f1: f64, f2: f64, k: f64, sigma: f64, r: f64, t: f64, maturity: f64) -> f64 {
    let df = (-r * (maturity - t)).exp();
    if sigma <= 0.0 {
        return df * (f1 - k * f2).max(0.0);
    }
    let n = std_normal();
    let (d1, d2) = margrabe_d(f1, f2, k, sigma);
    df * (f1 * n.cdf(d1) - k * f2 * n.cdf(d2))
}

/// `(e^{−r(T−t)} N(d1), −e^{−r(T−t)} k N(d2))`.
pub fn margrabe_greeks(f1: f64, f2: f64, k: f64, sigma: f64, r: f64, t: f64, maturity: f64) -> [f64; 2] {
    let df = (-r * (maturity - t)).exp();
    if sigma <= 0.0 {
        let itm = if f1 > k * f2 { 1.0 } else { 0.0 };
        return [df * itm, -df * k * itm];
    }
    let n = std_normal();
    let (d1, d2) = margrabe_d(f1, f2, k, sigma);
    [df * n.cdf(d1), -df * k * n.cdf(d2)]
}

/// One draw of the volatility paths: the conditional total variance of
/// `ln(S1/S2)` and the conditional `ln Ψ_i(t, T)` of each leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolSample {
    pub total_var: f64,
    pub log_psi: [f64; 2],
}

pub trait VolPathSampler: Sync {
    fn sample(&self, seed: u64, path: u64) -> Result<VolSample>;
}

/// Sampler returning the same volatility scenario on every path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicVol(pub VolSample);

impl VolPathSampler for DeterministicVol {
    fn sample(&self, _seed: u64, _path: u64) -> Result<VolSample> {
        Ok(self.0)
    }
}

/// Margrabe price averaged over volatility scenarios.
///
/// Conditionally on the volatility paths the log-spots are Gaussian with
/// forwards `f_i e^{ln Ψ_i} / E[e^{ln Ψ_i}]`; the expectation in the
/// denominator is the sample mean over all paths.
#[allow(clippy::too_many_arguments)]
pub fn margrabe_stochastic_vol(
    f1: f64,
    f2: f64,
    k: f64,
    r: f64,
    t: f64,
    maturity: f64,
    sampler: &dyn VolPathSampler,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    let draws = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| sampler.sample(seed, p))
        .collect::<Result<Vec<_>>>()?;
    // None when the leg's Ψ is the same on every path, so the ratio is 1
    let mut scale: [Option<f64>; 2] = [None; 2];
    for (i, s) in scale.iter_mut().enumerate() {
        let first = draws[0].log_psi[i];
        if draws.iter().any(|d| d.log_psi[i] != first) {
            let e: Vec<f64> = draws.iter().map(|d| d.log_psi[i].exp()).collect();
            *s = Some(n_paths as f64 / pairwise_sum(&e));
        }
    }
    let ratio = |i: usize, d: &VolSample| scale[i].map_or(1.0, |s| d.log_psi[i].exp() * s);
    let prices: Vec<f64> = draws
        .par_iter()
        .map(|d| {
            let sigma = d.total_var.max(0.0).sqrt();
            margrabe_price(f1 * ratio(0, d), f2 * ratio(1, d), k, sigma, r, t, maturity)
        })
        .collect();
    Ok(McEstimate::from_samples(&prices, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::MertonJumps;
    use crate::market::{SeasonalitySpec, SpotModelSpec};
    use approx::assert_relative_eq;

    fn spot(level: f64, kernel: KernelSpec, vol: f64) -> SpotModelSpec {
        SpotModelSpec::new(SeasonalitySpec::constant(level).unwrap(), kernel, vol).unwrap()
    }

    fn gaussian_model(rho: f64) -> SpreadModel {
        SpreadModel::new(
            BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], rho).unwrap(),
            spot(30.0, KernelSpec::ou(1.0, 1.2).unwrap(), 0.4),
            spot(25.0, KernelSpec::ou(1.0, 0.6).unwrap(), 0.3),
        )
    }

    fn merton_model() -> SpreadModel {
        let j = MertonJumps::new(1.5, [0.05, -0.02], [[0.02, 0.005], [0.005, 0.03]]).unwrap();
        SpreadModel::new(
            BivariateLevySpec::merton([0.0, 0.0], [0.3, 0.25], 0.3, j).unwrap(),
            spot(30.0, KernelSpec::ou(1.0, 1.0).unwrap(), 1.0),
            spot(25.0, KernelSpec::carma(vec![2.0, 1.5], vec![0.4]).unwrap(), 1.0),
        )
    }

    #[test]
    fn payoff_transform_examples() {
        assert_relative_eq!(payoff_transform(2.0, 1.0, 0.0).unwrap().re, 0.5, max_relative = 1e-15);
        assert_relative_eq!(payoff_transform(1.5, 1.0, 0.0).unwrap().re, 4.0 / 3.0, max_relative = 1e-15);
        let a = payoff_transform(2.0, 1.2, 0.7).unwrap();
        let b = payoff_transform(2.0, 1.2, -0.7).unwrap();
        assert_relative_eq!(a.re, b.re, max_relative = 1e-15);
        assert_relative_eq!(a.im, -b.im, max_relative = 1e-15);
        assert!(payoff_transform(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn payoff_transform_matches_defining_integral() {
        let (c, a, y) = (2.0, 1.2f64, 0.7);
        let opts = AdaptiveOptions {
            initial_panels: 64,
            ..Default::default()
        };
        let f = |x: f64| {
            let w = (-c * x).exp() * (x.exp() - a);
            [w * (x * y).cos(), -w * (x * y).sin()]
        };
        let r = integrate(f, a.ln(), 40.0, &opts).unwrap().value;
        let got = payoff_transform(c, a, y).unwrap();
        assert!((got.re - r[0]).abs() < 1e-8);
        assert!((got.im - r[1]).abs() < 1e-8);
    }

    #[test]
    fn psi_factor_at_maturity_is_one() {
        let m = merton_model();
        let p = psi_factor(&m, 1.5, 2.0, 2.0, 3.0).unwrap();
        assert_eq!(p, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn psi_factor_gaussian_constant_kernels_closed_form() {
        let (s1, s2, rho, tau) = (0.3, 0.2, 0.4, 1.5);
        let m = SpreadModel::new(
            BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], rho).unwrap(),
            spot(1.0, KernelSpec::constant(s1).unwrap(), 1.0),
            spot(1.0, KernelSpec::constant(s2).unwrap(), 1.0),
        );
        for y in [0.0, 0.8, -2.5, 7.0] {
            let c = 1.7;
            let z1 = Complex64::new(y, -c);
            let z2 = Complex64::new(-y, c - 1.0);
            let expected = (-0.5 * tau * (s1 * s1 * z1 * z1 + 2.0 * rho * s1 * s2 * z1 * z2 + s2 * s2 * z2 * z2)).exp();
            let got = psi_factor(&m, c, 0.0, tau, y).unwrap();
            assert!((got - expected).norm() <= 1e-10 * expected.norm());
        }
    }

    #[test]
    fn psi_factor_real_for_symmetric_perfectly_correlated_model() {
        // ρ → 1 limit is excluded by the driver, so use ρ close to 1
        let m = SpreadModel::new(
            BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], 0.999_999).unwrap(),
            spot(1.0, KernelSpec::ou(0.5, 1.0).unwrap(), 1.0),
            spot(1.0, KernelSpec::ou(0.5, 1.0).unwrap(), 1.0),
        );
        let p = psi_factor(&m, 2.0, 0.0, 1.0, 0.0).unwrap();
        assert!(p.im.abs() < 1e-12);
    }

    #[test]
    fn margrabe_examples() {
        let n = std_normal();
        let p = margrabe_price(1.0, 1.0, 1.0, 0.2, 0.0, 0.0, 1.0);
        assert_relative_eq!(p, 2.0 * n.cdf(0.1) - 1.0, max_relative = 1e-14);
        assert!((p - 0.079_655_7).abs() < 1e-7);
        assert_eq!(margrabe_price(2.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0), 1.0);
        // exchange symmetry: C(f1, f2) − C(f2, f1) = f1 − f2 for k = 1
        for (a, b) in [(1.3, 1.3), (2.0, 1.5), (0.7, 1.9)] {
            let lhs = margrabe_price(a, b, 1.0, 0.35, 0.0, 0.0, 1.0) - margrabe_price(b, a, 1.0, 0.35, 0.0, 0.0, 1.0);
            assert_relative_eq!(lhs, a - b, epsilon = 1e-14);
        }
        assert_eq!(
            margrabe_price(1.3, 1.3, 1.0, 0.35, 0.0, 0.0, 1.0),
            margrabe_price(1.3, 1.3, 1.0, 0.35, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn total_vol_examples() {
        let g = KernelSpec::constant(0.3).unwrap();
        let h = KernelSpec::constant(0.2).unwrap();
        assert_relative_eq!(total_vol(&g, &h, 0.5, 0.0, 1.0), 0.07f64.sqrt(), max_relative = 1e-14);
        let ou = KernelSpec::ou(1.0, 2.0).unwrap();
        assert!(total_vol(&ou, &ou, 1.0, 0.0, 1.0) < 1e-12);
        let a = total_vol(&g, &ou, 0.0, 0.0, 1.0);
        let b = g.product_integral(&g, 0.0, 1.0) + ou.product_integral(&ou, 0.0, 1.0);
        assert_relative_eq!(a * a, b, max_relative = 1e-14);
    }

    #[test]
    fn fourier_matches_margrabe() {
        for rho in [-0.5, 0.0, 0.9] {
            let m = gaussian_model(rho);
            let terms = OptionTerms::new(1.0, 1.1, 0.03).unwrap();
            let snap = MarketSnapshot::new(0.0, 1.0, 31.0, 26.0).unwrap();
            let p = price_spread(&snap, &m, &terms, &DampingConfig::default(), &QuadratureSpec::default()).unwrap();
            let sigma = model_total_vol(&m, 0.0, 1.0);
            let q = margrabe_price(31.0, 26.0, 1.1, sigma, 0.03, 0.0, 1.0);
            assert_relative_eq!(p, q, max_relative = 1e-8);
        }
    }

    #[test]
    fn tiny_heat_rate_gives_discounted_forward() {
        let m = merton_model();
        let terms = OptionTerms::new(1.0, 1e-12, 0.05).unwrap();
        let snap = MarketSnapshot::new(0.0, 1.0, 30.0, 20.0).unwrap();
        // A^{1−c} ≈ 1e6 amplifies roundoff, so ask for what the target needs
        let q = QuadratureSpec {
            rel_tol: 5e-9,
            ..Default::default()
        };
        let p = price_spread(&snap, &m, &terms, &DampingConfig::default(), &q).unwrap();
        assert_relative_eq!(p, (-0.05f64).exp() * 30.0, max_relative = 1e-8);
        let g = greeks(&snap, &m, &terms, &DampingConfig::default(), &q).unwrap();
        assert_relative_eq!(g[0], (-0.05f64).exp(), max_relative = 1e-7);
        assert!(g[1].abs() < 1e-7);
    }

    #[test]
    fn deep_in_the_money_near_lower_bound() {
        let m = SpreadModel::new(
            BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], 0.0).unwrap(),
            spot(100.0, KernelSpec::ou(1.0, 1.0).unwrap(), 0.05),
            spot(1.0, KernelSpec::ou(1.0, 1.0).unwrap(), 0.05),
        );
        let terms = OptionTerms::new(1.0, 1.0, 0.02).unwrap();
        let snap = MarketSnapshot::new(0.0, 1.0, 100.0, 1.0).unwrap();
        let p = price_spread(&snap, &m, &terms, &DampingConfig::default(), &QuadratureSpec::default()).unwrap();
        let df = (-0.02f64).exp();
        assert!(p >= df * 99.0 && p <= df * 100.0);
        assert!(p - df * 99.0 < 1e-6);
    }

    #[test]
    fn at_maturity_price_is_intrinsic() {
        let m = merton_model();
        let terms = OptionTerms::new(1.0, 1.0, 0.02).unwrap();
        let pr = FourierPricer::new(&m, &terms, &DampingConfig::default(), &QuadratureSpec::default(), 1.0).unwrap();
        assert_eq!(pr.price(30.0, 25.0).unwrap(), 5.0);
        assert_eq!(pr.price(20.0, 25.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(DampingConfig::new(0.9).is_err());
        assert!(OptionTerms::new(1.0, -1.0, 0.0).is_err());
        let m = gaussian_model(0.0);
        let terms = OptionTerms::new(1.0, 1.0, 0.0).unwrap();
        let snap = MarketSnapshot::new(0.0, 2.0, 1.0, 1.0).unwrap();
        assert!(price_spread(&snap, &m, &terms, &DampingConfig::default(), &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn stochastic_vol_deterministic_sampler() {
        let s = DeterministicVol(VolSample {
            total_var: 0.09,
            log_psi: [0.02, 0.01],
        });
        let e = margrabe_stochastic_vol(30.0, 25.0, 1.1, 0.01, 0.0, 1.0, &s, 37, 5).unwrap();
        let q = margrabe_price(30.0, 25.0, 1.1, 0.3, 0.01, 0.0, 1.0);
        assert_eq!(e.mean, q);
        assert_eq!(e.std_err, 0.0);
    }
}
