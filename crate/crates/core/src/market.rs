//! Spot models `S_i(t) = Λ_i(t) exp(X_i(t))`, forward prices and the
//! forward ⇄ seasoned-integral conversion.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::KernelSpec;
use crate::levy::{BivariateLevySpec, LevyKind};
use crate::quad::{integrate, AdaptiveOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeasonalitySpec {
    Constant {
        level: f64,
    },
    /// `level · exp(slope·t + amplitude·sin(2π(t − phase)/period))`.
    TrendSine {
        level: f64,
        slope: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

impl SeasonalitySpec {
    pub fn constant(level: f64) -> Result<Self> {
        ensure_finite("seasonality.level", level)?;
        if level <= 0.0 {
            return Err(Error::invalid("seasonality.level", "must be positive"));
        }
        Ok(SeasonalitySpec::Constant { level })
    }

    pub fn trend_sine(level: f64, slope: f64, amplitude: f64, period: f64, phase: f64) -> Result<Self> {
        Self::constant(level)?;
        ensure_finite("seasonality.slope", slope)?;
        ensure_finite("seasonality.amplitude", amplitude)?;
        ensure_finite("seasonality.phase", phase)?;
        ensure_finite("seasonality.period", period)?;
        if period <= 0.0 {
            return Err(Error::invalid("seasonality.period", "must be positive"));
        }
        Ok(SeasonalitySpec::TrendSine {
            level,
            slope,
            amplitude,
            period,
            phase,
        })
    }

    pub fn level_at(&self, t: f64) -> f64 {
        match *self {
            SeasonalitySpec::Constant { level } => level,
            SeasonalitySpec::TrendSine {
                level,
                slope,
                amplitude,
                period,
                phase,
            } => level * (slope * t + amplitude * (2.0 * PI * (t - phase) / period).sin()).exp(),
        }
    }

    /// Scales the level, leaving the shape unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        match &mut out {
            SeasonalitySpec::Constant { level } | SeasonalitySpec::TrendSine { level, .. } => *level *= factor,
        }
        out
    }
}

/// `Λ(t)`.
pub fn seasonal_level(spec: &SeasonalitySpec, t: f64) -> f64 {
    spec.level_at(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotModelSpec {
    pub seasonality: SeasonalitySpec,
    pub kernel: KernelSpec,
    pub vol: f64,
}

impl SpotModelSpec {
    pub fn new(seasonality: SeasonalitySpec, kernel: KernelSpec, vol: f64) -> Result<Self> {
        ensure_finite("vol", vol)?;
        if vol <= 0.0 {
            return Err(Error::invalid("vol", "must be positive"));
        }
        Ok(Self {
            seasonality,
            kernel,
            vol,
        })
    }

    /// Kernel with the constant volatility folded in.
    pub fn effective_kernel(&self) -> KernelSpec {
        self.kernel.scaled(self.vol)
    }
}

/// Driver plus the two spot models.
#[derive(Debug, Clone)]
pub struct SpreadModel {
    pub levy: BivariateLevySpec,
    pub spots: [SpotModelSpec; 2],
}

impl SpreadModel {
    pub fn new(levy: BivariateLevySpec, spot1: SpotModelSpec, spot2: SpotModelSpec) -> Self {
        Self {
            levy,
            spots: [spot1, spot2],
        }
    }

    pub fn spot(&self, leg: Leg) -> &SpotModelSpec {
        &self.spots[leg.index()]
    }

    pub fn forward(&self, leg: Leg, t: f64, maturity: f64, seasoned_integral: f64) -> Result<f64> {
        forward_price(self.spot(leg), &self.levy, leg, t, maturity, seasoned_integral)
    }

    pub fn seasoned_integrals(&self, snapshot: &MarketSnapshot) -> Result<[f64; 2]> {
        Ok([
            invert_forward(&self.spots[0], &self.levy, Leg::First, snapshot)?,
            invert_forward(&self.spots[1], &self.levy, Leg::Second, snapshot)?,
        ])
    }
}

/// Which leg of the spread: `First` is driven by U, `Second` by V.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    First,
    Second,
}

impl Leg {
    pub fn index(self) -> usize {
        match self {
            Leg::First => 0,
            Leg::Second => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketSnapshot {
    pub t: f64,
    pub maturity: f64,
    pub f1: f64,
    pub f2: f64,
}

impl MarketSnapshot {
    pub fn new(t: f64, maturity: f64, f1: f64, f2: f64) -> Result<Self> {
        ensure_finite("snapshot.t", t)?;
        ensure_finite("snapshot.maturity", maturity)?;
        for (field, f) in [("snapshot.f1", f1), ("snapshot.f2", f2)] {
            ensure_finite(field, f)?;
            if f <= 0.0 {
                return Err(Error::invalid(field, "forward must be positive"));
            }
        }
        if t > maturity {
            return Err(Error::invalid("snapshot.t", "valuation time after maturity"));
        }
        Ok(Self { t, maturity, f1, f2 })
    }

    pub fn forward(&self, leg: Leg) -> f64 {
        match leg {
            Leg::First => self.f1,
            Leg::Second => self.f2,
        }
    }
}

fn marginal_exponent(levy: &BivariateLevySpec, leg: Leg, x: f64) -> Result<f64> {
    let z = Complex64::new(0.0, -x);
    let psi = match leg {
        Leg::First => levy.marginal_cumulant_u(z)?,
        Leg::Second => levy.marginal_cumulant_v(z)?,
    };
    if !psi.re.is_finite() {
        return Err(Error::Domain(format!("exponential moment diverges at {x}")));
    }
    Ok(psi.re)
}

/// `∫_t^T ψ_U(−i·vol·g(T, s)) ds` (or ψ_V for the second leg).
pub fn log_psi_marginal(
    model: &SpotModelSpec,
    levy: &BivariateLevySpec,
    leg: Leg,
    t: f64,
    maturity: f64,
) -> Result<f64> {
    if t > maturity {
        return Err(Error::Domain(format!("t = {t} after maturity {maturity}")));
    }
    if t == maturity {
        return Ok(0.0);
    }
    let g = model.effective_kernel();
    let i = leg.index();
    if levy.kind() == LevyKind::Gaussian {
        let c = levy.c[i];
        return Ok(levy.gamma[i] * g.integral(t, maturity)
            + 0.5 * c * c * g.product_integral(&g, t, maturity));
    }
    let tau = maturity - t;
    let mut edges = vec![t];
    let mut inner: Vec<f64> = g
        .knots()
        .iter()
        .map(|l| maturity - l)
        .filter(|&s| s > t && s < maturity)
        .collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(maturity);
    let opts = AdaptiveOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        initial_panels: ((g.variation_rate() * tau / 10.0).ceil() as usize).max(1),
        ..Default::default()
    };
    let mut total = 0.0;
    let mut failure = None;
    for seg in edges.windows(2) {
        let r = integrate(
            |s: f64| match marginal_exponent(levy, leg, g.eval_lag(maturity - s)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            seg[0],
            seg[1],
            &opts,
        )?;
        total += r.value;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// `f(t, T) = Λ(T) · exp(seasoned) · Ψ(t, T)`, where `seasoned` stands for
/// `∫_{−∞}^t g(T, s) vol dU(s)`.
pub fn forward_price(
    model: &SpotModelSpec,
    levy: &BivariateLevySpec,
    leg: Leg,
    t: f64,
    maturity: f64,
    seasoned_integral: f64,
) -> Result<f64> {
    ensure_finite("seasoned_integral", seasoned_integral)?;
    let lp = log_psi_marginal(model, levy, leg, t, maturity)?;
    let f = model.seasonality.level_at(maturity) * (seasoned_integral + lp).exp();
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Numerical(format!("forward price {f} is not a positive finite number")));
    }
    Ok(f)
}

/// Seasoned integral implied by the snapshot's forward for `leg`.
pub fn invert_forward(
    model: &SpotModelSpec,
    levy: &BivariateLevySpec,
    leg: Leg,
    snapshot: &MarketSnapshot,
) -> Result<f64> {
    let lp = log_psi_marginal(model, levy, leg, snapshot.t, snapshot.maturity)?;
    Ok((snapshot.forward(leg) / model.seasonality.level_at(snapshot.maturity)).ln() - lp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentCheck {
    pub finite: bool,
    /// `∫_{−∞}^T g²` (vol included); infinite when the tail diverges.
    pub l2_norm: f64,
    pub diagnostic: String,
}

/// Decides whether `∫_{−∞}^T ψ(−i·vol·g(T, s)) ds` converges.
pub fn verify_exp_moment(
    model: &SpotModelSpec,
    levy: &BivariateLevySpec,
    leg: Leg,
    maturity: f64,
) -> ExpMomentCheck {
    let g = model.effective_kernel();
    if !g.is_square_integrable() {
        return ExpMomentCheck {
            finite: false,
            l2_norm: f64::INFINITY,
            diagnostic: "kernel is not square-integrable on (-inf, T]; tail integral diverges".into(),
        };
    }
    let l2 = match g.l2_tail(maturity, 0.0) {
        Ok(v) => v,
        Err(e) => {
            return ExpMomentCheck {
                finite: false,
                l2_norm: f64::NAN,
                diagnostic: e.to_string(),
            }
        }
    };
    if levy.kind() == LevyKind::Custom {
        // the largest exponent needed is sup |g|; a finite-activity custom
        // measure needs it inside the declared strip
        let sup = sup_abs(&g);
        let (lo, hi) = levy.strip();
        if !(sup <= -lo && sup <= hi) {
            return ExpMomentCheck {
                finite: false,
                l2_norm: l2,
                diagnostic: format!("exponent {sup} outside declared strip [{lo}, {hi}]"),
            };
        }
        if let Err(e) = marginal_exponent(levy, leg, sup) {
            return ExpMomentCheck {
                finite: false,
                l2_norm: l2,
                diagnostic: e.to_string(),
            };
        }
    }
    ExpMomentCheck {
        finite: true,
        l2_norm: l2,
        diagnostic: format!("square-integrable kernel, ||g||^2 = {l2:.6e}"),
    }
}

/// Supremum of `|g̃|` over lags, sampled densely on the effective support.
pub(crate) fn sup_abs(g: &KernelSpec) -> f64 {
    match g {
        KernelSpec::Constant { scale } | KernelSpec::Ou { scale, .. } => scale.abs(),
        KernelSpec::Tabulated(t) => t.values().iter().fold(0.0, |m, v| m.max(v.abs())),
        KernelSpec::Carma(_) => {
            let rate = g.variation_rate().max(1e-3);
            let horizon = 60.0 / rate;
            (0..=4000)
                .map(|k| g.eval_lag(horizon * k as f64 / 4000.0).abs())
                .fold(0.0, f64::max)
        }
    }
}
