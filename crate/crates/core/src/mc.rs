//! Seeded Monte Carlo simulation of the driver, the Volterra processes, BNS
//! volatility, spread prices, forwards and discrete hedging errors.
//!
//! Every path draws from its own ChaCha streams keyed by `(seed, path,
//! component)`, paths run in parallel and are reduced in index order, so
//! results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::fourier::{OptionTerms, VolPathSampler, VolSample};
use crate::kernels::KernelSpec;
use crate::levy::{BivariateLevySpec, JumpSpec, LevyKind, MertonJumps};
use crate::market::{log_psi_marginal, Leg, MarketSnapshot, SpreadModel};
use crate::quad::pairwise_sum;
use crate::stats::McEstimate;

pub const DEFAULT_TRUNCATION: f64 = 1e-8;

const GAUSS: u64 = 0;
const JUMPS: u64 = 1;
const VOL1: u64 = 2;
const VOL2: u64 = 3;

/// Independent stream for one `(path, component)` pair.
pub fn path_rng(seed: u64, path: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path.wrapping_mul(4).wrapping_add(component));
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive Poisson mean").sample(rng) as u64
}

/// Lower Cholesky factor of a 2×2 positive semidefinite matrix.
fn chol2(a: f64, b: f64, c: f64) -> [[f64; 2]; 2] {
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

/// Time grid `t0 − warmup … T`, laid out backward from `T` so that grids
/// differing only in warmup share their last steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    pub t0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub warmup: f64,
}

impl SimulationGrid {
    pub fn new(t0: f64, maturity: f64, n_steps: usize, warmup: f64) -> Result<Self> {
        ensure_finite("grid.t0", t0)?;
        ensure_finite("grid.maturity", maturity)?;
        ensure_finite("grid.warmup", warmup)?;
        if n_steps == 0 {
            return Err(Error::invalid("grid.n_steps", "must be at least 1"));
        }
        if maturity <= t0 {
            return Err(Error::invalid("grid.maturity", "must exceed t0"));
        }
        if warmup < 0.0 {
            return Err(Error::invalid("grid.warmup", "must be nonnegative"));
        }
        Ok(Self {
            t0,
            maturity,
            n_steps,
            warmup,
        })
    }

    /// Warmup chosen so every active kernel's `l2_tail` is below `eps`.
    pub fn auto(model: &SpreadModel, t0: f64, maturity: f64, n_steps: usize, eps: f64) -> Result<Self> {
        let h = model
            .spots
            .iter()
            .map(|s| warmup_horizon(&s.effective_kernel(), eps))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Self::new(t0, maturity, n_steps, h)
    }

    pub fn dt(&self) -> f64 {
        (self.maturity - self.t0) / self.n_steps as f64
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup / self.dt() - 1e-9).ceil().max(0.0) as usize
    }

    pub fn total_steps(&self) -> usize {
        self.n_steps + self.warmup_steps()
    }

    /// Grid point `j`, `0 ≤ j ≤ total_steps()`.
    pub fn time(&self, j: usize) -> f64 {
        let n = self.total_steps();
        if j >= n {
            return self.maturity;
        }
        self.maturity - (n - j) as f64 * self.dt()
    }

    pub fn start(&self) -> f64 {
        self.time(0)
    }
}

/// Smallest horizon `H` with `∫_{−∞}^{T−H} g² ≤ eps`; zero for kernels that
/// are only used on finite windows.
pub fn warmup_horizon(kernel: &KernelSpec, eps: f64) -> Result<f64> {
    if !kernel.is_square_integrable() {
        return Ok(0.0);
    }
    if kernel.l2_tail(0.0, 0.0)? <= eps {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while kernel.l2_tail(0.0, hi)? > eps {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("kernel tail does not decay".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kernel.l2_tail(0.0, mid)? > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn merton_parts(levy: &BivariateLevySpec) -> Result<Option<(MertonJumps, [[f64; 2]; 2])>> {
    match &levy.jumps {
        JumpSpec::None => Ok(None),
        JumpSpec::Merton(m) => Ok(Some((*m, m.cholesky()))),
        JumpSpec::Custom(_) => Err(Error::Unsupported("simulation of custom jump measures".into())),
    }
}

fn draw_mark(m: &MertonJumps, l: &[[f64; 2]; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
    let (e1, e2) = (normal(rng), normal(rng));
    [m.mean[0] + l[0][0] * e1, m.mean[1] + l[1][0] * e1 + l[1][1] * e2]
}

/// Per-step increments `(ΔU, ΔV)` on the grid, in time order.
pub fn simulate_levy_increments(
    levy: &BivariateLevySpec,
    grid: &SimulationGrid,
    seed: u64,
    path: u64,
) -> Result<Vec<[f64; 2]>> {
    let jumps = merton_parts(levy)?;
    let n = grid.total_steps();
    let dt = grid.dt();
    let sq = dt.sqrt();
    let [c1, c2] = levy.c;
    let rho = levy.rho;
    let rho_c = (1.0 - rho * rho).sqrt();
    let mut rg = path_rng(seed, path, GAUSS);
    let mut rj = path_rng(seed, path, JUMPS);
    let mut out = vec![[0.0; 2]; n];
    for j in (0..n).rev() {
        let (e1, e2) = (normal(&mut rg), normal(&mut rg));
        let mut du = levy.gamma[0] * dt + c1 * sq * e1;
        let mut dv = levy.gamma[1] * dt + c2 * sq * (rho * e1 + rho_c * e2);
        if let Some((m, l)) = &jumps {
            for _ in 0..poisson(&mut rj, m.intensity * dt) {
                let z = draw_mark(m, l, &mut rj);
                du += z[0];
                dv += z[1];
            }
        }
        out[j] = [du, dv];
    }
    Ok(out)
}

/// Left-point Volterra sum `Σ g(t_eval, s_j) vol(s_j) ΔU_j` over the steps
/// that end by `t_eval`.
pub fn simulate_vmv(
    kernel: &KernelSpec,
    vol: Option<&[f64]>,
    increments: &[f64],
    grid: &SimulationGrid,
    t_eval: f64,
) -> Result<f64> {
    if increments.len() != grid.total_steps() {
        return Err(Error::invalid("increments", "length differs from the grid"));
    }
    if let Some(v) = vol {
        if v.len() < increments.len() {
            return Err(Error::invalid("vol", "shorter than the increments"));
        }
    }
    let tol = 1e-9 * grid.dt();
    let mut acc = 0.0;
    for (j, du) in increments.iter().enumerate() {
        if grid.time(j + 1) > t_eval + tol {
            break;
        }
        let s = grid.time(j);
        let w = vol.map_or(1.0, |v| v[j]);
        acc += kernel.eval(t_eval.max(s), s)? * w * du;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnsInit {
    Value(f64),
    Stationary,
}

/// `dσ² = −λ σ² dt + dZ`, with `Z` compound Poisson with exponential jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnsVolSpec {
    pub mean_reversion: f64,
    pub intensity: f64,
    pub jump_mean: f64,
    pub init: BnsInit,
}

impl BnsVolSpec {
    pub fn new(mean_reversion: f64, intensity: f64, jump_mean: f64, init: BnsInit) -> Result<Self> {
        ensure_finite("bns.mean_reversion", mean_reversion)?;
        ensure_finite("bns.intensity", intensity)?;
        ensure_finite("bns.jump_mean", jump_mean)?;
        if mean_reversion <= 0.0 {
            return Err(Error::invalid("bns.mean_reversion", "must be positive"));
        }
        if intensity < 0.0 {
            return Err(Error::invalid("bns.intensity", "must be nonnegative"));
        }
        if intensity > 0.0 && jump_mean <= 0.0 {
            return Err(Error::invalid("bns.jump_mean", "must be positive"));
        }
        match init {
            BnsInit::Value(v) => {
                ensure_finite("bns.initial", v)?;
                if v <= 0.0 {
                    return Err(Error::invalid("bns.initial", "must be positive"));
                }
            }
            BnsInit::Stationary if intensity == 0.0 => {
                return Err(Error::invalid("bns.initial", "stationary start needs positive jump intensity"));
            }
            BnsInit::Stationary => {}
        }
        Ok(Self {
            mean_reversion,
            intensity,
            jump_mean,
            init,
        })
    }

    pub fn stationary_mean(&self) -> f64 {
        self.intensity * self.jump_mean / self.mean_reversion
    }
}

fn bns_path(spec: &BnsVolSpec, grid: &SimulationGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = grid.total_steps();
    let dt = grid.dt();
    let lam = spec.mean_reversion;
    let mut s2 = match spec.init {
        BnsInit::Value(v) => v,
        BnsInit::Stationary => Gamma::new(spec.intensity / lam, spec.jump_mean)
            .expect("valid gamma law")
            .sample(rng),
    };
    let decay = (-lam * dt).exp();
    let jump_law = (spec.intensity > 0.0).then(|| Exp::new(1.0 / spec.jump_mean).expect("positive rate"));
    let mut out = Vec::with_capacity(n + 1);
    out.push(s2);
    for _ in 0..n {
        s2 *= decay;
        if let Some(law) = &jump_law {
            for _ in 0..poisson(rng, spec.intensity * dt) {
                let u: f64 = rng.random();
                let size: f64 = law.sample(rng);
                // jump at u·dt into the step decays over the remainder
                s2 += (-lam * (1.0 - u) * dt).exp() * size;
            }
        }
        out.push(s2);
    }
    out
}

/// σ² at every grid point, exact between grid points.
pub fn simulate_bns_vol(spec: &BnsVolSpec, grid: &SimulationGrid, seed: u64, path: u64, leg: Leg) -> Vec<f64> {
    let component = match leg {
        Leg::First => VOL1,
        Leg::Second => VOL2,
    };
    bns_path(spec, grid, &mut path_rng(seed, path, component))
}

/// Exact Gaussian moments of `(∫ g dU, ∫ h dV)` over one lag interval.
#[derive(Debug, Clone, Copy)]
struct Chunk {
    lo: f64,
    hi: f64,
    mean: [f64; 2],
    chol: [[f64; 2]; 2],
}

/// Exact sampler of kernel-weighted driver integrals over lag intervals.
struct KernelSampler {
    g: KernelSpec,
    h: KernelSpec,
    levy: BivariateLevySpec,
    jumps: Option<(MertonJumps, [[f64; 2]; 2])>,
}

impl KernelSampler {
    fn new(model: &SpreadModel) -> Result<Self> {
        Ok(Self {
            g: model.spots[0].effective_kernel(),
            h: model.spots[1].effective_kernel(),
            jumps: merton_parts(&model.levy)?,
            levy: model.levy.clone(),
        })
    }

    fn chunk(&self, lo: f64, hi: f64) -> Chunk {
        let (g, h) = (&self.g, &self.h);
        let [c1, c2] = self.levy.c;
        let gg = g.product_integral_lags(g, lo, hi);
        let gh = g.product_integral_lags(h, lo, hi);
        let hh = h.product_integral_lags(h, lo, hi);
        let one = KernelSpec::Constant { scale: 1.0 };
        Chunk {
            lo,
            hi,
            mean: [
                self.levy.gamma[0] * g.product_integral_lags(&one, lo, hi),
                self.levy.gamma[1] * h.product_integral_lags(&one, lo, hi),
            ],
            chol: chol2(c1 * c1 * gg, self.levy.rho * c1 * c2 * gh, c2 * c2 * hh),
        }
    }

    fn draw(&self, c: &Chunk, rg: &mut ChaCha8Rng, rj: &mut ChaCha8Rng) -> [f64; 2] {
        let (e1, e2) = (normal(rg), normal(rg));
        let l = &c.chol;
        let mut x = [c.mean[0] + l[0][0] * e1, c.mean[1] + l[1][0] * e1 + l[1][1] * e2];
        if let Some((m, lj)) = &self.jumps {
            let width = c.hi - c.lo;
            for _ in 0..poisson(rj, m.intensity * width) {
                let u: f64 = rj.random();
                let lag = c.lo + u * width;
                let z = draw_mark(m, lj, rj);
                x[0] += self.g.eval_lag(lag) * z[0];
                x[1] += self.h.eval_lag(lag) * z[1];
            }
        }
        x
    }
}

/// Unit-length lag chunks covering `[0, length]`.
fn unit_chunks(sampler: &KernelSampler, length: f64) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut lo = 0.0;
    while lo < length {
        let hi = (lo + 1.0).min(length);
        out.push(sampler.chunk(lo, hi));
        lo += 1.0;
    }
    out
}

fn payoff(terms: &OptionTerms, s1: f64, s2: f64) -> f64 {
    (s1 - terms.heat_rate * s2).max(0.0)
}

/// Volatility regime for pricing by simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolMode {
    Deterministic,
    /// BNS variance processes multiplying each leg's squared volatility,
    /// piecewise constant (left point) on `n_steps` steps.
    Bns { legs: [BnsVolSpec; 2], n_steps: usize },
}

/// Discounted expected payoff `e^{−r(T−t0)} E[(S1(T) − k S2(T))^+]` from
/// the state implied by the snapshot forwards.
pub fn mc_spread_price(
    model: &SpreadModel,
    terms: &OptionTerms,
    snapshot: &MarketSnapshot,
    n_paths: usize,
    seed: u64,
    vol_mode: &VolMode,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    if snapshot.maturity != terms.maturity {
        return Err(Error::invalid("snapshot.maturity", "differs from option maturity"));
    }
    let maturity = terms.maturity;
    let levels = [
        model.spots[0].seasonality.level_at(maturity),
        model.spots[1].seasonality.level_at(maturity),
    ];
    let df = terms.discount(snapshot.t);
    match vol_mode {
        VolMode::Deterministic => {
            let x0 = model.seasoned_integrals(snapshot)?;
            let sampler = KernelSampler::new(model)?;
            let chunk = sampler.chunk(0.0, maturity - snapshot.t);
            let samples: Vec<f64> = (0..n_paths as u64)
                .into_par_iter()
                .map(|p| {
                    let mut rg = path_rng(seed, p, GAUSS);
                    let mut rj = path_rng(seed, p, JUMPS);
                    let d = sampler.draw(&chunk, &mut rg, &mut rj);
                    let s1 = levels[0] * (x0[0] + d[0]).exp();
                    let s2 = levels[1] * (x0[1] + d[1]).exp();
                    df * payoff(terms, s1, s2)
                })
                .collect();
            Ok(McEstimate::from_samples(&samples, seed))
        }
        VolMode::Bns { legs, n_steps } => {
            if snapshot.t != 0.0 {
                return Err(Error::Unsupported(
                    "stochastic-volatility simulation starts at t0 = 0 only".into(),
                ));
            }
            let sampler = BnsVolSampler::new(model, legs, maturity, *n_steps)?;
            let draws = (0..n_paths as u64)
                .into_par_iter()
                .map(|p| sampler.sample(seed, p))
                .collect::<Result<Vec<_>>>()?;
            let mut x0 = [0.0; 2];
            for (i, x) in x0.iter_mut().enumerate() {
                let e: Vec<f64> = draws.iter().map(|d| d.log_psi[i].exp()).collect();
                let mean = pairwise_sum(&e) / n_paths as f64;
                *x = (snapshot.forward([Leg::First, Leg::Second][i]) / levels[i]).ln() - mean.ln();
            }
            let samples: Vec<f64> = (0..n_paths as u64)
                .into_par_iter()
                .map(|p| {
                    let x = sampler.gaussian_terminal(seed, p);
                    let s1 = levels[0] * (x0[0] + x[0]).exp();
                    let s2 = levels[1] * (x0[1] + x[1]).exp();
                    df * payoff(terms, s1, s2)
                })
                .collect();
            Ok(McEstimate::from_samples(&samples, seed))
        }
    }
}

/// Per-step kernel integrals of the effective kernels.
#[derive(Debug, Clone, Copy)]
struct StepMoments {
    g1: f64,
    h1: f64,
    gg: f64,
    gh: f64,
    hh: f64,
}

/// BNS volatility scenarios for a Gaussian driver, from `t0 = 0`.
///
/// Each path yields the conditional total variance of `ln(S1/S2)` and the
/// conditional `ln Ψ_i(0, T)`, with volatility frozen at the left point of
/// each step.
pub struct BnsVolSampler {
    levy: BivariateLevySpec,
    legs: [BnsVolSpec; 2],
    grid: SimulationGrid,
    steps: Vec<StepMoments>,
}

impl BnsVolSampler {
    pub fn new(model: &SpreadModel, legs: &[BnsVolSpec; 2], maturity: f64, n_steps: usize) -> Result<Self> {
        if model.levy.kind() != LevyKind::Gaussian {
            return Err(Error::Unsupported(
                "stochastic-volatility simulation needs a Gaussian driver".into(),
            ));
        }
        let grid = SimulationGrid::new(0.0, maturity, n_steps, 0.0)?;
        let g = model.spots[0].effective_kernel();
        let h = model.spots[1].effective_kernel();
        let one = KernelSpec::Constant { scale: 1.0 };
        let steps = (0..n_steps)
            .map(|j| {
                let lo = maturity - grid.time(j + 1);
                let hi = maturity - grid.time(j);
                StepMoments {
                    g1: g.product_integral_lags(&one, lo, hi),
                    h1: h.product_integral_lags(&one, lo, hi),
                    gg: g.product_integral_lags(&g, lo, hi),
                    gh: g.product_integral_lags(&h, lo, hi),
                    hh: h.product_integral_lags(&h, lo, hi),
                }
            })
            .collect();
        Ok(Self {
            levy: model.levy.clone(),
            legs: *legs,
            grid,
            steps,
        })
    }

    pub fn grid(&self) -> &SimulationGrid {
        &self.grid
    }

    /// Square roots of the two variance paths at the grid points.
    pub fn vol_paths(&self, seed: u64, path: u64) -> [Vec<f64>; 2] {
        let v1 = simulate_bns_vol(&self.legs[0], &self.grid, seed, path, Leg::First);
        let v2 = simulate_bns_vol(&self.legs[1], &self.grid, seed, path, Leg::Second);
        [v1.into_iter().map(f64::sqrt).collect(), v2.into_iter().map(f64::sqrt).collect()]
    }

    /// Gaussian parts `(∫ g σ dU, ∫ h η dV)` over `[0, T]` given the path's
    /// volatility.
    fn gaussian_terminal(&self, seed: u64, path: u64) -> [f64; 2] {
        let [s1, s2] = self.vol_paths(seed, path);
        let [c1, c2] = self.levy.c;
        let rho = self.levy.rho;
        let mut rg = path_rng(seed, path, GAUSS);
        let mut x = [0.0; 2];
        for (j, m) in self.steps.iter().enumerate() {
            let (a, b) = (s1[j], s2[j]);
            let l = chol2(c1 * c1 * a * a * m.gg, rho * c1 * c2 * a * b * m.gh, c2 * c2 * b * b * m.hh);
            let (e1, e2) = (normal(&mut rg), normal(&mut rg));
            x[0] += self.levy.gamma[0] * a * m.g1 + l[0][0] * e1;
            x[1] += self.levy.gamma[1] * b * m.h1 + l[1][0] * e1 + l[1][1] * e2;
        }
        x
    }
}

impl VolPathSampler for BnsVolSampler {
    fn sample(&self, seed: u64, path: u64) -> Result<VolSample> {
        let [s1, s2] = self.vol_paths(seed, path);
        let [c1, c2] = self.levy.c;
        let rho = self.levy.rho;
        let [gam1, gam2] = self.levy.gamma;
        let (mut var, mut lp1, mut lp2) = (0.0, 0.0, 0.0);
        for (j, m) in self.steps.iter().enumerate() {
            let (a, b) = (s1[j], s2[j]);
            var += c1 * c1 * a * a * m.gg - 2.0 * rho * c1 * c2 * a * b * m.gh + c2 * c2 * b * b * m.hh;
            lp1 += gam1 * a * m.g1 + 0.5 * c1 * c1 * a * a * m.gg;
            lp2 += gam2 * b * m.h1 + 0.5 * c2 * c2 * b * b * m.hh;
        }
        Ok(VolSample {
            total_var: var,
            log_psi: [lp1, lp2],
        })
    }
}

/// `E[S_i(T)]` with `X_i(T)` simulated from `−H` (`H` from
/// [`warmup_horizon`] at `DEFAULT_TRUNCATION`; zero for constant kernels),
/// so the reference value is `forward_price(−H, T, 0)`.
pub fn mc_forward(model: &SpreadModel, leg: Leg, maturity: f64, n_paths: usize, seed: u64) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    let h = warmup_horizon(&model.spot(leg).effective_kernel(), DEFAULT_TRUNCATION)?;
    let level = model.spot(leg).seasonality.level_at(maturity);
    let sampler = KernelSampler::new(model)?;
    let chunks = unit_chunks(&sampler, maturity + h);
    let i = leg.index();
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rg = path_rng(seed, p, GAUSS);
            let mut rj = path_rng(seed, p, JUMPS);
            let x: f64 = chunks.iter().map(|c| sampler.draw(c, &mut rg, &mut rj)[i]).sum();
            level * x.exp()
        })
        .collect();
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Unconditional `e^{−rT} E[(S1(T) − k S2(T))^+]` with both Volterra
/// integrals started at `−warmup`.
pub fn mc_stationary_spread_price(
    model: &SpreadModel,
    terms: &OptionTerms,
    warmup: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    let maturity = terms.maturity;
    let levels = [
        model.spots[0].seasonality.level_at(maturity),
        model.spots[1].seasonality.level_at(maturity),
    ];
    let sampler = KernelSampler::new(model)?;
    let chunks = unit_chunks(&sampler, maturity + warmup);
    let df = terms.discount(0.0);
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rg = path_rng(seed, p, GAUSS);
            let mut rj = path_rng(seed, p, JUMPS);
            let mut x = [0.0; 2];
            for c in &chunks {
                let d = sampler.draw(c, &mut rg, &mut rj);
                x[0] += d[0];
                x[1] += d[1];
            }
            df * payoff(terms, levels[0] * x[0].exp(), levels[1] * x[1].exp())
        })
        .collect();
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Exact simulation of `(f1(t_k, T), f2(t_k, T))` on an equidistant grid
/// from the snapshot time to maturity.
pub struct ForwardPathSimulator {
    sampler: KernelSampler,
    times: Vec<f64>,
    chunks: Vec<Chunk>,
    log_psi: Vec<[f64; 2]>,
    levels: [f64; 2],
    x0: [f64; 2],
    initial: [f64; 2],
}

impl ForwardPathSimulator {
    pub fn new(model: &SpreadModel, snapshot: &MarketSnapshot, n_steps: usize) -> Result<Self> {
        let grid = SimulationGrid::new(snapshot.t, snapshot.maturity, n_steps, 0.0)?;
        let maturity = snapshot.maturity;
        let sampler = KernelSampler::new(model)?;
        let times: Vec<f64> = (0..=n_steps).map(|k| grid.time(k)).collect();
        let chunks = times
            .windows(2)
            .map(|w| sampler.chunk(maturity - w[1], maturity - w[0]))
            .collect();
        let log_psi = times
            .iter()
            .map(|&t| -> Result<[f64; 2]> {
                Ok([
                    log_psi_marginal(&model.spots[0], &model.levy, Leg::First, t, maturity)?,
                    log_psi_marginal(&model.spots[1], &model.levy, Leg::Second, t, maturity)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sampler,
            times,
            chunks,
            log_psi,
            levels: [
                model.spots[0].seasonality.level_at(maturity),
                model.spots[1].seasonality.level_at(maturity),
            ],
            x0: model.seasoned_integrals(snapshot)?,
            initial: [snapshot.f1, snapshot.f2],
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Forwards at every grid time; the last entry is `(S1(T), S2(T))`.
    pub fn path(&self, seed: u64, path: u64) -> Vec<[f64; 2]> {
        let mut rg = path_rng(seed, path, GAUSS);
        let mut rj = path_rng(seed, path, JUMPS);
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.times.len());
        let fwd = |x: [f64; 2], k: usize| {
            [
                self.levels[0] * (x[0] + self.log_psi[k][0]).exp(),
                self.levels[1] * (x[1] + self.log_psi[k][1]).exp(),
            ]
        };
        out.push(self.initial);
        for (k, c) in self.chunks.iter().enumerate() {
            let d = self.sampler.draw(c, &mut rg, &mut rj);
            x[0] += d[0];
            x[1] += d[1];
            out.push(fwd(x, k + 1));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeErrorReport {
    /// `E[ε²]`.
    pub mse: McEstimate,
    /// `E[ε]`.
    pub mean_error: McEstimate,
    /// Discounted terminal portfolio value `V̂(T)`.
    pub terminal_value: McEstimate,
    /// Per-path hedging errors `ε`, in path order.
    pub errors: Vec<f64>,
}

/// Rebalancing decision `(step, t, f1, f2) ↦ (φ1, φ2)`.
pub type Strategy<'a> = dyn Fn(usize, f64, f64, f64) -> Result<[f64; 2]> + Sync + 'a;

/// Discrete self-financing hedge in the forwards, started from
/// `V(t0) = initial_value` and rebalanced on `rebalance_steps` equal steps.
/// Gains `φ(t_k)·(f(t_{k+1}) − f(t_k))` are discounted with `e^{−r t_k}`;
/// the error is `ε = V̂(T) − e^{−rT}(S1(T) − k S2(T))^+`.
#[allow(clippy::too_many_arguments)]
pub fn mc_hedge_error(
    strategy: &Strategy<'_>,
    model: &SpreadModel,
    terms: &OptionTerms,
    snapshot: &MarketSnapshot,
    initial_value: f64,
    rebalance_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<HedgeErrorReport> {
    if n_paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    let sim = ForwardPathSimulator::new(model, snapshot, rebalance_steps)?;
    let times = sim.times().to_vec();
    let r = terms.rate;
    let v0 = (-r * snapshot.t).exp() * initial_value;
    let per_path = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<[f64; 2]> {
            let fwd = sim.path(seed, p);
            let mut v = v0;
            for k in 0..rebalance_steps {
                let [f1, f2] = fwd[k];
                let phi = strategy(k, times[k], f1, f2)?;
                let disc = (-r * times[k]).exp();
                v += disc * (phi[0] * (fwd[k + 1][0] - f1) + phi[1] * (fwd[k + 1][1] - f2));
            }
            let [s1, s2] = fwd[rebalance_steps];
            let claim = (-r * terms.maturity).exp() * payoff(terms, s1, s2);
            Ok([v, v - claim])
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = per_path.iter().map(|x| x[0]).collect();
    let errors: Vec<f64> = per_path.iter().map(|x| x[1]).collect();
    let squared: Vec<f64> = errors.iter().map(|e| e * e).collect();
    Ok(HedgeErrorReport {
        mse: McEstimate::from_samples(&squared, seed),
        mean_error: McEstimate::from_samples(&errors, seed),
        terminal_value: McEstimate::from_samples(&values, seed),
        errors,
    })
}

/// One row of a path dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub path: u64,
    pub step: usize,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub sigma2: f64,
    pub x: f64,
    pub y: f64,
}

/// Driver, first-leg variance and both Volterra processes at every grid
/// point, by left-point sums. Cost is quadratic in the number of steps.
/// Agrees with [`simulate_vmv`] up to rounding of the lags.
pub fn simulate_path_records(
    model: &SpreadModel,
    grid: &SimulationGrid,
    bns: Option<&[BnsVolSpec; 2]>,
    seed: u64,
    path: u64,
) -> Result<Vec<PathRecord>> {
    let inc = simulate_levy_increments(&model.levy, grid, seed, path)?;
    let n = grid.total_steps();
    let vols: Option<[Vec<f64>; 2]> = bns.map(|legs| {
        [
            simulate_bns_vol(&legs[0], grid, seed, path, Leg::First),
            simulate_bns_vol(&legs[1], grid, seed, path, Leg::Second),
        ]
    });
    let sq: Option<[Vec<f64>; 2]> = vols
        .as_ref()
        .map(|v| [v[0].iter().map(|x| x.sqrt()).collect(), v[1].iter().map(|x| x.sqrt()).collect()]);
    let du: Vec<f64> = inc.iter().map(|d| d[0]).collect();
    let dv: Vec<f64> = inc.iter().map(|d| d[1]).collect();
    // uniform grid: the kernel weight depends only on the lag index
    let dt = grid.dt();
    let g = model.spots[0].effective_kernel();
    let h = model.spots[1].effective_kernel();
    let gl: Vec<f64> = (0..=n).map(|k| g.eval_lag(k as f64 * dt)).collect();
    let hl: Vec<f64> = (0..=n).map(|k| h.eval_lag(k as f64 * dt)).collect();
    let weight = |leg: usize, j: usize| sq.as_ref().map_or(1.0, |s| s[leg][j]);
    let mut out = Vec::with_capacity(n + 1);
    let (mut u, mut v) = (0.0, 0.0);
    for i in 0..=n {
        if i > 0 {
            u += du[i - 1];
            v += dv[i - 1];
        }
        let (mut x, mut y) = (0.0, 0.0);
        for j in 0..i {
            x += gl[i - j] * weight(0, j) * du[j];
            y += hl[i - j] * weight(1, j) * dv[j];
        }
        out.push(PathRecord {
            path,
            step: i,
            t: grid.time(i),
            u,
            v,
            sigma2: vols.as_ref().map_or(1.0, |s| s[0][i]),
            x,
            y,
        });
    }
    Ok(out)
}
