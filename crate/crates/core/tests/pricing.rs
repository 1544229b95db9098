use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use vmv_spread::fourier::{
    greeks, margrabe_greeks, margrabe_price, margrabe_stochastic_vol, model_total_vol, payoff_transform, price_spread,
    DampingConfig, OptionTerms, QuadratureSpec, YMax,
};
use vmv_spread::kernels::KernelSpec;
use vmv_spread::levy::{BivariateLevySpec, MertonJumps};
use vmv_spread::market::{MarketSnapshot, SeasonalitySpec, SpotModelSpec, SpreadModel};
use vmv_spread::mc::{mc_spread_price, BnsInit, BnsVolSampler, BnsVolSpec, VolMode};
use vmv_spread::quad::{integrate, AdaptiveOptions};

fn spot(level: f64, kernel: KernelSpec, vol: f64) -> SpotModelSpec {
    SpotModelSpec::new(SeasonalitySpec::constant(level).unwrap(), kernel, vol).unwrap()
}

fn poisson_pmf(mean: f64, n: u32) -> f64 {
    let mut p = (-mean).exp();
    for j in 1..=n {
        p *= mean / j as f64;
    }
    p
}

/// Constant-kernel Merton model priced as a Poisson mixture of Margrabe
/// prices, conditioning on the number of jumps.
#[allow(clippy::too_many_arguments)]
fn merton_series_price(
    a: [f64; 2],
    gamma: [f64; 2],
    c: [f64; 2],
    rho: f64,
    jumps: &MertonJumps,
    f: [f64; 2],
    k: f64,
    r: f64,
    tau: f64,
) -> f64 {
    let lam = jumps.intensity * tau;
    let moments = |n: u32| {
        let n = n as f64;
        let m = [a[0] * (gamma[0] * tau + n * jumps.mean[0]), a[1] * (gamma[1] * tau + n * jumps.mean[1])];
        let v11 = a[0] * a[0] * (c[0] * c[0] * tau + n * jumps.cov[0][0]);
        let v22 = a[1] * a[1] * (c[1] * c[1] * tau + n * jumps.cov[1][1]);
        let v12 = a[0] * a[1] * (rho * c[0] * c[1] * tau + n * jumps.cov[0][1]);
        (m, v11, v12, v22)
    };
    let n_max = 80;
    let mut mean_exp = [0.0; 2];
    for n in 0..n_max {
        let (m, v11, _, v22) = moments(n);
        let p = poisson_pmf(lam, n);
        mean_exp[0] += p * (m[0] + 0.5 * v11).exp();
        mean_exp[1] += p * (m[1] + 0.5 * v22).exp();
    }
    let mut price = 0.0;
    for n in 0..n_max {
        let (m, v11, v12, v22) = moments(n);
        let f1 = f[0] * (m[0] + 0.5 * v11).exp() / mean_exp[0];
        let f2 = f[1] * (m[1] + 0.5 * v22).exp() / mean_exp[1];
        let sigma = (v11 - 2.0 * v12 + v22).max(0.0).sqrt();
        price += poisson_pmf(lam, n) * margrabe_price(f1, f2, k, sigma, r, 0.0, tau);
    }
    price
}

#[test]
fn merton_constant_kernels_match_poisson_mixture() {
    let cases = [
        (1.0, [0.05, -0.02], [[0.02, 0.005], [0.005, 0.03]], 0.3, 1.0, 0.95),
        (0.4, [-0.1, 0.0], [[0.05, 0.0], [0.0, 0.01]], -0.4, 1.1, 0.8),
        (3.0, [0.0, 0.02], [[0.01, -0.004], [-0.004, 0.02]], 0.7, 1.0, 1.2),
    ];
    for (lam, mu, cov, rho, k, tau) in cases {
        let jumps = MertonJumps::new(lam, mu, cov).unwrap();
        let gamma = [0.01, -0.02];
        let c = [0.3, 0.25];
        let a = [1.2, 0.8];
        let model = SpreadModel::new(
            BivariateLevySpec::merton(gamma, c, rho, jumps).unwrap(),
            spot(40.0, KernelSpec::constant(a[0]).unwrap(), 1.0),
            spot(35.0, KernelSpec::constant(a[1]).unwrap(), 1.0),
        );
        let terms = OptionTerms::new(tau, k, 0.03).unwrap();
        let f = [42.0, 38.0];
        let snap = MarketSnapshot::new(0.0, tau, f[0], f[1]).unwrap();
        let fourier = price_spread(&snap, &model, &terms, &DampingConfig::default(), &QuadratureSpec::default()).unwrap();
        let series = merton_series_price(a, gamma, c, rho, &jumps, f, k, 0.03, tau);
        assert_relative_eq!(fourier, series, max_relative = 1e-8);
    }
}

#[test]
fn damping_invariance_with_jumps_and_carma() {
    let jumps = MertonJumps::new(1.5, [0.05, -0.02], [[0.02, 0.005], [0.005, 0.03]]).unwrap();
    let model = SpreadModel::new(
        BivariateLevySpec::merton([0.0, 0.0], [0.3, 0.25], 0.3, jumps).unwrap(),
        spot(30.0, KernelSpec::ou(1.0, 1.0).unwrap(), 1.0),
        spot(25.0, KernelSpec::carma(vec![2.0, 1.5], vec![0.4]).unwrap(), 1.0),
    );
    let terms = OptionTerms::new(0.75, 1.1, 0.02).unwrap();
    let snap = MarketSnapshot::new(0.25, 0.75, 30.0, 27.0).unwrap();
    let base = price_spread(&snap, &model, &terms, &DampingConfig::new(1.5).unwrap(), &QuadratureSpec::default()).unwrap();
    for c in [1.25, 2.0, 3.0] {
        let p = price_spread(&snap, &model, &terms, &DampingConfig::new(c).unwrap(), &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(p, base, max_relative = 1e-7);
    }
}

#[test]
fn parseval_identity_for_normal_variable() {
    let n01 = Normal::new(0.0, 1.0).unwrap();
    for (c, a, mu, s) in [(1.5, 1.0, 0.0, 0.2), (2.0, 1.3, 0.1, 0.4), (3.0, 0.7, -0.2, 0.3)] {
        let opts = AdaptiveOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..AdaptiveOptions::default()
        };
        // ψ_Z(y) = exp(iμy − ½s²y²), integrand Hermitian so fold onto y ≥ 0
        let lhs = integrate(
            |y: f64| {
                let phi = num_complex::Complex64::new(-0.5 * s * s * y * y, mu * y).exp();
                (payoff_transform(c, a, y).unwrap() * phi).re
            },
            0.0,
            12.0 / s,
            &opts,
        )
        .unwrap()
        .value
            / std::f64::consts::PI;
        // E[e^{(1−c)Z} 1{Z > ln A}] − A E[e^{−cZ} 1{Z > ln A}] in closed form
        let partial = |b: f64| (b * mu + 0.5 * b * b * s * s).exp() * n01.cdf((mu + b * s * s - a.ln()) / s);
        let rhs = partial(1.0 - c) - a * partial(-c);
        assert!((lhs - rhs).abs() < 1e-8, "c={c}: {lhs} vs {rhs}");
    }
}

#[test]
fn band_and_monotonicity_on_grid() {
    let jumps = MertonJumps::new(1.0, [0.0, 0.05], [[0.03, 0.0], [0.0, 0.02]]).unwrap();
    let model = SpreadModel::new(
        BivariateLevySpec::merton([0.0, 0.0], [0.25, 0.2], 0.4, jumps).unwrap(),
        spot(20.0, KernelSpec::ou(1.0, 0.8).unwrap(), 1.0),
        spot(20.0, KernelSpec::ou(1.0, 1.5).unwrap(), 1.0),
    );
    let quad = QuadratureSpec::default();
    let price = |k: f64, f1: f64, f2: f64| {
        let terms = OptionTerms::new(1.0, k, 0.05).unwrap();
        price_spread(&MarketSnapshot::new(0.0, 1.0, f1, f2).unwrap(), &model, &terms, &DampingConfig::default(), &quad)
            .unwrap()
    };
    let df = (-0.05f64).exp();
    let grid: Vec<f64> = (0..6).map(|i| 10.0 + 4.0 * i as f64).collect();
    for &f1 in &grid {
        let mut prev = f64::INFINITY;
        for &f2 in &grid {
            let p = price(1.0, f1, f2);
            assert!(p >= df * (f1 - f2).max(0.0) && p <= df * f1);
            assert!(p <= prev);
            prev = p;
            assert!(price(1.2, f1, f2) <= p);
        }
    }
}

#[test]
fn greeks_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..8 {
        let jumps = MertonJumps::new(
            rng.random_range(0.0..2.0),
            [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            [[0.02, 0.004], [0.004, 0.03]],
        )
        .unwrap();
        let model = SpreadModel::new(
            BivariateLevySpec::merton([0.0, 0.0], [rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)], rng.random_range(-0.8..0.8), jumps)
                .unwrap(),
            spot(30.0, KernelSpec::ou(1.0, rng.random_range(0.3..2.0)).unwrap(), 1.0),
            spot(25.0, KernelSpec::ou(1.0, rng.random_range(0.3..2.0)).unwrap(), 1.0),
        );
        let terms = OptionTerms::new(1.0, rng.random_range(0.8..1.2), 0.02).unwrap();
        let (f1, f2) = (rng.random_range(25.0..35.0), rng.random_range(22.0..32.0));
        let damping = DampingConfig::default();
        let quad = QuadratureSpec::new(1e-13, 1e-13, YMax::Auto, 20000).unwrap();
        let p = |a: f64, b: f64| price_spread(&MarketSnapshot::new(0.0, 1.0, a, b).unwrap(), &model, &terms, &damping, &quad).unwrap();
        let g = greeks(&MarketSnapshot::new(0.0, 1.0, f1, f2).unwrap(), &model, &terms, &damping, &quad).unwrap();
        let (h1, h2) = (1e-4 * f1, 1e-4 * f2);
        let fd1 = (p(f1 + h1, f2) - p(f1 - h1, f2)) / (2.0 * h1);
        let fd2 = (p(f1, f2 + h2) - p(f1, f2 - h2)) / (2.0 * h2);
        assert_relative_eq!(g[0], fd1, max_relative = 1e-6);
        assert_relative_eq!(g[1], fd2, max_relative = 1e-6);
    }
}

#[test]
fn margrabe_delta_is_discounted_normal_cdf() {
    let model = SpreadModel::new(
        BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], 0.5).unwrap(),
        spot(30.0, KernelSpec::constant(0.35).unwrap(), 1.0),
        spot(25.0, KernelSpec::constant(0.25).unwrap(), 1.0),
    );
    let terms = OptionTerms::new(1.5, 1.05, 0.04).unwrap();
    let snap = MarketSnapshot::new(0.5, 1.5, 31.0, 28.0).unwrap();
    let g = greeks(&snap, &model, &terms, &DampingConfig::default(), &QuadratureSpec::default()).unwrap();
    let sigma = model_total_vol(&model, 0.5, 1.5);
    let exact = margrabe_greeks(31.0, 28.0, 1.05, sigma, 0.04, 0.5, 1.5);
    assert!((g[0] - exact[0]).abs() < 1e-8);
    assert!((g[1] - exact[1]).abs() < 1e-8);
}

fn bns_model() -> SpreadModel {
    SpreadModel::new(
        BivariateLevySpec::gaussian([0.0, 0.0], [1.0, 1.0], 0.4).unwrap(),
        spot(30.0, KernelSpec::ou(1.0, 1.0).unwrap(), 0.4),
        spot(25.0, KernelSpec::ou(1.0, 0.5).unwrap(), 0.3),
    )
}

#[test]
fn bns_without_jumps_matches_ode_volatility() {
    // σ²(s) = σ²(0) e^{−λs}: Σ² = ∫ c1²σ²(s)g² − 2ρ… ds with the decaying factors
    let model = bns_model();
    let legs = [
        BnsVolSpec::new(0.8, 0.0, 0.0, BnsInit::Value(1.2)).unwrap(),
        BnsVolSpec::new(0.3, 0.0, 0.0, BnsInit::Value(0.9)).unwrap(),
    ];
    let maturity = 1.0;
    let exact_var = {
        let opts = AdaptiveOptions::default();
        integrate(
            |s: f64| {
                let a = (1.2 * (-0.8 * s).exp()).sqrt() * 0.4 * (-(maturity - s)).exp();
                let b = (0.9 * (-0.3 * s).exp()).sqrt() * 0.3 * (-0.5 * (maturity - s)).exp();
                a * a - 2.0 * 0.4 * a * b + b * b
            },
            0.0,
            maturity,
            &opts,
        )
        .unwrap()
        .value
    };
    let exact = margrabe_price(30.0, 28.0, 1.0, exact_var.sqrt(), 0.01, 0.0, maturity);
    let mut errs = Vec::new();
    for steps in [50, 200, 800] {
        let sampler = BnsVolSampler::new(&model, &legs, maturity, steps).unwrap();
        let est = margrabe_stochastic_vol(30.0, 28.0, 1.0, 0.01, 0.0, maturity, &sampler, 4, 1).unwrap();
        assert_eq!(est.std_err, 0.0);
        errs.push((est.mean - exact).abs());
    }
    // left-point volatility gives first-order convergence
    assert!(errs[0] < 2e-3 * exact);
    assert!(errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0);
}

#[test]
fn bns_mixture_agrees_with_full_simulation() {
    let model = bns_model();
    let legs = [
        BnsVolSpec::new(1.5, 2.0, 0.4, BnsInit::Stationary).unwrap(),
        BnsVolSpec::new(1.0, 1.0, 0.6, BnsInit::Stationary).unwrap(),
    ];
    let terms = OptionTerms::new(1.0, 1.0, 0.01).unwrap();
    let snap = MarketSnapshot::new(0.0, 1.0, 30.0, 28.0).unwrap();
    let steps = 50;
    let sampler = BnsVolSampler::new(&model, &legs, 1.0, steps).unwrap();
    let mixture = margrabe_stochastic_vol(30.0, 28.0, 1.0, 0.01, 0.0, 1.0, &sampler, 40_000, 5).unwrap();
    let full = mc_spread_price(&model, &terms, &snap, 40_000, 6, &VolMode::Bns { legs, n_steps: steps }).unwrap();
    let se = (mixture.std_err.powi(2) + full.std_err.powi(2)).sqrt();
    assert!((mixture.mean - full.mean).abs() < 3.5 * se, "{mixture:?} vs {full:?}");
}
