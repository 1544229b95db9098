//! Command implementations. Each returns the full CSV document.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;
use vmv_spread::fourier::{
    margrabe_price, margrabe_stochastic_vol, model_total_vol, DampingConfig, FourierPricer, QuadratureSpec,
    SpreadPricer, YMax,
};
use vmv_spread::hedging::{quadratic_hedge, JumpTerm};
use vmv_spread::market::{forward_price, invert_forward, log_psi_marginal, Leg};
use vmv_spread::mc::{
    mc_spread_price, simulate_path_records, BnsVolSampler, ForwardPathSimulator, SimulationGrid, VolMode,
    DEFAULT_TRUNCATION,
};
use vmv_spread::stats::McEstimate;
use vmv_spread::Error;

use crate::scenario::{Scenario, ScenarioError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Paths written by `--dump-paths`.
pub const MAX_DUMPED_PATHS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Forward,
    Hedge,
    Simulate,
    Validate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub dump_paths: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ScenarioError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerics(Error),
    #[error("{0}")]
    Singular(Error),
    #[error("validation failed: {0} check(s) out of tolerance")]
    Validation(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Numerics(_) => 2,
            CliError::Singular(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::SingularHedge { .. } => CliError::Singular(e),
            Error::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            Error::Io(s) => CliError::Io(s),
            e => CliError::Numerics(e),
        }
    }
}

/// Output of a successful command; `failures` counts failed validation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub failures: usize,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(s: &Scenario, seed: u64) -> String {
    format!("# vmv-spread {VERSION} scenario_sha256={} seed={seed}\n", s.sha256)
}

pub fn run(command: Command, scenario: &Scenario, opts: &RunOptions) -> Result<Report, CliError> {
    let paths = opts.paths.unwrap_or(scenario.mc.paths);
    if paths == 0 {
        return Err(CliError::Usage("--paths must be positive".into()));
    }
    let seed = opts.seed.unwrap_or(scenario.mc.seed);
    let mut out = header(scenario, seed);
    let mut failures = 0;
    match command {
        Command::Price => price(scenario, paths, seed, &mut out)?,
        Command::Forward => forward(scenario, &mut out)?,
        Command::Hedge => hedge(scenario, &mut out)?,
        Command::Simulate => simulate(scenario, paths, seed, opts.dump_paths.as_ref(), &mut out)?,
        Command::Validate => failures = validate(scenario, paths, seed, &mut out)?,
    }
    Ok(Report { csv: out, failures })
}

fn pricer(s: &Scenario, quad: &QuadratureSpec, damping: &DampingConfig) -> Result<FourierPricer, Error> {
    FourierPricer::new(&s.model, &s.terms, damping, quad, s.snapshot.t)
}

fn price(s: &Scenario, paths: usize, seed: u64, out: &mut String) -> Result<(), CliError> {
    let (price, abs_err) = match s.bns {
        None => {
            let r = pricer(s, &s.quadrature, &s.damping)?.price_detailed(s.snapshot.f1, s.snapshot.f2)?;
            (r.price, r.abs_err)
        }
        Some(legs) => {
            // conditional Margrabe mixture; the error column is the standard error
            let sampler = BnsVolSampler::new(&s.model, &legs, s.terms.maturity, s.mc.vol_steps)?;
            let (snap, tm) = (&s.snapshot, &s.terms);
            if snap.t != 0.0 {
                return Err(Error::Unsupported("stochastic-volatility pricing starts at t = 0 only".into()).into());
            }
            let e = margrabe_stochastic_vol(snap.f1, snap.f2, tm.heat_rate, tm.rate, 0.0, tm.maturity, &sampler, paths, seed)?;
            (e.mean, e.std_err)
        }
    };
    out.push_str("t,T,k,c,price,abs_err_est\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        num(s.snapshot.t),
        num(s.terms.maturity),
        num(s.terms.heat_rate),
        num(s.damping.c),
        num(price),
        num(abs_err)
    );
    Ok(())
}

fn deterministic_only(s: &Scenario, what: &str) -> Result<(), CliError> {
    if s.bns.is_some() {
        return Err(Error::Unsupported(format!("{what} under stochastic volatility")).into());
    }
    Ok(())
}

fn forward(s: &Scenario, out: &mut String) -> Result<(), CliError> {
    deterministic_only(s, "forward decomposition")?;
    out.push_str("leg,t,T,level_T,log_psi,seasoned_integral,forward\n");
    let (t, maturity) = (s.snapshot.t, s.terms.maturity);
    for leg in [Leg::First, Leg::Second] {
        let spot = s.model.spot(leg);
        let lp = log_psi_marginal(spot, &s.model.levy, leg, t, maturity)?;
        let seasoned = invert_forward(spot, &s.model.levy, leg, &s.snapshot)?;
        let f = forward_price(spot, &s.model.levy, leg, t, maturity, seasoned)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            leg.index() + 1,
            num(t),
            num(maturity),
            num(spot.seasonality.level_at(maturity)),
            num(lp),
            num(seasoned),
            num(f)
        );
    }
    Ok(())
}

fn hedge(s: &Scenario, out: &mut String) -> Result<(), CliError> {
    deterministic_only(s, "quadratic hedging")?;
    let p = pricer(s, &s.quadrature, &s.damping)?;
    let sol = quadratic_hedge(&s.snapshot, &s.model, &s.terms, &p, JumpTerm::default())?;
    out.push_str("t,phi1,phi2,det,cond,residual\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        num(s.snapshot.t),
        num(sol.phi1),
        num(sol.phi2),
        num(sol.determinant),
        num(sol.condition),
        num(sol.residual)
    );
    Ok(())
}

fn vol_mode(s: &Scenario) -> VolMode {
    match s.bns {
        Some(legs) => VolMode::Bns {
            legs,
            n_steps: s.mc.vol_steps,
        },
        None => VolMode::Deterministic,
    }
}

fn estimate_row(out: &mut String, name: &str, e: &McEstimate) {
    let _ = writeln!(out, "{name},{},{},{},{}", num(e.mean), num(e.std_err), e.n_paths, e.seed);
}

fn simulate(
    s: &Scenario,
    paths: usize,
    seed: u64,
    dump: Option<&PathBuf>,
    out: &mut String,
) -> Result<(), CliError> {
    out.push_str("quantity,mean,std_err,n_paths,seed\n");
    let price = mc_spread_price(&s.model, &s.terms, &s.snapshot, paths, seed, &vol_mode(s))?;
    estimate_row(out, "spread_price", &price);
    if s.bns.is_none() {
        // E[S_i(T)] from the snapshot state; equals f_i up to noise
        let sim = ForwardPathSimulator::new(&s.model, &s.snapshot, 1)?;
        let terminal: Vec<[f64; 2]> = {
            use rayon::prelude::*;
            (0..paths as u64).into_par_iter().map(|p| sim.path(seed, p)[1]).collect()
        };
        for i in 0..2 {
            let xs: Vec<f64> = terminal.iter().map(|x| x[i]).collect();
            estimate_row(out, &format!("spot{}_terminal", i + 1), &McEstimate::from_samples(&xs, seed));
        }
    }
    if let Some(path) = dump {
        write_path_dump(s, paths, seed, path)?;
    }
    Ok(())
}

fn write_path_dump(s: &Scenario, paths: usize, seed: u64, path: &PathBuf) -> Result<(), CliError> {
    let grid = SimulationGrid::auto(&s.model, s.snapshot.t, s.terms.maturity, s.mc.dump_steps, DEFAULT_TRUNCATION)?;
    let mut text = header(s, seed);
    text.push_str("path,step,t,U,V,sigma2,X,Y\n");
    for p in 0..paths.min(MAX_DUMPED_PATHS) as u64 {
        for r in simulate_path_records(&s.model, &grid, s.bns.as_ref(), seed, p)? {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                r.path,
                r.step,
                num(r.t),
                num(r.u),
                num(r.v),
                num(r.sigma2),
                num(r.x),
                num(r.y)
            );
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

struct Check {
    name: String,
    value: f64,
    reference: f64,
    error: f64,
    tolerance: f64,
    /// `None` marks a check that does not apply to the scenario.
    pass: Option<bool>,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, reference: f64, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference,
            error,
            tolerance,
            pass: Some(error <= tolerance),
        }
    }

    fn skipped(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            reference: f64::NAN,
            error: f64::NAN,
            tolerance: f64::NAN,
            pass: None,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Fourier, Margrabe and simulation cross-checks; returns the number of
/// failed rows.
fn validate(s: &Scenario, paths: usize, seed: u64, out: &mut String) -> Result<usize, CliError> {
    let (f1, f2) = (s.snapshot.f1, s.snapshot.f2);
    let (t, maturity, k, r) = (s.snapshot.t, s.terms.maturity, s.terms.heat_rate, s.terms.rate);
    let mut checks = Vec::new();
    match s.bns {
        None => {
            let base = pricer(s, &s.quadrature, &s.damping)?.price_detailed(f1, f2)?;
            let df = s.terms.discount(t);
            let (lower, upper) = (df * (f1 - k * f2).max(0.0), df * f1);
            let violation = (lower - base.price).max(base.price - upper).max(0.0);
            checks.push(Check::new("arbitrage_band", base.price, lower, violation, s.quadrature.abs_tol));

            if s.model.levy.is_brownian() {
                let m = margrabe_price(f1, f2, k, model_total_vol(&s.model, t, maturity), r, t, maturity);
                checks.push(Check::new("fourier_vs_margrabe", base.price, m, rel(base.price, m), 1e-6));
            } else {
                checks.push(Check::skipped("fourier_vs_margrabe"));
            }

            for c in [1.25, 1.5, 2.0, 3.0] {
                let p = pricer(s, &s.quadrature, &DampingConfig::new(c)?)?.price(f1, f2)?;
                checks.push(Check::new(format!("damping_c={c}"), p, base.price, rel(p, base.price), 1e-7));
            }

            let tight = QuadratureSpec::new(1e-12, 1e-12, YMax::Auto, s.quadrature.max_subdivisions.max(20_000))?;
            let fine = pricer(s, &tight, &s.damping)?;
            let (_, greeks) = fine.price_and_greeks(f1, f2)?;
            for (i, g) in greeks.iter().enumerate() {
                let h = 1e-4 * [f1, f2][i];
                let bump = |d: f64| {
                    let (a, b) = if i == 0 { (f1 + d, f2) } else { (f1, f2 + d) };
                    fine.price(a, b)
                };
                let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
                checks.push(Check::new(format!("greek_f{}_vs_fd", i + 1), *g, fd, rel(*g, fd), 1e-6));
            }

            match mc_spread_price(&s.model, &s.terms, &s.snapshot, paths, seed, &VolMode::Deterministic) {
                Ok(e) => checks.push(Check::new("fourier_vs_mc_z", base.price, e.mean, e.z_score(base.price), 3.5)),
                Err(Error::Unsupported(_)) => checks.push(Check::skipped("fourier_vs_mc_z")),
                Err(e) => return Err(e.into()),
            }

            match quadratic_hedge(&s.snapshot, &s.model, &s.terms, &fine, JumpTerm::default()) {
                Ok(sol) => {
                    let nb = sol.system.b1.hypot(sol.system.b2);
                    checks.push(Check::new("hedge_residual", sol.residual, 0.0, sol.residual / nb.max(f64::MIN_POSITIVE), 1e-12));
                }
                Err(Error::SingularHedge { .. }) => checks.push(Check::skipped("hedge_residual")),
                Err(e) => return Err(e.into()),
            }
        }
        Some(legs) => {
            let mode = VolMode::Bns {
                legs,
                n_steps: s.mc.vol_steps,
            };
            match BnsVolSampler::new(&s.model, &legs, maturity, s.mc.vol_steps) {
                Ok(sampler) if t == 0.0 => {
                    let mix = margrabe_stochastic_vol(f1, f2, k, r, t, maturity, &sampler, paths, seed)?;
                    let full = mc_spread_price(&s.model, &s.terms, &s.snapshot, paths, seed.wrapping_add(1), &mode)?;
                    let se = mix.std_err.hypot(full.std_err);
                    checks.push(Check::new("mixture_vs_mc_z", mix.mean, full.mean, (mix.mean - full.mean).abs() / se, 3.5));
                }
                Ok(_) | Err(Error::Unsupported(_)) => checks.push(Check::skipped("mixture_vs_mc_z")),
                Err(e) => return Err(e.into()),
            }
        }
    }

    out.push_str("check,value,reference,error,tolerance,result\n");
    let mut failures = 0;
    for c in &checks {
        let result = match c.pass {
            Some(true) => "pass",
            Some(false) => {
                failures += 1;
                "fail"
            }
            None => "skip",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{result}",
            c.name,
            num(c.value),
            num(c.reference),
            num(c.error),
            num(c.tolerance)
        );
    }
    Ok(failures)
}
