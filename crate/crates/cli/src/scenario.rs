//! Scenario files: TOML with one section per model block.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use vmv_spread::fourier::{DampingConfig, OptionTerms, QuadratureSpec, YMax};
use vmv_spread::kernels::{KernelSpec, TabulatedKernel};
use vmv_spread::levy::{BivariateLevySpec, MertonJumps};
use vmv_spread::market::{MarketSnapshot, SeasonalitySpec, SpotModelSpec, SpreadModel};
use vmv_spread::mc::{BnsInit, BnsVolSpec};

/// Stable identifiers for every class of scenario problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    MissingFile,
    Syntax,
    Damping,
    HeatRate,
    Maturity,
    Rate,
    Correlation,
    Diffusion,
    Jumps,
    Kernel,
    Seasonality,
    SpotVol,
    Snapshot,
    Quadrature,
    MonteCarlo,
    StochasticVol,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MissingFile => "E100",
            ErrorCode::Syntax => "E101",
            ErrorCode::Damping => "E110",
            ErrorCode::HeatRate => "E111",
            ErrorCode::Maturity => "E112",
            ErrorCode::Rate => "E113",
            ErrorCode::Correlation => "E120",
            ErrorCode::Diffusion => "E121",
            ErrorCode::Jumps => "E122",
            ErrorCode::Kernel => "E130",
            ErrorCode::Seasonality => "E131",
            ErrorCode::SpotVol => "E132",
            ErrorCode::Snapshot => "E140",
            ErrorCode::Quadrature => "E150",
            ErrorCode::MonteCarlo => "E151",
            ErrorCode::StochasticVol => "E160",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub code: ErrorCode,
    /// Dotted path of the offending entry, e.g. `numerics.damping`.
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.code.as_str(), self.field, self.reason)
    }
}

impl std::error::Error for ScenarioError {}

fn fail(code: ErrorCode, field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError {
        code,
        field: field.into(),
        reason: reason.into(),
    }
}

trait Tag<T> {
    fn tag(self, code: ErrorCode, field: &str) -> Result<T, ScenarioError>;
}

impl<T> Tag<T> for vmv_spread::Result<T> {
    fn tag(self, code: ErrorCode, field: &str) -> Result<T, ScenarioError> {
        self.map_err(|e| fail(code, field, e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    levy: RawLevy,
    spot1: RawSpot,
    spot2: RawSpot,
    option: RawOption,
    snapshot: RawSnapshot,
    #[serde(default)]
    numerics: RawNumerics,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevy {
    #[serde(default)]
    gamma: [f64; 2],
    c: [f64; 2],
    rho: f64,
    jumps: Option<RawJumps>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJumps {
    intensity: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpot {
    #[serde(default = "one")]
    vol: f64,
    seasonality: RawSeasonality,
    kernel: RawKernel,
    bns: Option<RawBns>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawSeasonality {
    Constant {
        level: f64,
    },
    TrendSine {
        level: f64,
        slope: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawKernel {
    Constant {
        scale: f64,
    },
    Ou {
        #[serde(default = "one")]
        scale: f64,
        alpha: f64,
    },
    Carma {
        ar: Vec<f64>,
        #[serde(default)]
        ma: Vec<f64>,
    },
    Tabulated {
        lags: Option<Vec<f64>>,
        values: Option<Vec<f64>>,
        /// CSV of `lag,value` rows, relative to the scenario file.
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawBnsInit {
    Value(f64),
    Flag(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBns {
    mean_reversion: f64,
    intensity: f64,
    jump_mean: f64,
    initial: RawBnsInit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOption {
    maturity: f64,
    heat_rate: f64,
    #[serde(default)]
    rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnapshot {
    t: f64,
    maturity: Option<f64>,
    f1: f64,
    f2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawYMax {
    Fixed(f64),
    Auto(String),
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawNumerics {
    damping: f64,
    rel_tol: f64,
    abs_tol: f64,
    y_max: RawYMax,
    max_subdivisions: usize,
    paths: usize,
    seed: u64,
    rebalance_steps: usize,
    vol_steps: usize,
    dump_steps: usize,
}

impl Default for RawNumerics {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self {
            damping: DampingConfig::default().c,
            rel_tol: q.rel_tol,
            abs_tol: q.abs_tol,
            y_max: RawYMax::Auto("auto".into()),
            max_subdivisions: q.max_subdivisions,
            paths: 200_000,
            seed: 1,
            rebalance_steps: 64,
            vol_steps: 50,
            dump_steps: 100,
        }
    }
}

/// Simulation controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McControls {
    pub paths: usize,
    pub seed: u64,
    pub rebalance_steps: usize,
    /// Steps per path for stochastic volatility.
    pub vol_steps: usize,
    /// Steps per dumped path.
    pub dump_steps: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: SpreadModel,
    pub terms: OptionTerms,
    pub snapshot: MarketSnapshot,
    pub damping: DampingConfig,
    pub quadrature: QuadratureSpec,
    pub mc: McControls,
    /// Variance processes of the two legs, when both spots declare one.
    pub bns: Option<[BnsVolSpec; 2]>,
    /// Hex SHA-256 of the file bytes.
    pub sha256: String,
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let bytes = std::fs::read(path).map_err(|e| fail(ErrorCode::MissingFile, path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario_bytes(&bytes, base)
}

/// Parses scenario text; relative file references resolve against `base`.
pub fn parse_scenario_bytes(bytes: &[u8], base: &Path) -> Result<Scenario, ScenarioError> {
    let sha256 = hex::encode(Sha256::digest(bytes));
    let text = std::str::from_utf8(bytes).map_err(|e| fail(ErrorCode::Syntax, "<file>", e.to_string()))?;
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let field = e.span().map_or_else(|| "<file>".to_string(), |s| {
            format!("line {}", text[..s.start].matches('\n').count() + 1)
        });
        fail(ErrorCode::Syntax, field, e.message().to_string())
    })?;
    build(raw, base, sha256)
}

fn build(raw: RawScenario, base: &Path, sha256: String) -> Result<Scenario, ScenarioError> {
    let levy = build_levy(&raw.levy)?;
    let spot1 = build_spot(&raw.spot1, "spot1", base)?;
    let spot2 = build_spot(&raw.spot2, "spot2", base)?;

    let o = &raw.option;
    if !(o.maturity.is_finite() && o.maturity > 0.0) {
        return Err(fail(ErrorCode::Maturity, "option.maturity", "must be positive"));
    }
    if !(o.heat_rate.is_finite() && o.heat_rate > 0.0) {
        return Err(fail(ErrorCode::HeatRate, "option.heat_rate", format!("must be positive, got {}", o.heat_rate)));
    }
    let terms = OptionTerms::new(o.maturity, o.heat_rate, o.rate).tag(ErrorCode::Rate, "option.rate")?;

    let s = &raw.snapshot;
    if let Some(m) = s.maturity {
        if m != o.maturity {
            return Err(fail(ErrorCode::Snapshot, "snapshot.maturity", "must equal option.maturity"));
        }
    }
    let snapshot = MarketSnapshot::new(s.t, o.maturity, s.f1, s.f2).tag(ErrorCode::Snapshot, "snapshot")?;

    let n = &raw.numerics;
    let damping = DampingConfig::new(n.damping).tag(ErrorCode::Damping, "numerics.damping")?;
    let y_max = match &n.y_max {
        RawYMax::Fixed(y) => YMax::Fixed(*y),
        RawYMax::Auto(s) if s == "auto" => YMax::Auto,
        RawYMax::Auto(s) => {
            return Err(fail(ErrorCode::Quadrature, "numerics.y_max", format!("expected a number or \"auto\", got {s:?}")))
        }
    };
    let quadrature =
        QuadratureSpec::new(n.rel_tol, n.abs_tol, y_max, n.max_subdivisions).tag(ErrorCode::Quadrature, "numerics")?;
    for (name, v) in [
        ("numerics.paths", n.paths),
        ("numerics.rebalance_steps", n.rebalance_steps),
        ("numerics.vol_steps", n.vol_steps),
        ("numerics.dump_steps", n.dump_steps),
    ] {
        if v == 0 {
            return Err(fail(ErrorCode::MonteCarlo, name, "must be positive"));
        }
    }
    let mc = McControls {
        paths: n.paths,
        seed: n.seed,
        rebalance_steps: n.rebalance_steps,
        vol_steps: n.vol_steps,
        dump_steps: n.dump_steps,
    };

    let bns = match (&raw.spot1.bns, &raw.spot2.bns) {
        (None, None) => None,
        (Some(a), Some(b)) => Some([build_bns(a, "spot1.bns")?, build_bns(b, "spot2.bns")?]),
        (Some(_), None) => return Err(fail(ErrorCode::StochasticVol, "spot2.bns", "both spots need a variance process")),
        (None, Some(_)) => return Err(fail(ErrorCode::StochasticVol, "spot1.bns", "both spots need a variance process")),
    };

    Ok(Scenario {
        model: SpreadModel::new(levy, spot1, spot2),
        terms,
        snapshot,
        damping,
        quadrature,
        mc,
        bns,
        sha256,
    })
}

fn build_levy(raw: &RawLevy) -> Result<BivariateLevySpec, ScenarioError> {
    if !(raw.rho.is_finite() && raw.rho > -1.0 && raw.rho < 1.0) {
        return Err(fail(ErrorCode::Correlation, "levy.rho", format!("must lie in (-1, 1), got {}", raw.rho)));
    }
    for (i, c) in raw.c.iter().enumerate() {
        if !(c.is_finite() && *c >= 0.0) {
            return Err(fail(ErrorCode::Diffusion, format!("levy.c[{i}]"), "must be nonnegative"));
        }
    }
    match &raw.jumps {
        None => BivariateLevySpec::gaussian(raw.gamma, raw.c, raw.rho).tag(ErrorCode::Diffusion, "levy"),
        Some(j) => {
            let jumps = MertonJumps::new(j.intensity, j.mean, j.cov).tag(ErrorCode::Jumps, "levy.jumps")?;
            BivariateLevySpec::merton(raw.gamma, raw.c, raw.rho, jumps).tag(ErrorCode::Jumps, "levy.jumps")
        }
    }
}

fn build_spot(raw: &RawSpot, name: &str, base: &Path) -> Result<SpotModelSpec, ScenarioError> {
    let sf = format!("{name}.seasonality");
    let seasonality = match raw.seasonality {
        RawSeasonality::Constant { level } => SeasonalitySpec::constant(level),
        RawSeasonality::TrendSine {
            level,
            slope,
            amplitude,
            period,
            phase,
        } => SeasonalitySpec::trend_sine(level, slope, amplitude, period, phase),
    }
    .tag(ErrorCode::Seasonality, &sf)?;
    let kf = format!("{name}.kernel");
    let kernel = match &raw.kernel {
        RawKernel::Constant { scale } => KernelSpec::constant(*scale),
        RawKernel::Ou { scale, alpha } => KernelSpec::ou(*scale, *alpha),
        RawKernel::Carma { ar, ma } => KernelSpec::carma(ar.clone(), ma.clone()),
        RawKernel::Tabulated { lags, values, file } => match (lags, values, file) {
            (Some(l), Some(v), None) => KernelSpec::tabulated(l.clone(), v.clone()),
            (None, None, Some(f)) => TabulatedKernel::from_csv(&base.join(f)).map(KernelSpec::Tabulated),
            _ => return Err(fail(ErrorCode::Kernel, kf, "give either lags and values, or file")),
        },
    }
    .tag(ErrorCode::Kernel, &kf)?;
    SpotModelSpec::new(seasonality, kernel, raw.vol).tag(ErrorCode::SpotVol, &format!("{name}.vol"))
}

fn build_bns(raw: &RawBns, field: &str) -> Result<BnsVolSpec, ScenarioError> {
    let init = match &raw.initial {
        RawBnsInit::Value(v) => BnsInit::Value(*v),
        RawBnsInit::Flag(s) if s == "stationary" => BnsInit::Stationary,
        RawBnsInit::Flag(s) => {
            return Err(fail(
                ErrorCode::StochasticVol,
                format!("{field}.initial"),
                format!("expected a number or \"stationary\", got {s:?}"),
            ))
        }
    };
    BnsVolSpec::new(raw.mean_reversion, raw.intensity, raw.jump_mean, init).tag(ErrorCode::StochasticVol, field)
}
