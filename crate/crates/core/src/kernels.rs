//! Deterministic Volterra kernels `g(T, s)`.
//!
//! All built-in kernels are stationary, `g(T, s) = g̃(T − s)`, but they are
//! evaluated through `(T, s)` so the interface also fits non-stationary
//! kernels.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::quad::composite_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct CarmaKernel {
    ar: Vec<f64>,
    ma: Vec<f64>,
    scale: f64,
    companion: DMatrix<f64>,
    /// Full moving-average vector `(b0, …, b_{q−1}, 1, 0, …, 0)` of length p.
    b: DVector<f64>,
}

impl CarmaKernel {
    pub fn ar(&self) -> &[f64] {
        &self.ar
    }

    pub fn ma(&self) -> &[f64] {
        &self.ma
    }

    pub fn order(&self) -> (usize, usize) {
        (self.ar.len(), self.ma.len())
    }

    pub fn companion(&self) -> &DMatrix<f64> {
        &self.companion
    }

    fn eval_lag(&self, lag: f64) -> f64 {
        let p = self.ar.len();
        let e = matrix_exponential(&(&self.companion * lag));
        let col = e.column(p - 1);
        self.scale * self.b.dot(&col)
    }

    /// `∫_H^∞ g̃(u)² du` through the controllability Gramian
    /// `Γ = ∫_0^∞ e^{Au} e_p e_pᵀ e^{Aᵀu} du`, which solves
    /// `AΓ + ΓAᵀ = −e_p e_pᵀ`.
    fn l2_tail(&self, horizon: f64) -> Result<f64> {
        let p = self.ar.len();
        let a = &self.companion;
        let id = DMatrix::<f64>::identity(p, p);
        let k = id.kronecker(a) + a.kronecker(&id);
        let mut rhs = DVector::<f64>::zeros(p * p);
        rhs[(p - 1) * p + (p - 1)] = -1.0;
        let vec_gamma = k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Lyapunov system".into()))?;
        let gamma = DMatrix::from_column_slice(p, p, vec_gamma.as_slice());
        let e = matrix_exponential(&(a * horizon));
        let w = e.transpose() * &self.b;
        Ok((self.scale * self.scale * w.dot(&(&gamma * &w))).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    lags: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(lags: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if lags.is_empty() || lags.len() != values.len() {
            return Err(Error::invalid(
                "kernel.table",
                "needs a nonempty grid with one value per lag",
            ));
        }
        for (&l, &v) in lags.iter().zip(&values) {
            ensure_finite("kernel.table", l)?;
            ensure_finite("kernel.table", v)?;
        }
        if lags[0] < 0.0 {
            return Err(Error::invalid("kernel.table", "lags must be nonnegative"));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("kernel.table", "lags must be strictly increasing"));
        }
        Ok(Self { lags, values })
    }

    /// Two-column CSV `(lag, value)`; a non-numeric first row is treated as
    /// a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut lags = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            if record.len() != 2 {
                return Err(Error::invalid(
                    "kernel.table",
                    format!("row {} has {} columns, expected 2", row + 1, record.len()),
                ));
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(l), Ok(v)) => {
                    lags.push(l);
                    values.push(v);
                }
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::invalid(
                        "kernel.table",
                        format!("row {} is not numeric", row + 1),
                    ))
                }
            }
        }
        Self::new(lags, values)
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn eval_lag(&self, lag: f64) -> f64 {
        let last = *self.lags.last().unwrap();
        if lag > last {
            return 0.0;
        }
        if lag <= self.lags[0] {
            return self.values[0];
        }
        let k = self.lags.partition_point(|&l| l < lag);
        let (l0, l1) = (self.lags[k - 1], self.lags[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (lag - l0) / (l1 - l0)
    }

    fn l2_tail(&self, horizon: f64) -> f64 {
        // exact integral of the squared piecewise-linear interpolant
        let mut total = 0.0;
        let seg = |a: f64, b: f64, va: f64, vb: f64| (b - a) * (va * va + va * vb + vb * vb) / 3.0;
        if horizon < self.lags[0] {
            total += seg(horizon, self.lags[0], self.values[0], self.values[0]);
        }
        for k in 1..self.lags.len() {
            let (l0, l1) = (self.lags[k - 1], self.lags[k]);
            if l1 <= horizon {
                continue;
            }
            let a = l0.max(horizon);
            total += seg(a, l1, self.eval_lag(a), self.values[k]);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Constant { scale: f64 },
    Ou { scale: f64, alpha: f64 },
    Carma(CarmaKernel),
    Tabulated(TabulatedKernel),
}

impl KernelSpec {
    pub fn constant(scale: f64) -> Result<Self> {
        ensure_finite("kernel.scale", scale)?;
        Ok(KernelSpec::Constant { scale })
    }

    pub fn ou(scale: f64, alpha: f64) -> Result<Self> {
        ensure_finite("kernel.scale", scale)?;
        ensure_finite("kernel.alpha", alpha)?;
        if alpha <= 0.0 {
            return Err(Error::invalid("kernel.alpha", "mean reversion must be positive"));
        }
        Ok(KernelSpec::Ou { scale, alpha })
    }

    /// CARMA(p, q) kernel `bᵀ e^{A(T−s)} e_p` from autoregressive
    /// coefficients `a1..ap` and moving-average coefficients `b0..b_{q−1}`.
    pub fn carma(ar: Vec<f64>, ma: Vec<f64>) -> Result<Self> {
        let p = ar.len();
        if p == 0 {
            return Err(Error::invalid("kernel.ar", "need at least one coefficient"));
        }
        if ma.len() >= p {
            return Err(Error::invalid(
                "kernel.ma",
                format!("moving-average order q = {} must be below p = {p}", ma.len()),
            ));
        }
        for &a in &ar {
            ensure_finite("kernel.ar", a)?;
            if a <= 0.0 {
                return Err(Error::invalid("kernel.ar", "coefficients must be positive"));
            }
        }
        for &b in &ma {
            ensure_finite("kernel.ma", b)?;
        }
        let companion = companion_matrix(&ar);
        let eigen = companion.clone().complex_eigenvalues();
        if let Some(bad) = eigen.iter().find(|z| z.re >= 0.0) {
            return Err(Error::invalid(
                "kernel.ar",
                format!("companion matrix has eigenvalue {bad} with nonnegative real part"),
            ));
        }
        let mut b = DVector::zeros(p);
        for (i, &bi) in ma.iter().enumerate() {
            b[i] = bi;
        }
        b[ma.len()] = 1.0;
        Ok(KernelSpec::Carma(CarmaKernel {
            ar,
            ma,
            scale: 1.0,
            companion,
            b,
        }))
    }

    pub fn tabulated(lags: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(KernelSpec::Tabulated(TabulatedKernel::new(lags, values)?))
    }

    /// The same kernel multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> KernelSpec {
        match self {
            KernelSpec::Constant { scale } => KernelSpec::Constant {
                scale: scale * factor,
            },
            KernelSpec::Ou { scale, alpha } => KernelSpec::Ou {
                scale: scale * factor,
                alpha: *alpha,
            },
            KernelSpec::Carma(c) => KernelSpec::Carma(CarmaKernel {
                scale: c.scale * factor,
                ..c.clone()
            }),
            KernelSpec::Tabulated(t) => KernelSpec::Tabulated(TabulatedKernel {
                lags: t.lags.clone(),
                values: t.values.iter().map(|v| v * factor).collect(),
            }),
        }
    }

    pub fn is_square_integrable(&self) -> bool {
        !matches!(self, KernelSpec::Constant { .. })
    }

    /// `g(T, s)`; requires `s ≤ T`.
    pub fn eval(&self, maturity: f64, s: f64) -> Result<f64> {
        if s > maturity {
            return Err(Error::Domain(format!(
                "kernel evaluated at s = {s} beyond T = {maturity}"
            )));
        }
        Ok(self.eval_lag(maturity - s))
    }

    /// Stationary profile `g̃(lag)`, `lag ≥ 0`.
    pub fn eval_lag(&self, lag: f64) -> f64 {
        match self {
            KernelSpec::Constant { scale } => *scale,
            KernelSpec::Ou { scale, alpha } => scale * (-alpha * lag).exp(),
            KernelSpec::Carma(c) => c.eval_lag(lag),
            KernelSpec::Tabulated(t) => t.eval_lag(lag),
        }
    }

    /// Lags at which the kernel is not smooth.
    pub fn knots(&self) -> &[f64] {
        match self {
            KernelSpec::Tabulated(t) => &t.lags,
            _ => &[],
        }
    }

    /// Rough upper bound on the exponential rate of variation, used to size
    /// quadrature panels.
    pub fn variation_rate(&self) -> f64 {
        match self {
            KernelSpec::Constant { .. } | KernelSpec::Tabulated(_) => 0.0,
            KernelSpec::Ou { alpha, .. } => *alpha,
            KernelSpec::Carma(c) => c.companion.norm(),
        }
    }

    /// `∫_{−∞}^{T−horizon} g²(T, s) ds`.
    pub fn l2_tail(&self, _maturity: f64, horizon: f64) -> Result<f64> {
        if horizon.is_nan() || horizon < 0.0 {
            return Err(Error::invalid("horizon", "must be nonnegative"));
        }
        if horizon == f64::INFINITY {
            return Ok(0.0);
        }
        match self {
            KernelSpec::Constant { .. } => Err(Error::Domain(
                "constant kernel is not square-integrable; truncation does not apply".into(),
            )),
            KernelSpec::Ou { scale, alpha } => {
                Ok(scale * scale * (-2.0 * alpha * horizon).exp() / (2.0 * alpha))
            }
            KernelSpec::Carma(c) => c.l2_tail(horizon),
            KernelSpec::Tabulated(t) => Ok(t.l2_tail(horizon)),
        }
    }

    /// Composite Gauss–Legendre rule on `[t, T]` adapted to this kernel and
    /// `other`: panels break at the kernels' knots and are short enough for
    /// the exponential rates involved.
    pub fn s_rule(&self, other: Option<&KernelSpec>, t: f64, maturity: f64) -> crate::quad::Rule {
        let tau = maturity - t;
        let mut breaks: Vec<f64> = self.knots().iter().map(|l| maturity - l).collect();
        let mut rate = self.variation_rate();
        if let Some(o) = other {
            breaks.extend(o.knots().iter().map(|l| maturity - l));
            rate = rate.max(o.variation_rate());
        }
        let panels = ((2.0 * rate * tau) / 30.0).ceil().max(1.0) as usize;
        composite_legendre(t, maturity, &breaks, panels)
    }

    /// `∫_t^T g(T, s) h(T, s) ds`, closed form where available.
    pub fn product_integral(&self, other: &KernelSpec, t: f64, maturity: f64) -> f64 {
        self.product_integral_lags(other, 0.0, maturity - t)
    }

    /// `∫_lo^hi g̃(u) h̃(u) du` over a lag interval.
    pub fn product_integral_lags(&self, other: &KernelSpec, lo: f64, hi: f64) -> f64 {
        let width = hi - lo;
        if width <= 0.0 {
            return 0.0;
        }
        use KernelSpec::*;
        // ∫_lo^hi e^{−rate·u} du
        let decay = |rate: f64| {
            let head = (-rate * lo).exp();
            if rate * width < 1e-8 {
                head * width * (1.0 - 0.5 * rate * width)
            } else {
                -head * (-rate * width).exp_m1() / rate
            }
        };
        match (self, other) {
            (Constant { scale: a }, Constant { scale: b }) => a * b * width,
            (Constant { scale: a }, Ou { scale: b, alpha }) | (Ou { scale: b, alpha }, Constant { scale: a }) => {
                a * b * decay(*alpha)
            }
            (Ou { scale: a, alpha }, Ou { scale: b, alpha: beta }) => a * b * decay(alpha + beta),
            _ => {
                let rule = self.lag_rule(Some(other), lo, hi);
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&u, w)| w * self.eval_lag(u) * other.eval_lag(u))
                    .sum()
            }
        }
    }

    /// Composite Gauss–Legendre rule on the lag interval `[lo, hi]`.
    pub fn lag_rule(&self, other: Option<&KernelSpec>, lo: f64, hi: f64) -> crate::quad::Rule {
        let mut breaks: Vec<f64> = self.knots().to_vec();
        let mut rate = self.variation_rate();
        if let Some(o) = other {
            breaks.extend_from_slice(o.knots());
            rate = rate.max(o.variation_rate());
        }
        let panels = ((2.0 * rate * (hi - lo)) / 30.0).ceil().max(1.0) as usize;
        composite_legendre(lo, hi, &breaks, panels)
    }

    /// `∫_t^T g(T, s) ds`.
    pub fn integral(&self, t: f64, maturity: f64) -> f64 {
        self.product_integral(&KernelSpec::Constant { scale: 1.0 }, t, maturity)
    }
}

/// Companion matrix with ones on the superdiagonal and last row
/// `(−a_p, …, −a_1)`.
pub fn companion_matrix(a: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..p {
        m[(p - 1, j)] = -a[p - 1 - j];
    }
    m
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn matrix_exponential(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "matrix exponential needs a square matrix");
    let n = m.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].exp());
    }
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);
    let id = DMatrix::<f64>::identity(n, n);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn companion_shapes() {
        let m = companion_matrix(&[0.7]);
        assert_eq!(m[(0, 0)], -0.7);
        let m = companion_matrix(&[1.5, 0.4]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.4, -1.5]));
        let m = companion_matrix(&[1.0, 2.0, 3.0]);
        let ones = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| j == i + 1 && m[(i, j)] == 1.0)
            .count();
        assert_eq!(ones, 2);
        assert_eq!(m.row(2).iter().copied().collect::<Vec<_>>(), vec![-3.0, -2.0, -1.0]);
    }

    #[test]
    fn matrix_exponential_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(matrix_exponential(&z), DMatrix::identity(3, 3));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let e = matrix_exponential(&d);
        assert_relative_eq!(e[(0, 0)], (-1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exponential(&nil);
        assert_relative_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-15);
        // rotation generator, needs scaling
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -20.0, 20.0, 0.0]);
        let e = matrix_exponential(&rot);
        assert_relative_eq!(e[(0, 0)], 20f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 0)], 20f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn carma_one_zero_is_ou() {
        let carma = KernelSpec::carma(vec![1.3], vec![]).unwrap();
        let ou = KernelSpec::ou(1.0, 1.3).unwrap();
        for k in 0..50 {
            let lag = 0.1 * k as f64;
            let a = carma.eval(5.0, 5.0 - lag).unwrap();
            let b = ou.eval(5.0, 5.0 - lag).unwrap();
            assert!((a - b).abs() <= 1e-12, "lag {lag}: {a} vs {b}");
        }
        for h in [0.0, 0.5, 2.0] {
            assert_relative_eq!(
                carma.l2_tail(0.0, h).unwrap(),
                ou.l2_tail(0.0, h).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn carma_zero_lag_values() {
        let k = KernelSpec::carma(vec![2.0, 1.5], vec![0.4]).unwrap();
        assert_relative_eq!(k.eval(3.0, 3.0).unwrap(), 1.0, epsilon = 1e-15);
        // CAR(2): b = e_1, so bᵀe_2 = 0 at zero lag
        let car2 = KernelSpec::carma(vec![2.0, 1.5], vec![]).unwrap();
        assert!(car2.eval(3.0, 3.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn carma_rejects_unstable_and_bad_orders() {
        // a1 a2 > a3 fails for (1, 1, 2): s^3 + s^2 + s + 2 is unstable
        assert!(KernelSpec::carma(vec![1.0, 1.0, 2.0], vec![]).is_err());
        assert!(KernelSpec::carma(vec![1.0, 1.0], vec![0.1, 0.2]).is_err());
        assert!(KernelSpec::carma(vec![1.0, -1.0], vec![]).is_err());
        assert!(KernelSpec::carma(vec![3.0, 2.0, 1.0], vec![0.5]).is_ok());
    }

    #[test]
    fn constant_kernel_and_invalid_eval() {
        let k = KernelSpec::constant(1.0).unwrap();
        assert_eq!(k.eval(1.0, -100.0).unwrap(), 1.0);
        assert!(k.eval(1.0, 1.5).is_err());
        assert!(matches!(k.l2_tail(1.0, 1.0), Err(Error::Domain(_))));
        assert!(KernelSpec::ou(1.0, 0.0).is_err());
    }

    #[test]
    fn ou_tail_closed_form() {
        let k = KernelSpec::ou(1.0, 1.0).unwrap();
        for h in [0.0, 0.3, 1.0, 4.0] {
            assert_relative_eq!(k.l2_tail(2.0, h).unwrap(), (-2.0 * h).exp() / 2.0, max_relative = 1e-15);
        }
        assert_eq!(k.l2_tail(2.0, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn carma_tail_matches_quadrature() {
        let k = KernelSpec::carma(vec![2.0, 1.5], vec![0.4]).unwrap();
        for h in [0.0, 1.0, 3.0] {
            let opts = crate::quad::AdaptiveOptions {
                initial_panels: 16,
                ..Default::default()
            };
            let q = crate::quad::integrate(|u: f64| k.eval_lag(u).powi(2), h, h + 60.0, &opts)
                .unwrap()
                .value;
            assert_relative_eq!(k.l2_tail(0.0, h).unwrap(), q, max_relative = 1e-10);
        }
    }

    #[test]
    fn tabulated_kernel_behaviour() {
        let k = KernelSpec::tabulated(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(k.eval_lag(0.5), 0.75);
        assert_eq!(k.eval_lag(2.5), 0.0);
        assert_eq!(k.eval_lag(2.0), 0.25);
        // ∫_0^1 (1 - x/2)^2 + ∫_1^2 (0.75 - x/4)^2
        let exact = (1.0 + 0.5 + 0.25) / 3.0 + (0.25 + 0.125 + 0.0625) / 3.0;
        assert_relative_eq!(k.l2_tail(0.0, 0.0).unwrap(), exact, max_relative = 1e-15);
        assert!(KernelSpec::tabulated(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn tabulated_csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("vmv-kernel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("k.csv");
        std::fs::write(&path, "lag,value\n0.0,1.0\n0.5,0.6\n1.0,0.2\n").unwrap();
        let t = TabulatedKernel::from_csv(&path).unwrap();
        assert_eq!(t.lags(), &[0.0, 0.5, 1.0]);
        std::fs::write(&path, "0.0,1.0\n0.5,0.6\n0.4,0.2\n").unwrap();
        assert!(TabulatedKernel::from_csv(&path).is_err());
    }

    #[test]
    fn product_integral_closed_forms_match_quadrature() {
        let kernels = [
            KernelSpec::constant(0.3).unwrap(),
            KernelSpec::ou(0.8, 1.7).unwrap(),
            KernelSpec::ou(1.1, 0.4).unwrap(),
        ];
        for g in &kernels {
            for h in &kernels {
                let closed = g.product_integral(h, 0.25, 2.0);
                let opts = crate::quad::AdaptiveOptions::default();
                let q = crate::quad::integrate(
                    |s: f64| g.eval(2.0, s).unwrap() * h.eval(2.0, s).unwrap(),
                    0.25,
                    2.0,
                    &opts,
                )
                .unwrap()
                .value;
                assert_relative_eq!(closed, q, max_relative = 1e-13);
            }
        }
    }

    fn arb_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (0.1..2.0f64).prop_map(|s| KernelSpec::constant(s).unwrap()),
            (0.1..2.0f64, 0.05..5.0f64).prop_map(|(s, a)| KernelSpec::ou(s, a).unwrap()),
            (0.5..3.0f64, 0.2..2.0f64, -1.0..1.0f64)
                .prop_map(|(a1, a2, b0)| KernelSpec::carma(vec![a1, a2], vec![b0]).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn kernels_are_shift_invariant(k in arb_kernel(), t in -5.0..5.0f64, lag in 0.0..4.0f64, d in -3.0..3.0f64) {
            let a = k.eval(t, t - lag).unwrap();
            let b = k.eval(t + d, t + d - lag).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn exp_inverse_identity(a1 in 0.2..4.0f64, a2 in 0.2..4.0f64, a3 in 0.05..1.0f64, lag in 0.0..3.0f64) {
            // keep the cubic stable: a1 a2 > a3
            prop_assume!(a1 * a2 > a3);
            let a = companion_matrix(&[a1, a2, a3]) * lag;
            let prod = matrix_exponential(&a) * matrix_exponential(&(-&a));
            let err = (prod - DMatrix::<f64>::identity(3, 3)).abs().max();
            prop_assert!(err < 1e-10, "err = {err}");
        }

        #[test]
        fn tail_nonincreasing(k in arb_kernel(), h in 0.0..5.0f64, dh in 0.0..2.0f64) {
            prop_assume!(k.is_square_integrable());
            let a = k.l2_tail(0.0, h).unwrap();
            let b = k.l2_tail(0.0, h + dh).unwrap();
            prop_assert!(b <= a * (1.0 + 1e-12) + 1e-300);
            prop_assert!(k.l2_tail(0.0, 2000.0).unwrap() < 1e-20);
        }
    }
}
