//! Numerical integration primitives.
//!
//! * adaptive 21-point Gauss–Kronrod with global error control, generic over
//!   small fixed-size value vectors so a price and its sensitivities can share
//!   one subdivision;
//! * Gauss–Legendre and Gauss–Hermite rules generated by Newton iteration;
//! * compensated and pairwise summation for order-stable reductions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Value type that can be integrated: a fixed number of real components.
pub trait QuadValue: Copy {
    const DIM: usize;
    fn zero() -> Self;
    fn component(&self, i: usize) -> f64;
    fn set_component(&mut self, i: usize, x: f64);
}

impl QuadValue for f64 {
    const DIM: usize = 1;
    fn zero() -> Self {
        0.0
    }
    fn component(&self, _i: usize) -> f64 {
        *self
    }
    fn set_component(&mut self, _i: usize, x: f64) {
        *self = x;
    }
}

impl<const N: usize> QuadValue for [f64; N] {
    const DIM: usize = N;
    fn zero() -> Self {
        [0.0; N]
    }
    fn component(&self, i: usize) -> f64 {
        self[i]
    }
    fn set_component(&mut self, i: usize, x: f64) {
        self[i] = x;
    }
}

fn max_abs<V: QuadValue>(v: &V) -> f64 {
    (0..V::DIM).map(|i| v.component(i).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Number of equal panels the interval is split into before adapting.
    pub initial_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_subdivisions: 4000,
            initial_panels: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<V> {
    pub value: V,
    pub abs_err: f64,
    pub evaluations: usize,
    pub panels: usize,
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_600_525_479,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
// 10-point Gauss weights for nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    err: f64,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// One 21-point Kronrod panel with the QUADPACK error heuristic, applied per
/// component; the panel error is the largest component error.
fn gk21<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fv = [V::zero(); 21];
    fv[20] = f(center);
    for j in 0..10 {
        let dx = half * XGK[j];
        fv[2 * j] = f(center - dx);
        fv[2 * j + 1] = f(center + dx);
    }
    let h = half.abs();
    let mut worst = 0.0_f64;
    let mut result = V::zero();
    for c in 0..V::DIM {
        let fc = fv[20].component(c);
        let mut resk = WGK[10] * fc;
        let mut resabs = resk.abs();
        let mut resg = 0.0;
        for j in 0..10 {
            let f1 = fv[2 * j].component(c);
            let f2 = fv[2 * j + 1].component(c);
            resk += WGK[j] * (f1 + f2);
            resabs += WGK[j] * (f1.abs() + f2.abs());
            if j % 2 == 1 {
                resg += WG[j / 2] * (f1 + f2);
            }
        }
        let mean = 0.5 * resk;
        let mut resasc = WGK[10] * (fc - mean).abs();
        for j in 0..10 {
            let f1 = fv[2 * j].component(c);
            let f2 = fv[2 * j + 1].component(c);
            resasc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
        }
        let resabs = resabs * h;
        let resasc = resasc * h;
        let mut err = ((resk - resg) * half).abs();
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(50.0 * f64::EPSILON * resabs);
        }
        if !err.is_finite() || !resk.is_finite() {
            err = f64::INFINITY;
        }
        worst = worst.max(err);
        result.set_component(c, resk * half);
    }
    (result, worst)
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Bisects the panel with the largest error estimate until the summed error
/// is below `max(abs_tol, rel_tol * |I|)`, where `|I|` is the largest
/// component magnitude. Panel contributions are summed left to right with
/// compensation, so the result does not depend on the refinement order.
pub fn integrate<V, F>(mut f: F, a: f64, b: f64, opts: &AdaptiveOptions) -> Result<Integral<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if a == b {
        return Ok(Integral {
            value: V::zero(),
            abs_err: 0.0,
            evaluations: 0,
            panels: 0,
        });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("integration bounds must be finite: [{a}, {b}]")));
    }
    let n0 = opts.initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut heap = BinaryHeap::with_capacity(n0 + opts.max_subdivisions);
    let mut evaluations = 0;
    for k in 0..n0 {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == n0 { b } else { a + (k + 1) as f64 * width };
        let (value, err) = gk21(&mut f, lo, hi);
        evaluations += 21;
        heap.push(Panel { a: lo, b: hi, value, err });
    }
    let mut splits = 0;
    let (mut running_total, mut running_err) = summarize(heap.iter());
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * max_abs(&running_total));
        if running_err <= tol {
            // confirm with an ordered compensated pass before accepting
            let (total, err_sum) = summarize(heap.iter());
            let tol = opts.abs_tol.max(opts.rel_tol * max_abs(&total));
            if err_sum <= tol {
                return Ok(Integral {
                    value: total,
                    abs_err: err_sum,
                    evaluations,
                    panels: heap.len(),
                });
            }
            running_total = total;
            running_err = err_sum;
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let too_narrow = mid <= worst.a || mid >= worst.b;
        if splits >= opts.max_subdivisions || too_narrow || !running_err.is_finite() {
            heap.push(worst);
            let (total, err_sum) = summarize(heap.iter());
            return Err(Error::Quadrature {
                achieved: err_sum,
                requested: opts.abs_tol.max(opts.rel_tol * max_abs(&total)),
            });
        }
        let (v1, e1) = gk21(&mut f, worst.a, mid);
        let (v2, e2) = gk21(&mut f, mid, worst.b);
        evaluations += 42;
        for c in 0..V::DIM {
            let x = running_total.component(c) - worst.value.component(c) + v1.component(c) + v2.component(c);
            running_total.set_component(c, x);
        }
        running_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
        splits += 1;
        if splits % 256 == 0 {
            let (t, e) = summarize(heap.iter());
            running_total = t;
            running_err = e;
        }
    }
}

fn summarize<'a, V: QuadValue + 'a>(panels: impl Iterator<Item = &'a Panel<V>>) -> (V, f64) {
    let mut ordered: Vec<&Panel<V>> = panels.collect();
    ordered.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut total = V::zero();
    for c in 0..V::DIM {
        let mut acc = NeumaierSum::default();
        for p in &ordered {
            acc.add(p.value.component(c));
        }
        total.set_component(c, acc.sum());
    }
    let mut err = NeumaierSum::default();
    for p in &ordered {
        err.add(p.err);
    }
    (total, err.sum())
}

/// Neumaier's variant of Kahan compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Pairwise (cascade) summation; the reduction tree depends only on the
/// slice length, so results are reproducible for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Nodes and weights of an `n`-point rule on its reference domain.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached 64-point Gauss–Legendre rule.
pub fn gauss_legendre_64() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

/// Gauss–Hermite rule for the weight `exp(-x^2)` on the real line.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    // Newton above fills the positive half in descending order.
    let mut full_nodes = vec![0.0; n];
    let mut full_weights = vec![0.0; n];
    for i in 0..m {
        full_nodes[i] = -nodes[i];
        full_weights[i] = weights[i];
        full_nodes[n - 1 - i] = nodes[i];
        full_weights[n - 1 - i] = weights[i];
    }
    Rule {
        nodes: full_nodes,
        weights: full_weights,
    }
}

/// Composite Gauss–Legendre rule on `[a, b]`, split at `breaks` (points
/// strictly inside the interval) and further into `min_panels` equal pieces
/// between consecutive breaks.
pub fn composite_legendre(a: f64, b: f64, breaks: &[f64], min_panels: usize) -> Rule {
    let base = gauss_legendre_64();
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for seg in edges.windows(2) {
        let pieces = min_panels.max(1);
        let w = (seg[1] - seg[0]) / pieces as f64;
        for k in 0..pieces {
            let lo = seg[0] + k as f64 * w;
            let half = 0.5 * w;
            let mid = lo + half;
            for (x, wt) in base.nodes.iter().zip(&base.weights) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
    }
    Rule { nodes, weights }
}
