//! Sample statistics shared by the simulation code.

use crate::quad::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Mean and standard error (sample standard deviation over √n) of
    /// `samples`, reduced pairwise in index order.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_err: f64::NAN,
                n_paths: 0,
                seed,
            };
        }
        let first = samples[0];
        if samples.iter().all(|&x| x == first) {
            return Self {
                mean: first,
                std_err: 0.0,
                n_paths: n,
                seed,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&sq) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n_paths: n,
            seed,
        }
    }

    /// `|mean − reference|` in standard errors; zero-error estimates compare
    /// exactly.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = (self.mean - reference).abs();
        if self.std_err > 0.0 {
            d / self.std_err
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Sample mean and variance of `xs`.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - 1.0))
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    (d, kolmogorov_sf((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-2.0 * (j * j) as f64 * x * x).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_samples() {
        let e = McEstimate::from_samples(&[2.0; 10], 7);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.std_err, 0.0);
        assert_eq!(e.z_score(2.0), 0.0);
        assert!(e.z_score(2.1).is_infinite());
    }

    #[test]
    fn std_err_definition() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let e = McEstimate::from_samples(&xs, 0);
        let var: f64 = xs.iter().map(|x| (x - 2.5f64).powi(2)).sum::<f64>() / 3.0;
        assert!((e.std_err - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // tabulated critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_uniform_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_test(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);
        let (_, p) = ks_test(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(p < 1e-6);
    }
}
