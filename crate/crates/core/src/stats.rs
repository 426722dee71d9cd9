//! Small statistical helpers: sample moments and a Kolmogorov–Smirnov test
//! against the geometric law.

use serde::Serialize;

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 sum (-1)^{j-1} e^{-2 j² λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of integer samples against a CDF on the integers.
/// The p-value uses the asymptotic law with Stephens' small-sample
/// correction; for discrete laws it is conservative.
pub fn ks_discrete<F: Fn(u64) -> f64>(samples: &[u64], cdf: F) -> KsResult {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let k = sorted[i];
        let below = i as f64 / nf;
        while i < n && sorted[i] == k {
            i += 1;
        }
        let at = i as f64 / nf;
        // compare just below k (F(k-1)) and at k
        let f_prev = if k == 0 { 0.0 } else { cdf(k - 1) };
        d = d.max((below - f_prev).abs()).max((at - cdf(k)).abs());
    }
    let sq = nf.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsResult { n, statistic: d, p_value: kolmogorov_sf(lambda) }
}

/// CDF of the geometric law on `{1, 2, ...}` with success probability `p`.
pub fn geometric_cdf(p: f64) -> impl Fn(u64) -> f64 {
    let log_q = (-p).ln_1p();
    move |k| -(k as f64 * log_q).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kolmogorov_reference_values() {
        // standard table: Q(1.36) ≈ 0.049, Q(1.63) ≈ 0.0098
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 5e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn geometric_cdf_values() {
        let f = geometric_cdf(0.5);
        assert_eq!(f(0), 0.0);
        assert_relative_eq!(f(1), 0.5);
        assert_relative_eq!(f(3), 0.875);
    }

    #[test]
    fn exact_quantiles_pass() {
        // deterministic sample following Geometric(1/2) proportions exactly
        let mut xs = Vec::new();
        for k in 1..=12u64 {
            let count = 4096 >> k;
            xs.extend(std::iter::repeat_n(k, count));
        }
        let r = ks_discrete(&xs, geometric_cdf(0.5));
        assert!(r.statistic < 1e-3);
        assert!(r.p_value > 0.99);
        let shifted: Vec<u64> = xs.iter().map(|k| k + 1).collect();
        assert!(ks_discrete(&shifted, geometric_cdf(0.5)).p_value < 1e-6);
    }

    #[test]
    fn moments() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt());
    }
}
