//! Summary statistics over replicate values.

use libm::erfc;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the usual midpoint convention for even counts.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Sample variance with divisor `n - 1`.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Moment skewness `m3 / m2^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(xs);
    m3 / m2.powf(1.5)
}

/// Moment excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(xs);
    m4 / (m2 * m2) - 3.0
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mu = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `xs` and `N(0, 1)`.
pub fn ks_distance_normal(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = normal_cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    })
}

/// Asymptotic 1% critical value of the one-sample KS distance.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn moments_of_small_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(skewness(&xs).abs() < 1e-15);
        // m2 = 1.25, m4 = 2.5625
        assert!((excess_kurtosis(&xs) - (2.5625 / 1.5625 - 3.0)).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    // Brute-force oracle: sup over a fine grid plus both sides of each jump.
    #[test]
    fn ks_matches_brute_force() {
        let xs = [-1.3, -0.2, 0.05, 0.4, 0.41, 2.2, -0.7];
        let n = xs.len() as f64;
        let ecdf = |t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / n;
        let mut best = 0.0_f64;
        for &x in &xs {
            for t in [x - 1e-12, x] {
                best = best.max((ecdf(t) - normal_cdf(t)).abs());
            }
        }
        assert!((ks_distance_normal(&xs) - best).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&ks_distance_normal(&xs)));
    }

    #[test]
    fn ks_critical_at_5000() {
        assert!((ks_critical_1pct(5000) - 0.023_052).abs() < 1e-6);
    }
}
