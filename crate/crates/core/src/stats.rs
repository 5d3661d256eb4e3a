//! Normal distribution helpers and summation/summary utilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Upper tail `1 - Phi(z)`, accurate in the far right tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Phi^{-1}(q)`.
pub fn normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// Critical value `z` with `normal_sf(z) = level`.
pub fn upper_critical(level: f64) -> f64 {
    normal_quantile(1.0 - level)
}

const PAIRWISE_BLOCK: usize = 16;

/// Tree summation with a fixed split shape, so the result depends only on
/// the input order and not on how the caller parallelises.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `xs` and `N(0,1)`.
pub fn ks_distance_normal(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            let upper = (i + 1) as f64 / n - f;
            let lower = f - i as f64 / n;
            upper.max(lower)
        })
        .fold(0.0, f64::max)
}

/// Mean, sample standard deviation and KS distance to the standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub ks_normal: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        let mean = pairwise_sum(xs) / count as f64;
        let sd = if count > 1 {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            count,
            mean,
            sd,
            ks_normal: ks_distance_normal(xs),
        }
    }
}

/// Empirical `(1 - level)` quantile: the `ceil((1 - level) * n)`-th order
/// statistic, so `level = 1` gives the minimum.
pub fn upper_quantile(xs: &[f64], level: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((1.0 - level) * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped to the end bins.
pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        if !x.is_finite() {
            continue;
        }
        let b = ((x - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sf_reference_points() {
        assert_eq!(normal_sf(0.0), 0.5);
        assert!((normal_sf(1.6448536269514722) - 0.05).abs() < 1e-10);
        for z in [0.1, 0.7, 1.3, 2.5, 4.0, 7.9] {
            assert!((normal_sf(-z) - (1.0 - normal_sf(z))).abs() < 1e-12);
        }
        // 1 - Phi(z) at 50 digits, rounded
        assert!((normal_sf(5.0) - 2.866515718791939e-7).abs() < 1e-20);
        assert!((normal_sf(8.0) - 6.220960574271784e-16).abs() < 1e-28);
        assert!((normal_sf(-3.0) - 0.9986501019683699).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        assert!((upper_critical(0.05) - 1.6448536269514722).abs() < 1e-9);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_plain_sum_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn quantile_edges() {
        let xs = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(upper_quantile(&xs, 1.0), 1.0);
        assert_eq!(upper_quantile(&xs, 0.2), 4.0);
        assert_eq!(upper_quantile(&xs, 0.0), 5.0);
    }

    #[test]
    fn ks_of_single_point_at_zero() {
        assert!((ks_distance_normal(&[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_everything() {
        let xs = [-10.0, -0.5, 0.0, 0.5, 10.0];
        let h = histogram(&xs, -1.0, 1.0, 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[0].2, 1);
        assert_eq!(h[3].2, 2);
    }
}
