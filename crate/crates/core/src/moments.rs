//! Unbiased estimators of powers and products of a multinomial cell
//! probability from one row, via falling factorials: for
//! `X ~ Binomial(N, w)`, `E[X^(k)] = N^(k) w^k`.

use crate::error::{DelveError, Result};

/// `x (x-1) ... (x-k+1)` as a float; zero whenever `x < k`.
pub fn falling(x: u64, k: u32) -> f64 {
    if x < k as u64 {
        return 0.0;
    }
    (0..k as u64).map(|t| (x - t) as f64).product()
}

fn need(n: u64, min: u64) -> Result<()> {
    if n < min {
        return Err(DelveError::InvalidParameter(format!(
            "row total {n} is below the required {min}"
        )));
    }
    Ok(())
}

/// Estimates `w_j`: `X / N`.
pub fn est_omega(x: u64, n: u64) -> Result<f64> {
    need(n, 1)?;
    Ok(x as f64 / n as f64)
}

/// Estimates `w_j^2`: `X^(2) / N^(2)`.
pub fn est_omega_sq(x: u64, n: u64) -> Result<f64> {
    need(n, 2)?;
    Ok(falling(x, 2) / falling(n, 2))
}

/// Estimates `w_j^3`: `X^(3) / N^(3)`.
pub fn est_omega_cube(x: u64, n: u64) -> Result<f64> {
    need(n, 3)?;
    Ok(falling(x, 3) / falling(n, 3))
}

/// Estimates `w_j^4`: `X^(4) / N^(4)`.
pub fn est_omega_fourth(x: u64, n: u64) -> Result<f64> {
    need(n, 4)?;
    Ok(falling(x, 4) / falling(n, 4))
}

/// Estimates `w_j w_j'` for `j != j'`: `X_j X_j' / N^(2)`.
pub fn est_pair(xj: u64, xk: u64, n: u64) -> Result<f64> {
    need(n, 2)?;
    Ok((xj * xk) as f64 / falling(n, 2))
}

/// Estimates `w_j^2 w_j'^2` for `j != j'`: `X_j^(2) X_j'^(2) / N^(4)`.
pub fn est_pair_sq(xj: u64, xk: u64, n: u64) -> Result<f64> {
    need(n, 4)?;
    Ok(falling(xj, 2) * falling(xk, 2) / falling(n, 4))
}

/// Row-level aggregates of the moment estimators that the exact variance
/// estimator needs; every sum runs over the row's nonzeros only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMoments {
    pub total: u64,
    /// Estimate of `sum_j w_j^2`.
    pub s2: f64,
    /// Estimate of `sum_j w_j^3`.
    pub s3: f64,
    /// Estimate of `(sum_j w_j^2)^2 = sum_j w_j^4 + sum_{j != j'} w_j^2 w_j'^2`.
    pub s2_squared: f64,
}

impl RowMoments {
    /// `row` holds the nonzero `(col, count)` pairs of one row with total `n >= 4`.
    pub fn from_row<I: IntoIterator<Item = (usize, u64)>>(row: I, n: u64) -> Result<Self> {
        need(n, 4)?;
        let n2 = falling(n, 2);
        let n3 = falling(n, 3);
        let n4 = falling(n, 4);
        let mut f2 = 0.0;
        let mut f2_sq = 0.0;
        let mut f3 = 0.0;
        let mut f4 = 0.0;
        for (_, x) in row {
            let a = falling(x, 2);
            f2 += a;
            f2_sq += a * a;
            f3 += falling(x, 3);
            f4 += falling(x, 4);
        }
        Ok(Self {
            total: n,
            s2: f2 / n2,
            s3: f3 / n3,
            s2_squared: (f4 + (f2 * f2 - f2_sq)) / n4,
        })
    }

    /// Estimate of `tr(C^2)` for the one-draw covariance `C = diag(w) - w w'`,
    /// which equals `||w||^2 - 2 ||w||_3^3 + ||w||^4`.
    pub fn trace_cov_sq(&self) -> f64 {
        self.s2 - 2.0 * self.s3 + self.s2_squared
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom_pmf(n: u64, k: u64, w: f64) -> f64 {
        let mut c = 1.0;
        for t in 0..k {
            c *= (n - t) as f64 / (t + 1) as f64;
        }
        c * w.powi(k as i32) * (1.0 - w).powi((n - k) as i32)
    }

    fn binom_mean(n: u64, w: f64, f: impl Fn(u64) -> f64) -> f64 {
        (0..=n).map(|k| binom_pmf(n, k, w) * f(k)).sum()
    }

    #[test]
    fn boundary_values() {
        assert_eq!(est_omega_sq(5, 5).unwrap(), 1.0);
        assert_eq!(est_omega_sq(0, 5).unwrap(), 0.0);
        assert_eq!(est_omega_cube(2, 5).unwrap(), 0.0);
        assert_eq!(est_omega_cube(3, 3).unwrap(), 1.0);
        assert_eq!(est_omega_fourth(4, 4).unwrap(), 1.0);
        assert_eq!(est_omega_fourth(3, 9).unwrap(), 0.0);
        assert_eq!(est_pair(0, 3, 4).unwrap(), 0.0);
        assert_eq!(est_pair(1, 1, 2).unwrap(), 0.5);
        assert_eq!(est_pair_sq(1, 3, 4).unwrap(), 0.0);
        assert!((est_pair_sq(2, 2, 4).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn totals_too_small_are_rejected() {
        assert!(est_omega_sq(1, 1).is_err());
        assert!(est_omega_cube(1, 2).is_err());
        assert!(est_omega_fourth(1, 3).is_err());
        assert!(est_pair_sq(1, 1, 3).is_err());
    }

    #[test]
    fn binomial_enumeration_hits_targets() {
        let sq = binom_mean(2, 0.5, |x| est_omega_sq(x, 2).unwrap());
        assert!((sq - 0.25).abs() < 1e-15);
        let cube = binom_mean(3, 0.5, |x| est_omega_cube(x, 3).unwrap());
        assert!((cube - 0.125).abs() < 1e-15);
        let fourth = binom_mean(4, 0.5, |x| est_omega_fourth(x, 4).unwrap());
        assert!((fourth - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn quartic_falling_factorial_expansion() {
        for x in 0..12u64 {
            let xf = x as f64;
            let poly = xf.powi(4) - 6.0 * xf.powi(3) + 11.0 * xf * xf - 6.0 * xf;
            assert_eq!(falling(x, 4), poly);
        }
    }

    #[test]
    fn row_moments_match_termwise() {
        let row = [(0usize, 3u64), (2, 2), (5, 1)];
        let n = 6;
        let m = RowMoments::from_row(row, n).unwrap();
        let s2: f64 = row.iter().map(|&(_, x)| est_omega_sq(x, n).unwrap()).sum();
        let s3: f64 = row.iter().map(|&(_, x)| est_omega_cube(x, n).unwrap()).sum();
        let mut s22: f64 = row.iter().map(|&(_, x)| est_omega_fourth(x, n).unwrap()).sum();
        for a in &row {
            for b in &row {
                if a.0 != b.0 {
                    s22 += est_pair_sq(a.1, b.1, n).unwrap();
                }
            }
        }
        assert!((m.s2 - s2).abs() < 1e-15);
        assert!((m.s3 - s3).abs() < 1e-15);
        assert!((m.s2_squared - s22).abs() < 1e-15);
    }
}
