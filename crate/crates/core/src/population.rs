//! Population-level quantities computed from the true row PMFs.

use serde::{Deserialize, Serialize};

use crate::counts::{CountMatrix, GroupPartition};
use crate::error::{DelveError, Result};
use crate::stats::compensated_sum;

const PMF_TOL: f64 = 1e-12;

/// Ground truth for one dataset: row totals, row PMFs and group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub totals: Vec<u64>,
    /// Dense `n x p` row PMFs.
    pub omega: Vec<Vec<f64>>,
    pub groups: GroupPartition,
    /// Set when `omega` was estimated from counts rather than known.
    #[serde(default)]
    pub plugin: bool,
}

impl TrueParams {
    pub fn new(totals: Vec<u64>, omega: Vec<Vec<f64>>, groups: GroupPartition) -> Result<Self> {
        let n = totals.len();
        if omega.len() != n {
            return Err(DelveError::InvalidParameter(format!(
                "{} PMF rows for {n} totals",
                omega.len()
            )));
        }
        groups.check_rows(n)?;
        let p = omega.first().map_or(0, Vec::len);
        for (i, row) in omega.iter().enumerate() {
            if row.len() != p {
                return Err(DelveError::InvalidParameter(format!(
                    "PMF row {i} has length {}, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|&w| !(w >= 0.0)) {
                return Err(DelveError::InvalidParameter(format!(
                    "PMF row {i} has a negative or non-finite entry"
                )));
            }
            let s = compensated_sum(row.iter().copied());
            if (s - 1.0).abs() > PMF_TOL * (p.max(1) as f64) {
                return Err(DelveError::InvalidParameter(format!(
                    "PMF row {i} sums to {s}"
                )));
            }
        }
        if let Some(i) = totals.iter().position(|&t| t == 0) {
            return Err(DelveError::RowTooShort {
                row: i,
                total: 0,
                required: 1,
            });
        }
        Ok(Self {
            totals,
            omega,
            groups,
            plugin: false,
        })
    }

    /// Plug-in parameters `Omega_i = X_i / N_i`, flagged as such.
    pub fn plugin(x: &CountMatrix, g: &GroupPartition) -> Result<Self> {
        x.require_min_total(1)?;
        let omega = x
            .to_dense()
            .into_iter()
            .zip(x.row_totals())
            .map(|(row, &t)| row.into_iter().map(|v| v as f64 / t as f64).collect())
            .collect();
        let mut params = Self::new(x.row_totals().to_vec(), omega, g.clone())?;
        params.plugin = true;
        Ok(params)
    }

    pub fn n(&self) -> usize {
        self.totals.len()
    }

    pub fn p(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    pub fn k(&self) -> usize {
        self.groups.k()
    }

    pub fn total(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn group_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.k()];
        for (i, &t) in self.totals.iter().enumerate() {
            out[self.groups.label(i)] += t;
        }
        out
    }

    /// `M_kj = sum_{i in S_k} N_i Omega_ij`, the expected group column sums.
    pub fn expected_group_sums(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.p()]; self.k()];
        for (i, row) in self.omega.iter().enumerate() {
            let ni = self.totals[i] as f64;
            let acc = &mut out[self.groups.label(i)];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += ni * w;
            }
        }
        out
    }

    /// Group-mean PMFs `mu_k`.
    pub fn group_means(&self) -> Vec<Vec<f64>> {
        let totals = self.group_totals();
        self.expected_group_sums()
            .into_iter()
            .zip(totals)
            .map(|(row, t)| row.into_iter().map(|m| m / t as f64).collect())
            .collect()
    }

    /// Pooled PMF `mu`.
    pub fn pooled_mean(&self) -> Vec<f64> {
        let n = self.total() as f64;
        let mut out = vec![0.0; self.p()];
        for row in self.expected_group_sums() {
            for (a, m) in out.iter_mut().zip(row) {
                *a += m;
            }
        }
        out.iter_mut().for_each(|a| *a /= n);
        out
    }

    fn coef(&self) -> Vec<f64> {
        let n = self.total();
        self.group_totals()
            .into_iter()
            .map(|t| (n - t) as f64 / (t as f64 * n as f64))
            .collect()
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    compensated_sum(v.iter().map(|x| x * x))
}

fn norm3_cubed(v: &[f64]) -> f64 {
    compensated_sum(v.iter().map(|x| x.abs().powi(3)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// `rho^2 = sum_k T_k ||mu_k - mu||^2`.
pub fn rho_squared(params: &TrueParams) -> f64 {
    let mu = params.pooled_mean();
    let means = params.group_means();
    compensated_sum(params.group_totals().into_iter().zip(&means).map(|(t, mk)| {
        t as f64 * compensated_sum(mk.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)))
    }))
}

/// `omega_n^2 = rho^2 / (N ||mu||^2)`.
pub fn omega_sq(params: &TrueParams) -> Result<f64> {
    let mu_sq = norm_sq(&params.pooled_mean());
    if mu_sq <= 0.0 {
        return Err(DelveError::InvalidParameter("pooled PMF is zero".into()));
    }
    Ok(rho_squared(params) / (params.total() as f64 * mu_sq))
}

pub fn omega_n(params: &TrueParams) -> Result<f64> {
    omega_sq(params).map(f64::sqrt)
}

/// `SNR_n = rho^2 / sqrt(sum_k ||mu_k||^2)`.
pub fn snr(params: &TrueParams) -> f64 {
    let denom = compensated_sum(params.group_means().iter().map(|m| norm_sq(m)));
    rho_squared(params) / denom.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaComponents {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
}

impl ThetaComponents {
    pub fn total(&self) -> f64 {
        self.theta1 + self.theta2 + self.theta3 + self.theta4
    }

    /// The part that the variance estimator targets.
    pub fn null_part(&self) -> f64 {
        self.theta2 + self.theta3 + self.theta4
    }
}

/// Population variance components of the DELVE statistic.
pub fn theta_components(params: &TrueParams) -> Result<ThetaComponents> {
    if let Some(i) = params.totals.iter().position(|&t| t < 2) {
        return Err(DelveError::RowTooShort {
            row: i,
            total: params.totals[i],
            required: 2,
        });
    }
    let coef = params.coef();
    let mu = params.pooled_mean();
    let means = params.group_means();
    let group_totals = params.group_totals();

    let theta1 = 4.0
        * compensated_sum(group_totals.iter().zip(&means).map(|(&t, mk)| {
            t as f64
                * compensated_sum(
                    mk.iter()
                        .zip(&mu)
                        .map(|(&a, &b)| a * (a - b) * (a - b)),
                )
        }));

    let theta2 = 2.0
        * compensated_sum(params.omega.iter().enumerate().map(|(i, row)| {
            let c = coef[params.groups.label(i)];
            let ni = params.totals[i] as f64;
            c * c * ni * ni * ni / (ni - 1.0) * norm_sq(row)
        }));

    let m = params.expected_group_sums();
    let p = params.p();
    let n = params.total() as f64;
    let mut own_sq = vec![vec![0.0; p]; params.k()];
    for (i, row) in params.omega.iter().enumerate() {
        let ni = params.totals[i] as f64;
        let acc = &mut own_sq[params.groups.label(i)];
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += ni * ni * w * w;
        }
    }
    let theta3 = 2.0 / (n * n)
        * compensated_sum((0..p).map(|j| {
            let col: f64 = m.iter().map(|mk| mk[j]).sum();
            col * col - m.iter().map(|mk| mk[j] * mk[j]).sum::<f64>()
        }));
    let theta4 = 2.0
        * compensated_sum((0..params.k()).map(|k| {
            coef[k]
                * coef[k]
                * compensated_sum((0..p).map(|j| m[k][j] * m[k][j] - own_sq[k][j]))
        }));
    Ok(ThetaComponents {
        theta1,
        theta2,
        theta3,
        theta4,
    })
}

/// Regularity diagnostics `(alpha_n, beta_n)`.
pub fn alpha_beta(params: &TrueParams) -> (f64, f64) {
    let means = params.group_means();
    let totals: Vec<f64> = params.group_totals().iter().map(|&t| t as f64).collect();
    let sum_sq = compensated_sum(means.iter().map(|m| norm_sq(m)));
    let a1 = compensated_sum(means.iter().zip(&totals).map(|(m, t)| norm3_cubed(m) / t));
    let a2 = compensated_sum(means.iter().zip(&totals).map(|(m, t)| norm_sq(m) / (t * t)));
    let alpha = a1.max(a2) / (sum_sq * sum_sq);

    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (k, &tk) in totals.iter().enumerate() {
        let members = params.groups.members(k);
        let t2 = tk * tk;
        for &i in &members {
            let ni = params.totals[i] as f64;
            b1 += ni * ni * norm3_cubed(&params.omega[i]) / t2;
        }
        // ||Sigma_k||_F^2 through the within-group Gram matrix.
        let mut fro = 0.0;
        for &i in &members {
            for &m in &members {
                let g = dot(&params.omega[i], &params.omega[m]);
                fro += params.totals[i] as f64 * params.totals[m] as f64 * g * g;
            }
        }
        b2 += fro / t2;
    }
    let mu_sq = norm_sq(&params.pooled_mean());
    let beta = b1.max(b2) / (params.k() as f64 * mu_sq);
    (alpha, beta)
}

/// `DR = n^2 Nbar^2 / (K p)`.
pub fn dimension_ratio(n: f64, nbar: f64, k: f64, p: f64) -> f64 {
    n * n * nbar * nbar / (k * p)
}
