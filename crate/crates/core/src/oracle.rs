//! Exact expectations by enumerating every joint multinomial outcome.

use serde::{Deserialize, Serialize};

use crate::counts::CountMatrix;
use crate::error::{DelveError, Result};
use crate::estimators::{delve_t, delve_v, exact_vtilde};
use crate::population::TrueParams;
use crate::stats::CompensatedSum;

/// Largest joint outcome space the oracle will walk.
pub const STATE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatistic {
    T,
    V,
    Vtilde,
}

/// All compositions of `total` into `parts` nonnegative parts.
pub fn compositions(total: u64, parts: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut cur = vec![0u64; parts];
    fn rec(pos: usize, left: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[pos] = v;
            rec(pos + 1, left - v, cur, out);
        }
    }
    if parts == 0 {
        return out;
    }
    rec(0, total, &mut cur, &mut out);
    out
}

fn binom(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for t in 0..k {
        c = c * (n - t) as f64 / (t + 1) as f64;
    }
    c
}

/// Number of joint outcomes, `prod_i C(N_i + p - 1, p - 1)`.
pub fn state_space_size(params: &TrueParams) -> f64 {
    let p = params.p() as u64;
    params
        .totals
        .iter()
        .map(|&n| binom(n + p - 1, p - 1))
        .product()
}

/// Multinomial probability of `x` under `omega`, evaluated in log space.
fn multinomial_prob(x: &[u64], omega: &[f64]) -> f64 {
    let n: u64 = x.iter().sum();
    let mut log_p = ln_factorial(n);
    for (&xj, &w) in x.iter().zip(omega) {
        if xj == 0 {
            continue;
        }
        if w <= 0.0 {
            return 0.0;
        }
        log_p += xj as f64 * w.ln() - ln_factorial(xj);
    }
    log_p.exp()
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|t| (t as f64).ln()).sum()
}

/// Outcomes of one row with positive probability.
fn row_outcomes(total: u64, omega: &[f64]) -> Vec<(Vec<u64>, f64)> {
    compositions(total, omega.len())
        .into_iter()
        .map(|x| {
            let pr = multinomial_prob(&x, omega);
            (x, pr)
        })
        .filter(|(_, pr)| *pr > 0.0)
        .collect()
}

/// Calls `f(X, prob)` for every joint outcome of positive probability.
pub fn for_each_outcome<F>(params: &TrueParams, mut f: F) -> Result<()>
where
    F: FnMut(&CountMatrix, f64) -> Result<()>,
{
    let size = state_space_size(params);
    if size > STATE_LIMIT {
        return Err(DelveError::StateSpaceTooLarge {
            size,
            limit: STATE_LIMIT,
        });
    }
    let rows: Vec<Vec<(Vec<u64>, f64)>> = params
        .omega
        .iter()
        .zip(&params.totals)
        .map(|(w, &n)| row_outcomes(n, w))
        .collect();
    let n = rows.len();
    let p = params.p();
    let mut idx = vec![0usize; n];
    loop {
        let mut prob = 1.0;
        let mut triples = Vec::new();
        for (i, &r) in idx.iter().enumerate() {
            let (x, pr) = &rows[i][r];
            prob *= pr;
            triples.extend(
                x.iter()
                    .enumerate()
                    .filter(|&(_, &v)| v > 0)
                    .map(|(j, &v)| (i, j, v)),
            );
        }
        let x = CountMatrix::from_triples(&triples, n, p)?;
        f(&x, prob)?;

        // odometer increment
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < rows[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// `E[f(X)]` and `Var(f(X))` over the exact outcome distribution.
pub fn oracle_moments<F>(params: &TrueParams, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(&CountMatrix) -> Result<f64>,
{
    let mut values = Vec::new();
    for_each_outcome(params, |x, pr| {
        values.push((f(x)?, pr));
        Ok(())
    })?;
    let mut mean = CompensatedSum::default();
    for &(v, pr) in &values {
        mean.add(v * pr);
    }
    let mean = mean.value();
    let mut var = CompensatedSum::default();
    for &(v, pr) in &values {
        var.add((v - mean) * (v - mean) * pr);
    }
    Ok((mean, var.value()))
}

pub fn oracle_expectation<F>(params: &TrueParams, f: F) -> Result<f64>
where
    F: FnMut(&CountMatrix) -> Result<f64>,
{
    oracle_moments(params, f).map(|(m, _)| m)
}

/// Exact expectation of `T`, `V` or the exact variance estimator.
pub fn oracle_expected_statistic(params: &TrueParams, stat: OracleStatistic) -> Result<f64> {
    let g = &params.groups;
    match stat {
        OracleStatistic::T => oracle_expectation(params, |x| delve_t(x, g).map(|r| r.0)),
        OracleStatistic::V => oracle_expectation(params, |x| delve_v(x, g)),
        OracleStatistic::Vtilde => oracle_expectation(params, |x| exact_vtilde(x, g)),
    }
}

/// Exact variance of `T`.
pub fn oracle_variance_t(params: &TrueParams) -> Result<f64> {
    let g = &params.groups;
    oracle_moments(params, |x| delve_t(x, g).map(|r| r.0)).map(|(_, v)| v)
}

/// Fixed suite of tiny instances (n <= 3, p <= 3, N_i <= 5) mixing null and
/// alternative configurations, used by the identity checks.
pub fn tiny_suite() -> Vec<(&'static str, TrueParams)> {
    use crate::counts::GroupPartition;
    let mk = |totals: Vec<u64>, omega: Vec<Vec<f64>>, labels: Vec<usize>| {
        TrueParams::new(totals, omega, GroupPartition::from_labels(labels).unwrap()).unwrap()
    };
    // group 0 mixes two PMFs; group 1 holds their count-weighted mean
    let (a, b) = ([0.6, 0.1, 0.3], [0.2, 0.5, 0.3]);
    let mixed: Vec<f64> = (0..3).map(|j| (3.0 * a[j] + 2.0 * b[j]) / 5.0).collect();
    vec![
        ("null two rows N=2", mk(vec![2, 2], vec![vec![0.5, 0.5]; 2], vec![0, 1])),
        (
            "alt two rows N=2",
            mk(vec![2, 2], vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![0, 1]),
        ),
        (
            "alt three rows K=2",
            mk(
                vec![3, 2, 4],
                vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4]],
                vec![0, 0, 1],
            ),
        ),
        (
            "null one row per group",
            mk(vec![2, 3, 3], vec![vec![0.2, 0.3, 0.5]; 3], vec![0, 1, 2]),
        ),
        (
            "null heterogeneous within group",
            mk(vec![3, 2, 5], vec![a.to_vec(), b.to_vec(), mixed.clone()], vec![0, 0, 1]),
        ),
        ("null N=4 two rows", mk(vec![4, 4], vec![vec![0.5, 0.5]; 2], vec![0, 1])),
        (
            "null N=4,5 three rows",
            mk(vec![4, 5, 4], vec![vec![0.3, 0.3, 0.4]; 3], vec![0, 1, 1]),
        ),
        (
            "null N=4,5 heterogeneous",
            mk(
                vec![5, 4, 5],
                vec![vec![0.7, 0.3], vec![0.55, 0.45], vec![0.4, 0.6]],
                vec![0, 1, 0],
            ),
        ),
        (
            "alt N=4,5 one row per group",
            mk(
                vec![4, 5, 5],
                vec![vec![0.6, 0.2, 0.2], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]],
                vec![0, 1, 2],
            ),
        ),
    ]
}
