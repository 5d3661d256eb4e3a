//! Test statistics and variance estimators.
//!
//! Notation used below: `T_k` is the total count of group `k`, `N` the grand
//! total, `c_k = 1/T_k - 1/N`, `Y_kj` the column sums of group `k` and `C_j`
//! the column totals. Every cross-row double sum is rewritten in terms of
//! these aggregates so cost stays linear in the number of nonzeros.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{ColumnView, CountMatrix, GroupPartition};
use crate::error::{DelveError, Result};
use crate::moments::RowMoments;
use crate::stats::{normal_sf, pairwise_sum};

/// Columns per rayon task; small matrices stay on one thread.
const COLUMN_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Delve,
    DelvePlus,
    DelveExact,
    DelveKn,
    Anova,
    Lr,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Delve,
        Variant::DelvePlus,
        Variant::DelveExact,
        Variant::DelveKn,
        Variant::Anova,
        Variant::Lr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Delve => "delve",
            Variant::DelvePlus => "delve_plus",
            Variant::DelveExact => "delve_exact",
            Variant::DelveKn => "delve_kn",
            Variant::Anova => "anova",
            Variant::Lr => "lr",
        }
    }

    /// Whether the variant reports a normal-calibrated Z-score.
    pub fn is_normal_calibrated(&self) -> bool {
        !matches!(self, Variant::Anova | Variant::Lr)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DelveError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| DelveError::InvalidParameter(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub variant: Variant,
    pub statistic: f64,
    pub variance_estimate: Option<f64>,
    pub psi: Option<f64>,
    pub p_value: Option<f64>,
    /// Per-column contributions `T_j` for the active columns.
    pub per_coordinate: Option<Vec<(usize, f64)>>,
    pub weighted_statistic: Option<f64>,
}

impl TestResult {
    fn calibrated(variant: Variant, t: f64, v: f64) -> Self {
        let psi = z_score(t, v);
        Self {
            variant,
            statistic: t,
            variance_estimate: Some(v),
            psi: Some(psi),
            p_value: Some(normal_sf(psi)),
            per_coordinate: None,
            weighted_statistic: None,
        }
    }

    fn bare(variant: Variant, t: f64) -> Self {
        Self {
            variant,
            statistic: t,
            variance_estimate: None,
            psi: None,
            p_value: None,
            per_coordinate: None,
            weighted_statistic: None,
        }
    }
}

/// `T / sqrt(V)`, or 0 when `V <= 0`.
pub fn z_score(t: f64, v: f64) -> f64 {
    if v > 0.0 {
        t / v.sqrt()
    } else {
        0.0
    }
}

/// Inflated variance `V (1 + ||mu_hat|| T / sqrt(V))`.
pub fn vplus(t: f64, v: f64, mu_hat_norm: f64) -> f64 {
    v * (1.0 + mu_hat_norm * t / v.sqrt())
}

/// Z-score with the inflated variance. Falls back to the plain Z-score when
/// the inflation factor is not positive (strongly negative `T`).
pub fn psi_plus(t: f64, v: f64, mu_hat_norm: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let factor = 1.0 + mu_hat_norm * t / v.sqrt();
    if factor <= 0.0 {
        return z_score(t, v);
    }
    t / (v * factor).sqrt()
}

fn require_delve_rows(x: &CountMatrix, min: u64) -> Result<()> {
    x.require_min_total(min)
}

/// Shared column-wise view of `(X, g)` with group totals.
struct Prepared<'a> {
    x: &'a CountMatrix,
    g: &'a GroupPartition,
    cols: ColumnView,
    active: Vec<usize>,
    group_totals: Vec<u64>,
    total: u64,
    coef: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(x: &'a CountMatrix, g: &'a GroupPartition) -> Result<Self> {
        g.check_rows(x.n_rows())?;
        let mut group_totals = vec![0u64; g.k()];
        for (i, &t) in x.row_totals().iter().enumerate() {
            group_totals[g.label(i)] += t;
        }
        if let Some(group) = group_totals.iter().position(|&t| t == 0) {
            return Err(DelveError::ZeroGroupTotal { group });
        }
        let total: u64 = group_totals.iter().sum();
        let coef = group_totals
            .iter()
            .map(|&tk| (total - tk) as f64 / (tk as f64 * total as f64))
            .collect();
        let cols = x.columns();
        let active = (0..x.n_cols())
            .filter(|&j| !cols.is_empty_column(j))
            .collect();
        Ok(Self {
            x,
            g,
            cols,
            active,
            group_totals,
            total,
            coef,
        })
    }

    /// Runs `f` on every active column with a per-task group scratch,
    /// returning results in column order.
    fn map_columns<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, &mut GroupScratch) -> R + Sync,
    {
        let k = self.g.k();
        self.active
            .par_iter()
            .with_min_len(COLUMN_CHUNK)
            .map_init(|| GroupScratch::new(k), |s, &j| f(j, s))
            .collect()
    }

    /// Fills `s` with per-group sums of `value(row, count)` over column `j`.
    fn gather<V: Fn(usize, u64) -> f64>(&self, j: usize, s: &mut GroupScratch, value: V) {
        s.clear();
        for (i, x) in self.cols.column(j) {
            s.add(self.g.label(i), x, value(i, x));
        }
    }

    fn pooled_norm(&self) -> f64 {
        let n = self.total as f64;
        let sq: Vec<f64> = self
            .active
            .iter()
            .map(|&j| {
                let c: u64 = self.cols.column(j).map(|(_, x)| x).sum();
                let m = c as f64 / n;
                m * m
            })
            .collect();
        pairwise_sum(&sq).sqrt()
    }

    /// `sum_k T_k (mu_hat_kj - mu_hat_j)^2` for the gathered column, where
    /// groups absent from the column contribute `T_k mu_hat_j^2` in bulk.
    fn signal(&self, s: &GroupScratch) -> f64 {
        let c: u64 = s.touched.iter().map(|&k| s.y[k]).sum();
        let mj = c as f64 / self.total as f64;
        let mut present_total = 0u64;
        let mut acc = 0.0;
        for &k in &s.touched {
            let tk = self.group_totals[k];
            present_total += tk;
            let d = s.y[k] as f64 / tk as f64 - mj;
            acc += tk as f64 * d * d;
        }
        acc + (self.total - present_total) as f64 * mj * mj
    }
}

/// Per-group accumulators for one column, reset between columns.
struct GroupScratch {
    y: Vec<u64>,
    sq: Vec<u128>,
    w: Vec<f64>,
    w_sq: Vec<f64>,
    touched: Vec<usize>,
}

impl GroupScratch {
    fn new(k: usize) -> Self {
        Self {
            y: vec![0; k],
            sq: vec![0; k],
            w: vec![0.0; k],
            w_sq: vec![0.0; k],
            touched: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &k in &self.touched {
            self.y[k] = 0;
            self.sq[k] = 0;
            self.w[k] = 0.0;
            self.w_sq[k] = 0.0;
        }
        self.touched.clear();
    }

    fn add(&mut self, k: usize, x: u64, w: f64) {
        if self.y[k] == 0 {
            self.touched.push(k);
        }
        self.y[k] += x;
        self.sq[k] += (x as u128) * (x as u128);
        self.w[k] += w;
        self.w_sq[k] += w * w;
    }
}

/// `sum_{i != m} a(g_i, g_m) w_i w_m` over the rows of one gathered column,
/// with `a = 2 c_k^2` within group `k` and `2 / N^2` across groups.
fn weighted_pair_sum(prep: &Prepared<'_>, s: &GroupScratch) -> f64 {
    let n = prep.total as f64;
    let mut within = 0.0;
    let mut total = 0.0;
    let mut group_sq = 0.0;
    for &k in &s.touched {
        let wk = s.w[k];
        within += prep.coef[k] * prep.coef[k] * (wk * wk - s.w_sq[k]);
        total += wk;
        group_sq += wk * wk;
    }
    2.0 * within + 2.0 * (total * total - group_sq) / (n * n)
}

/// The DELVE statistic with its per-column contributions.
pub fn delve_t(x: &CountMatrix, g: &GroupPartition) -> Result<(f64, Vec<(usize, f64)>)> {
    require_delve_rows(x, 2)?;
    let prep = Prepared::new(x, g)?;
    let (t, per) = t_from(&prep);
    Ok((t, per))
}

fn t_from(prep: &Prepared<'_>) -> (f64, Vec<(usize, f64)>) {
    let totals = prep.x.row_totals();
    let tj = prep.map_columns(|j, s| {
        prep.gather(j, s, |i, x| {
            let ni = totals[i];
            (x * (ni - x)) as f64 / (ni - 1) as f64
        });
        let correction: f64 = s.touched.iter().map(|&k| prep.coef[k] * s.w[k]).sum();
        prep.signal(s) - correction
    });
    let t = pairwise_sum(&tj);
    (t, prep.active.iter().copied().zip(tj).collect())
}

/// Three-term variance estimator of the DELVE statistic.
pub fn delve_v(x: &CountMatrix, g: &GroupPartition) -> Result<f64> {
    require_delve_rows(x, 2)?;
    let prep = Prepared::new(x, g)?;
    Ok(v_from(&prep))
}

fn v_from(prep: &Prepared<'_>) -> f64 {
    let totals = prep.x.row_totals();
    let diag: Vec<f64> = (0..prep.x.n_rows())
        .map(|i| {
            let ni = totals[i];
            let r: u64 = prep.x.row(i).map(|(_, x)| x * x - x).sum();
            let c = prep.coef[prep.g.label(i)];
            let nf = ni as f64;
            let d = (ni - 1) as f64;
            2.0 * c * c * nf * nf * r as f64 / (d * d)
        })
        .collect();
    let n = prep.total as f64;
    let cross = prep.map_columns(|j, s| {
        prep.gather(j, s, |_, _| 0.0);
        let mut col = 0u128;
        let mut group_sq = 0u128;
        let mut within = 0.0;
        for &k in &s.touched {
            let y = s.y[k] as u128;
            col += y;
            group_sq += y * y;
            let c = prep.coef[k];
            within += c * c * (y * y - s.sq[k]) as f64;
        }
        2.0 * (col * col - group_sq) as f64 / (n * n) + 2.0 * within
    });
    pairwise_sum(&diag) + pairwise_sum(&cross)
}

/// Unbiased estimator of the null variance of the DELVE statistic built from
/// row-level moment estimators. Needs every row total to be at least 4.
pub fn exact_vtilde(x: &CountMatrix, g: &GroupPartition) -> Result<f64> {
    require_delve_rows(x, 4)?;
    let prep = Prepared::new(x, g)?;
    vtilde_from(&prep)
}

fn vtilde_from(prep: &Prepared<'_>) -> Result<f64> {
    let x = prep.x;
    let totals = x.row_totals();
    let n = x.n_rows();

    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let m = RowMoments::from_row(x.row(i), totals[i])?;
        let c = prep.coef[prep.g.label(i)];
        let ni = totals[i] as f64;
        diag.push(2.0 * c * c * ni * ni * ni / (ni - 1.0) * m.trace_cov_sq());
    }

    // Separable part of the cross-row terms: with u = X(N-X)/(N-1) and
    // q = X^2/(N-1), sum_{i != m} a_im sum_j (u_ij u_mj - q_ij q_mj).
    let separable = prep.map_columns(|j, s| {
        prep.gather(j, s, |i, xv| {
            let ni = totals[i];
            (xv * (ni - xv)) as f64 / (ni - 1) as f64
        });
        let u_part = weighted_pair_sum(prep, s);
        prep.gather(j, s, |i, xv| (xv * xv) as f64 / (totals[i] - 1) as f64);
        u_part - weighted_pair_sum(prep, s)
    });

    // Non-separable part: sum_{i != m} a_im (x_i . x_m)^2 / ((N_i-1)(N_m-1)),
    // from sparse row-by-row Gram products over rows m > i.
    let inv_n2 = 1.0 / (prep.total as f64 * prep.total as f64);
    let gram: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u64; n], Vec::<usize>::new()),
            |(dots, touched), i| {
                for (j, xij) in x.row(i) {
                    for (m, xmj) in prep.cols.column(j) {
                        if m <= i {
                            continue;
                        }
                        if dots[m] == 0 {
                            touched.push(m);
                        }
                        dots[m] += xij * xmj;
                    }
                }
                touched.sort_unstable();
                let gi = prep.g.label(i);
                let di = (totals[i] - 1) as f64;
                let mut acc = 0.0;
                for &m in touched.iter() {
                    let gm = prep.g.label(m);
                    let a = if gi == gm {
                        2.0 * prep.coef[gi] * prep.coef[gi]
                    } else {
                        2.0 * inv_n2
                    };
                    let d = dots[m] as f64;
                    acc += a * d * d / (di * (totals[m] - 1) as f64);
                    dots[m] = 0;
                }
                touched.clear();
                // ordered pairs (i, m) and (m, i)
                2.0 * acc
            },
        )
        .collect();

    Ok(pairwise_sum(&diag) + pairwise_sum(&separable) + pairwise_sum(&gram))
}

/// Frequency-weighted statistic `sum_j T_j / max(1/p, mu_hat_j)`.
pub fn weighted_t(x: &CountMatrix, g: &GroupPartition) -> Result<f64> {
    require_delve_rows(x, 2)?;
    let prep = Prepared::new(x, g)?;
    let (_, per) = t_from(&prep);
    Ok(weighted_from(&prep, &per))
}

fn weighted_from(prep: &Prepared<'_>, per: &[(usize, f64)]) -> f64 {
    let floor = 1.0 / prep.x.n_cols() as f64;
    let n = prep.total as f64;
    let terms: Vec<f64> = per
        .iter()
        .map(|&(j, tj)| {
            let c: u64 = prep.cols.column(j).map(|(_, x)| x).sum();
            tj / floor.max(c as f64 / n)
        })
        .collect();
    pairwise_sum(&terms)
}

/// Naive plug-in statistic `sum_k T_k ||mu_hat_k - mu_hat||^2`.
pub fn anova_t(x: &CountMatrix, g: &GroupPartition) -> Result<f64> {
    let prep = Prepared::new(x, g)?;
    let terms = prep.map_columns(|j, s| {
        prep.gather(j, s, |_, _| 0.0);
        prep.signal(s)
    });
    Ok(pairwise_sum(&terms))
}

/// Likelihood-ratio statistic `sum_k T_k sum_j mu_hat_kj log(mu_hat_kj / mu_hat_j)`,
/// with `0 log(0/0) = 0`.
pub fn lr_t(x: &CountMatrix, g: &GroupPartition) -> Result<f64> {
    let prep = Prepared::new(x, g)?;
    let n = prep.total as f64;
    let terms = prep.map_columns(|j, s| {
        prep.gather(j, s, |_, _| 0.0);
        let c: u64 = s.touched.iter().map(|&k| s.y[k]).sum();
        let log_pooled = (c as f64 / n).ln();
        s.touched
            .iter()
            .map(|&k| {
                let y = s.y[k] as f64;
                y * ((y / prep.group_totals[k] as f64).ln() - log_pooled)
            })
            .sum::<f64>()
    });
    Ok(pairwise_sum(&terms))
}

/// Statistic and variance for the one-row-per-group case, computed row by row.
/// The variance keeps only the within-row term, which dominates when every
/// group is a single row.
pub fn delve_kn(x: &CountMatrix) -> Result<TestResult> {
    require_delve_rows(x, 2)?;
    let totals = x.row_totals();
    let total = x.total();
    let n = total as f64;
    let mut col_totals = vec![0u64; x.n_cols()];
    for i in 0..x.n_rows() {
        for (j, v) in x.row(i) {
            col_totals[j] += v;
        }
    }
    // sum_i sum_j (X_ij - N_i mu_j)^2 / N_i = sum_i sum_j X_ij^2 / N_i - N ||mu||^2
    let baseline: Vec<f64> = col_totals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64) * (c as f64) / n)
        .collect();
    let mut rows = Vec::with_capacity(x.n_rows());
    let mut var_terms = Vec::with_capacity(x.n_rows());
    for i in 0..x.n_rows() {
        let ni = totals[i];
        let nf = ni as f64;
        let d = (ni - 1) as f64;
        let shrink = (total - ni) as f64 / n;
        let mut sq = 0u64;
        let mut corr = 0u64;
        let mut r = 0u64;
        for (_, v) in x.row(i) {
            sq += v * v;
            corr += v * (ni - v);
            r += v * v - v;
        }
        rows.push(sq as f64 / nf - shrink * corr as f64 / (nf * d));
        let c = (total - ni) as f64 / (nf * n);
        var_terms.push(2.0 * c * c * nf * nf * r as f64 / (d * d));
    }
    let t = pairwise_sum(&rows) - pairwise_sum(&baseline);
    let v = pairwise_sum(&var_terms);
    Ok(TestResult::calibrated(Variant::DelveKn, t, v))
}

/// Closed-form two-sample statistic and variance for samples `X` (rows of
/// group one) and `G` (rows of group two).
pub fn two_sample(xa: &CountMatrix, xb: &CountMatrix) -> Result<TestResult> {
    if xa.n_rows() == 0 || xb.n_rows() == 0 {
        return Err(DelveError::InvalidParameter(
            "both samples need at least one row".into(),
        ));
    }
    if xa.n_cols() != xb.n_cols() {
        return Err(DelveError::InvalidParameter(format!(
            "column counts differ: {} vs {}",
            xa.n_cols(),
            xb.n_cols()
        )));
    }
    require_delve_rows(xa, 2)?;
    require_delve_rows(xb, 2).map_err(|e| match e {
        DelveError::RowTooShort {
            row,
            total,
            required,
        } => DelveError::RowTooShort {
            row: row + xa.n_rows(),
            total,
            required,
        },
        other => other,
    })?;
    let p = xa.n_cols();
    let side = |m: &CountMatrix| {
        let mut cols = vec![0u64; p];
        let mut within_sq = vec![0u128; p];
        let mut corr = 0.0;
        let mut diag = 0.0;
        for i in 0..m.n_rows() {
            let ni = m.row_total(i);
            let d = (ni - 1) as f64;
            let mut r = 0u64;
            let mut c = 0u64;
            for (j, v) in m.row(i) {
                cols[j] += v;
                within_sq[j] += (v as u128) * (v as u128);
                r += v * v - v;
                c += v * (ni - v);
            }
            corr += c as f64 / d;
            let nf = ni as f64;
            diag += nf * nf * r as f64 / (d * d);
        }
        let own: u128 = cols
            .iter()
            .zip(&within_sq)
            .map(|(&y, &s)| (y as u128) * (y as u128) - s)
            .sum();
        (cols, corr, diag + own as f64)
    };
    let (ya, corr_a, own_a) = side(xa);
    let (yb, corr_b, own_b) = side(xb);
    let a = xa.total() as f64;
    let b = xb.total() as f64;
    let ab = a + b;

    let dist: Vec<f64> = ya
        .iter()
        .zip(&yb)
        .filter(|(&u, &w)| u > 0 || w > 0)
        .map(|(&u, &w)| {
            let d = u as f64 / a - w as f64 / b;
            d * d
        })
        .collect();
    let t = a * b / ab * (pairwise_sum(&dist) - corr_a / (a * a) - corr_b / (b * b));

    let between: u128 = ya
        .iter()
        .zip(&yb)
        .map(|(&u, &w)| (u as u128) * (w as u128))
        .sum();
    let v = 4.0 * between as f64 / (ab * ab)
        + 2.0 * b * b * own_a / (a * a * ab * ab)
        + 2.0 * a * a * own_b / (b * b * ab * ab);
    Ok(TestResult::calibrated(Variant::Delve, t, v))
}

/// Runs one variant on `(X, g)`.
pub fn delve_test(x: &CountMatrix, g: &GroupPartition, variant: Variant) -> Result<TestResult> {
    g.check_rows(x.n_rows())?;
    match variant {
        Variant::Delve | Variant::DelvePlus | Variant::DelveExact => {
            let min = if variant == Variant::DelveExact { 4 } else { 2 };
            require_delve_rows(x, min)?;
            let prep = Prepared::new(x, g)?;
            let (t, per) = t_from(&prep);
            let mut res = match variant {
                Variant::Delve => TestResult::calibrated(variant, t, v_from(&prep)),
                Variant::DelvePlus => {
                    let v = v_from(&prep);
                    let norm = prep.pooled_norm();
                    let psi = psi_plus(t, v, norm);
                    let reported = if v > 0.0 && 1.0 + norm * t / v.sqrt() > 0.0 {
                        vplus(t, v, norm)
                    } else {
                        v
                    };
                    TestResult {
                        variance_estimate: Some(reported),
                        psi: Some(psi),
                        p_value: Some(normal_sf(psi)),
                        ..TestResult::calibrated(variant, t, v)
                    }
                }
                _ => TestResult::calibrated(variant, t, vtilde_from(&prep)?),
            };
            res.per_coordinate = Some(per);
            Ok(res)
        }
        Variant::DelveKn => {
            if !g.is_singletons() {
                return Err(DelveError::VariantPrecondition(format!(
                    "delve_kn needs one row per group, got K = {} for n = {}",
                    g.k(),
                    g.len()
                )));
            }
            delve_kn(x)
        }
        Variant::Anova => Ok(TestResult::bare(variant, anova_t(x, g)?)),
        Variant::Lr => Ok(TestResult::bare(variant, lr_t(x, g)?)),
    }
}

/// Like [`delve_test`], additionally filling in the frequency-weighted statistic.
pub fn delve_test_weighted(
    x: &CountMatrix,
    g: &GroupPartition,
    variant: Variant,
) -> Result<TestResult> {
    let mut res = delve_test(x, g, variant)?;
    res.weighted_statistic = Some(weighted_t(x, g)?);
    Ok(res)
}
