//! Monte-Carlo runner, empirical thresholds and pairwise group comparisons.
//!
//! Replicate `r` always uses stream `r` of the run seed, and results are
//! collected in replicate order, so reports do not depend on the number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{CountMatrix, GroupPartition};
use crate::error::{DelveError, Result};
use crate::estimators::{delve_test, TestResult, Variant};
use crate::simgen::{Hypothesis, SimConfig};
use crate::stats::{pairwise_sum, upper_critical, upper_quantile, Summary};

/// Streams used for threshold calibration start here, away from replicate streams.
pub const THRESHOLD_STREAM_BASE: u64 = 1 << 62;

/// Levels at which every report tabulates rejection rates.
pub const REPORT_LEVELS: [f64; 3] = [0.1, 0.05, 0.01];

/// Runs `f` on a pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DelveError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Evaluates `f` on replicates `start..start+reps` in parallel, returning the
/// results in replicate order or the error of the lowest failing replicate.
fn run_replicates<T, F>(start: u64, reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let out: Vec<Result<T>> = (start..start + reps).into_par_iter().map(&f).collect();
    out.into_iter()
        .enumerate()
        .map(|(r, res)| {
            res.map_err(|e| DelveError::Replicate {
                index: start + r as u64,
                source: Box::new(e),
            })
        })
        .collect()
}

/// The value a variant contributes per replicate: the Z-score when the
/// variant is normal-calibrated, the raw statistic otherwise.
pub fn replicate_value(res: &TestResult) -> f64 {
    res.psi.unwrap_or(res.statistic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub level: f64,
    pub threshold: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSamples {
    pub variant: Variant,
    /// `psi` for normal-calibrated variants, the statistic otherwise.
    pub values: Vec<f64>,
    pub summary: Summary,
    /// Normal critical values; empty for uncalibrated variants.
    pub rejection_rates: Vec<RejectionRate>,
}

impl VariantSamples {
    fn new(variant: Variant, values: Vec<f64>) -> Self {
        let summary = Summary::of(&values);
        let rejection_rates = if variant.is_normal_calibrated() {
            REPORT_LEVELS
                .iter()
                .map(|&level| {
                    let threshold = upper_critical(level);
                    RejectionRate {
                        level,
                        threshold,
                        rate: rejection_rate(&values, threshold),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            variant,
            values,
            summary,
            rejection_rates,
        }
    }
}

pub fn rejection_rate(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub config: SimConfig,
    pub seed: u64,
    pub reps: u64,
    pub variants: Vec<VariantSamples>,
}

impl MCReport {
    pub fn samples(&self, variant: Variant) -> Option<&VariantSamples> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

/// Draws `reps` datasets from `cfg` and evaluates every variant on each.
pub fn run_simulation(cfg: &SimConfig, reps: u64, variants: &[Variant]) -> Result<MCReport> {
    if reps == 0 {
        return Err(DelveError::InvalidParameter("reps must be at least 1".into()));
    }
    cfg.validate()?;
    let rows = run_replicates(0, reps, |r| {
        let draw = cfg.draw(r)?;
        variants
            .iter()
            .map(|&v| delve_test(&draw.counts, &draw.groups, v).map(|res| replicate_value(&res)))
            .collect::<Result<Vec<f64>>>()
    })?;
    let variants = variants
        .iter()
        .enumerate()
        .map(|(c, &v)| VariantSamples::new(v, rows.iter().map(|row| row[c]).collect()))
        .collect();
    Ok(MCReport {
        config: cfg.clone(),
        seed: cfg.seed,
        reps,
        variants,
    })
}

/// Null-hypothesis run of `cfg`.
pub fn run_null_calibration(cfg: &SimConfig, reps: u64, variants: &[Variant]) -> Result<MCReport> {
    run_simulation(&cfg.clone().with_hypothesis(Hypothesis::Null), reps, variants)
}

/// `(1 - level)` empirical quantile of `stat` over `reps` null draws of `cfg`,
/// taken from the threshold streams.
pub fn empirical_threshold<F>(stat: F, cfg: &SimConfig, reps: u64, level: f64) -> Result<f64>
where
    F: Fn(&CountMatrix, &GroupPartition) -> Result<f64> + Sync,
{
    if reps < 100 {
        return Err(DelveError::InvalidParameter(format!(
            "empirical thresholds need at least 100 replicates, got {reps}"
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(DelveError::InvalidParameter(format!("level {level} is outside (0, 1]")));
    }
    let null = cfg.clone().with_hypothesis(Hypothesis::Null);
    null.validate()?;
    let values = run_replicates(THRESHOLD_STREAM_BASE, reps, |r| {
        let d = null.draw(r)?;
        stat(&d.counts, &d.groups)
    })?;
    Ok(upper_quantile(&values, level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub signal: f64,
    pub variant: Variant,
    pub threshold: Option<f64>,
    pub reps: u64,
    pub rejections: Option<u64>,
    pub power: Option<f64>,
    pub mean_value: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub config: SimConfig,
    pub level: f64,
    pub rows: Vec<PowerRow>,
}

/// Default signal grid: 10 equally spaced points from 0 to 12.
pub fn default_grid() -> Vec<f64> {
    (0..10).map(|i| 12.0 * i as f64 / 9.0).collect()
}

/// Rejection rate of each variant at each signal level. Normal-calibrated
/// variants reject when `psi > z_level`; the others use an empirical null
/// threshold. A signal level whose design is infeasible for some replicate is
/// skipped with a warning in its row.
pub fn run_power_curve(
    cfg: &SimConfig,
    grid: &[f64],
    reps: u64,
    level: f64,
    variants: &[Variant],
    threshold_reps: u64,
) -> Result<PowerCurve> {
    if grid.is_empty() {
        return Err(DelveError::InvalidParameter("signal grid is empty".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(DelveError::InvalidParameter(format!("level {level} is outside (0, 1)")));
    }
    if reps == 0 {
        return Err(DelveError::InvalidParameter("reps must be at least 1".into()));
    }
    if cfg.design.signal_name() == "none" {
        return Err(DelveError::InvalidParameter(format!(
            "design {} has no signal parameter to sweep",
            cfg.design.as_str()
        )));
    }
    let thresholds = variants
        .iter()
        .map(|&v| {
            if v.is_normal_calibrated() {
                Ok(upper_critical(level))
            } else {
                empirical_threshold(
                    |x, g| delve_test(x, g, v).map(|r| r.statistic),
                    cfg,
                    threshold_reps,
                    level,
                )
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut rows = Vec::new();
    for &signal in grid {
        let point = cfg.clone().with_hypothesis(Hypothesis::Alt).with_signal(signal);
        let outcome = point.validate().and_then(|_| {
            run_replicates(0, reps, |r| {
                let d = point.draw(r)?;
                variants
                    .iter()
                    .map(|&v| delve_test(&d.counts, &d.groups, v).map(|res| replicate_value(&res)))
                    .collect::<Result<Vec<f64>>>()
            })
        });
        match outcome {
            Ok(values) => {
                for (c, &v) in variants.iter().enumerate() {
                    let col: Vec<f64> = values.iter().map(|row| row[c]).collect();
                    let rejections = col.iter().filter(|&&x| x > thresholds[c]).count() as u64;
                    rows.push(PowerRow {
                        signal,
                        variant: v,
                        threshold: Some(thresholds[c]),
                        reps,
                        rejections: Some(rejections),
                        power: Some(rejections as f64 / reps as f64),
                        mean_value: Some(pairwise_sum(&col) / reps as f64),
                        warning: None,
                    });
                }
            }
            Err(e) if is_infeasible(&e) => {
                for &v in variants {
                    rows.push(PowerRow {
                        signal,
                        variant: v,
                        threshold: None,
                        reps,
                        rejections: None,
                        power: None,
                        mean_value: None,
                        warning: Some(format!("skipped: {e}")),
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PowerCurve {
        config: cfg.clone(),
        level,
        rows,
    })
}

fn is_infeasible(e: &DelveError) -> bool {
    match e {
        DelveError::Infeasible(_) => true,
        DelveError::Replicate { source, .. } => is_infeasible(source),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseZMatrix {
    pub labels: Vec<String>,
    /// Symmetric; the diagonal and failed pairs are `None`.
    pub values: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

/// Two-group Z-score for every unordered pair of groups, each computed on the
/// rows of the two groups only. Failed or degenerate pairs (non-positive
/// variance estimate) are left empty and noted in `warnings`.
pub fn pairwise_zscores(
    x: &CountMatrix,
    g: &GroupPartition,
    labels: &[String],
    variant: Variant,
) -> Result<PairwiseZMatrix> {
    g.check_rows(x.n_rows())?;
    let k = g.k();
    if k < 2 {
        return Err(DelveError::InvalidParameter("pairwise comparison needs K >= 2".into()));
    }
    if labels.len() != k {
        return Err(DelveError::InvalidParameter(format!(
            "{} labels for {k} groups",
            labels.len()
        )));
    }
    if !matches!(variant, Variant::Delve | Variant::DelvePlus | Variant::DelveExact) {
        return Err(DelveError::VariantPrecondition(format!(
            "pairwise comparison needs delve, delve_plus or delve_exact, got {variant}"
        )));
    }
    let members: Vec<Vec<usize>> = (0..k).map(|c| g.members(c)).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let results: Vec<std::result::Result<f64, String>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let rows: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let sub = x.select_rows(&rows);
            let sub_labels = rows.iter().map(|&i| usize::from(g.label(i) == b)).collect();
            let sub_g = GroupPartition::new(sub_labels, 2).map_err(|e| e.to_string())?;
            let res = delve_test(&sub, &sub_g, variant).map_err(|e| e.to_string())?;
            match res.variance_estimate {
                Some(v) if v > 0.0 => Ok(res.psi.unwrap_or(0.0)),
                _ => Err("variance estimate is not positive".to_string()),
            }
        })
        .collect();
    let mut values = vec![vec![None; k]; k];
    let mut warnings = Vec::new();
    for (&(a, b), res) in pairs.iter().zip(results) {
        match res {
            Ok(z) => {
                values[a][b] = Some(z);
                values[b][a] = Some(z);
            }
            Err(msg) => warnings.push(format!("{} vs {}: {msg}", labels[a], labels[b])),
        }
    }
    Ok(PairwiseZMatrix {
        labels: labels.to_vec(),
        values,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig::experiment1(20, 30, 4, 5, 10, 0.5).with_seed(21)
    }

    #[test]
    fn single_replicate_report() {
        let r = run_null_calibration(&small_cfg(), 1, &[Variant::Delve]).unwrap();
        assert_eq!(r.variants[0].values.len(), 1);
        assert_eq!(r.reps, 1);
    }

    #[test]
    fn reports_repeat_exactly_across_thread_counts() {
        let variants = [Variant::Delve, Variant::DelvePlus, Variant::Anova];
        let a = with_threads(1, || run_null_calibration(&small_cfg(), 40, &variants)).unwrap().unwrap();
        let b = with_threads(4, || run_null_calibration(&small_cfg(), 40, &variants)).unwrap().unwrap();
        assert_eq!(a, b);
        assert!(a.variants.iter().all(|v| v.rejection_rates.iter().all(|r| (0.0..=1.0).contains(&r.rate))));
        assert!(a.samples(Variant::Anova).unwrap().rejection_rates.is_empty());
    }

    #[test]
    fn generator_errors_name_the_replicate() {
        let cfg = SimConfig::experiment1(20, 30, 4, 1, 1, 0.5).with_seed(1);
        let err = run_null_calibration(&cfg, 5, &[Variant::Delve]).unwrap_err();
        assert!(matches!(err, DelveError::Replicate { index: 0, .. }));
        assert!(err.is_precondition());
    }

    #[test]
    fn threshold_edges() {
        let cfg = small_cfg();
        let stat = |x: &CountMatrix, g: &GroupPartition| crate::estimators::anova_t(x, g);
        assert!(empirical_threshold(stat, &cfg, 99, 0.05).is_err());
        let lo = empirical_threshold(stat, &cfg, 100, 1.0).unwrap();
        let hi = empirical_threshold(stat, &cfg, 100, 0.05).unwrap();
        assert!(lo <= hi);
        assert_eq!(hi, empirical_threshold(stat, &cfg, 100, 0.05).unwrap());
    }

    #[test]
    fn power_zero_matches_null_rate() {
        let cfg = SimConfig::experiment2(20, 30, 4, 10, 20, 0.5, 0.0).with_seed(8);
        let curve = run_power_curve(&cfg, &[0.0, 4.0], 60, 0.05, &[Variant::Delve], 100).unwrap();
        let null = run_null_calibration(&cfg, 60, &[Variant::Delve]).unwrap();
        let rate = rejection_rate(&null.variants[0].values, upper_critical(0.05));
        assert_eq!(curve.rows[0].power, Some(rate));
    }

    #[test]
    fn infeasible_signal_is_skipped() {
        let cfg = SimConfig::experiment2(20, 30, 4, 10, 20, 0.5, 0.0).with_seed(8);
        let curve = run_power_curve(&cfg, &[0.0, 1e9], 10, 0.05, &[Variant::Delve], 100).unwrap();
        assert!(curve.rows[0].power.is_some());
        assert!(curve.rows[1].power.is_none());
        assert!(curve.rows[1].warning.as_ref().unwrap().contains("skipped"));
    }

    #[test]
    fn pairwise_shape_and_symmetry() {
        let x = CountMatrix::from_dense(
            &[[5, 0, 1], [4, 1, 0], [0, 5, 1], [1, 4, 0], [2, 2, 2], [3, 1, 2]],
            3,
        )
        .unwrap();
        let g = GroupPartition::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = pairwise_zscores(&x, &g, &labels, Variant::DelvePlus).unwrap();
        for a in 0..3 {
            assert!(m.values[a][a].is_none());
            for b in 0..3 {
                assert_eq!(m.values[a][b], m.values[b][a]);
            }
        }
    }
}
