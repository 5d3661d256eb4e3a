use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use delvekit::harness::{self, MCReport, PowerCurve};
use delvekit::io::{read_counts_file, read_groups_file, NamedGroups, ParamsFile};
use delvekit::stats::{histogram, upper_critical};
use delvekit::{
    alpha_beta, delve_test, delve_test_weighted, dimension_ratio, omega_n, omega_sq, rho_squared,
    snr, theta_components, CountMatrix, DelveError, GroupPartition, ThetaComponents, TrueParams,
    Variant,
};
use serde::{Deserialize, Serialize};

mod config;
mod output;

use config::{ConfigError, KeyValues, Purpose, RunConfig};
use output::{csv_field, fmt_f64, fmt_opt, sha256_file, to_json};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;

#[derive(Parser)]
#[command(name = "delvekit", version, about = "K-sample test for equal group-mean PMFs of multinomial counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test on a counts file.
    Test(TestArgs),
    /// Two-group Z-scores for every pair of groups, as a CSV matrix.
    Pairwise(PairwiseArgs),
    /// Monte-Carlo run of a design under the configured hypothesis.
    Simulate(SimArgs),
    /// Monte-Carlo run of a design under the null.
    Calibrate(SimArgs),
    /// Rejection rates over a grid of signal strengths.
    Power(SimArgs),
    /// Re-run a simulation from its manifest and compare output digests.
    Replay(ReplayArgs),
    /// Signal, regularity and dimension-ratio diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct DataArgs {
    /// Counts as CSV triples `row,col,count` or a MatrixMarket file.
    counts: PathBuf,
    /// Groups as CSV `row,group`. Without it every row is its own group.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Number of categories, when the counts file does not state it.
    #[arg(long)]
    cols: Option<usize>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "delve")]
    variant: Variant,
    /// Also report the frequency-weighted statistic.
    #[arg(long)]
    weighted: bool,
    /// Include per-category contributions to the statistic.
    #[arg(long)]
    per_coordinate: bool,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct PairwiseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "delve_plus")]
    variant: Variant,
    /// Write the matrix here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "DELVEKIT_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SimArgs {
    /// Configuration file with one `key = value` per line.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    /// Worker threads (0 = all cores). Does not change any result.
    #[arg(long, env = "DELVEKIT_THREADS", default_value_t = 0)]
    threads: usize,
    /// Output directory; without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "DELVEKIT_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Counts file for plug-in diagnostics.
    counts: Option<PathBuf>,
    #[arg(long, requires = "counts")]
    groups: Option<PathBuf>,
    #[arg(long, requires = "counts")]
    cols: Option<usize>,
    /// JSON parameters file `{totals, omega, labels}` for population metrics.
    #[arg(long, conflicts_with = "counts")]
    params: Option<PathBuf>,
    /// Fail unless true population parameters are supplied.
    #[arg(long)]
    population: bool,
    /// Dimension ratio only: number of rows.
    #[arg(long, conflicts_with_all = ["counts", "params"], requires_all = ["mean_length", "p"])]
    n: Option<f64>,
    /// Dimension ratio only: mean row length.
    #[arg(long, requires = "n")]
    mean_length: Option<f64>,
    /// Dimension ratio only: number of categories.
    #[arg(long, requires = "n")]
    p: Option<f64>,
    /// Dimension ratio only: number of groups (defaults to n).
    #[arg(long, requires = "n")]
    k: Option<f64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DelveError>() {
            return match e {
                e if e.is_precondition() => EXIT_PRECONDITION,
                DelveError::Io(_) => EXIT_RUNTIME,
                _ => EXIT_INPUT,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Pairwise(a) => cmd_pairwise(a),
        Command::Simulate(a) => cmd_sim(a, Purpose::Simulate),
        Command::Calibrate(a) => cmd_sim(a, Purpose::Calibrate),
        Command::Power(a) => cmd_sim(a, Purpose::Power),
        Command::Replay(a) => cmd_replay(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_data(d: &DataArgs) -> anyhow::Result<(CountMatrix, NamedGroups)> {
    let raw = read_counts_file(&d.counts).with_context(|| format!("reading {}", d.counts.display()))?;
    let groups = match &d.groups {
        Some(path) => Some(read_groups_file(path).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };
    let min_rows = groups.as_ref().map_or(0, |g| g.partition.len());
    let x = raw.into_matrix(min_rows, d.cols)?;
    let groups = match groups {
        Some(g) => g,
        None => NamedGroups {
            partition: GroupPartition::singletons(x.n_rows()),
            names: (0..x.n_rows()).map(|i| i.to_string()).collect(),
        },
    };
    groups.partition.check_rows(x.n_rows())?;
    Ok((x, groups))
}

#[derive(Serialize)]
struct TestOutput {
    variant: Variant,
    n: usize,
    p: usize,
    k: usize,
    statistic: f64,
    variance_estimate: Option<f64>,
    psi: Option<f64>,
    p_value: Option<f64>,
    level: f64,
    critical_value: Option<f64>,
    reject: Option<bool>,
    weighted_statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_coordinate: Option<Vec<(usize, f64)>>,
}

fn cmd_test(a: TestArgs) -> anyhow::Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(DelveError::InvalidParameter(format!("level {} is outside (0, 1)", a.level)).into());
    }
    let (x, groups) = load_data(&a.data)?;
    let g = &groups.partition;
    let res = if a.weighted {
        delve_test_weighted(&x, g, a.variant)?
    } else {
        delve_test(&x, g, a.variant)?
    };
    let critical = res.psi.map(|_| upper_critical(a.level));
    let out = TestOutput {
        variant: res.variant,
        n: x.n_rows(),
        p: x.n_cols(),
        k: g.k(),
        statistic: res.statistic,
        variance_estimate: res.variance_estimate,
        psi: res.psi,
        p_value: res.p_value,
        level: a.level,
        critical_value: critical,
        reject: res.psi.zip(critical).map(|(z, c)| z > c),
        weighted_statistic: res.weighted_statistic,
        per_coordinate: if a.per_coordinate { res.per_coordinate } else { None },
    };
    match a.format {
        Format::Json => print!("{}", to_json(&out)?),
        Format::Csv => {
            println!("variant,n,p,k,statistic,variance_estimate,psi,p_value,level,critical_value,reject,weighted_statistic");
            println!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                out.variant,
                out.n,
                out.p,
                out.k,
                fmt_f64(out.statistic),
                fmt_opt(out.variance_estimate),
                fmt_opt(out.psi),
                fmt_opt(out.p_value),
                fmt_f64(out.level),
                fmt_opt(out.critical_value),
                out.reject.map(|r| r.to_string()).unwrap_or_default(),
                fmt_opt(out.weighted_statistic),
            );
            if let Some(per) = &out.per_coordinate {
                println!();
                println!("col,contribution");
                for (j, v) in per {
                    println!("{j},{}", fmt_f64(*v));
                }
            }
        }
    }
    Ok(())
}

fn cmd_pairwise(a: PairwiseArgs) -> anyhow::Result<()> {
    let (x, groups) = load_data(&a.data)?;
    let m = harness::with_threads(a.threads, || {
        harness::pairwise_zscores(&x, &groups.partition, &groups.names, a.variant)
    })??;
    let mut text = String::new();
    text.push_str(
        &std::iter::once(String::new())
            .chain(m.labels.iter().map(|l| csv_field(l)))
            .collect::<Vec<_>>()
            .join(","),
    );
    text.push('\n');
    for (label, row) in m.labels.iter().zip(&m.values) {
        text.push_str(&csv_field(label));
        for v in row {
            text.push(',');
            text.push_str(&fmt_opt(*v));
        }
        text.push('\n');
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    version: String,
    config: BTreeMap<String, String>,
    seed: u64,
    reps: u64,
    threads: usize,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    runtime_seconds: f64,
}

impl Purpose {
    fn name(self) -> &'static str {
        match self {
            Purpose::Simulate => "simulate",
            Purpose::Calibrate => "calibrate",
            Purpose::Power => "power",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [Purpose::Simulate, Purpose::Calibrate, Purpose::Power]
            .into_iter()
            .find(|p| p.name() == s)
    }
}

fn cmd_sim(a: SimArgs, purpose: Purpose) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut kv = KeyValues::parse(&text)?;
    if let Some(seed) = a.seed {
        kv.set("seed", seed);
    }
    if let Some(reps) = a.reps {
        kv.set("reps", reps);
    }
    let cfg = RunConfig::resolve(&kv, purpose)?;
    let input = FileDigest {
        path: a.config.display().to_string(),
        sha256: sha256_file(&a.config)?,
    };
    run_and_write(&cfg, purpose, a.threads, a.out.as_deref(), vec![input]).map(|_| ())
}

/// Runs the configured simulation and writes its files, returning the manifest
/// (or `None` when the report went to stdout).
fn run_and_write(
    cfg: &RunConfig,
    purpose: Purpose,
    threads: usize,
    out: Option<&Path>,
    inputs: Vec<FileDigest>,
) -> anyhow::Result<Option<RunManifest>> {
    cfg.sim.validate()?;
    let start = Instant::now();
    let files: Vec<(&str, String)> = match purpose {
        Purpose::Power => {
            let curve = harness::with_threads(threads, || {
                harness::run_power_curve(&cfg.sim, &cfg.grid, cfg.reps, cfg.level, &cfg.variants, cfg.threshold_reps)
            })??;
            for row in &curve.rows {
                if let Some(w) = &row.warning {
                    eprintln!("warning: {} = {}: {w}", cfg.sim.design.signal_name(), row.signal);
                }
            }
            vec![("report.json", to_json(&curve)?), ("power.csv", power_csv(&curve))]
        }
        Purpose::Simulate | Purpose::Calibrate => {
            let report = harness::with_threads(threads, || {
                if purpose == Purpose::Calibrate {
                    harness::run_null_calibration(&cfg.sim, cfg.reps, &cfg.variants)
                } else {
                    harness::run_simulation(&cfg.sim, cfg.reps, &cfg.variants)
                }
            })??;
            vec![
                ("report.json", to_json(&report)?),
                ("summary.csv", summary_csv(&report)),
                ("values.csv", values_csv(&report)),
                ("histogram.csv", histogram_csv(&report, cfg)),
            ]
        }
    };
    let runtime = start.elapsed().as_secs_f64();

    let Some(dir) = out else {
        print!("{}", files[0].1);
        return Ok(None);
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = files;
    files.push(("config.resolved", cfg.resolved.render()));
    let mut outputs = Vec::new();
    for (name, body) in &files {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_file(&path)?,
        });
    }
    let manifest = RunManifest {
        command: purpose.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.resolved.0.clone(),
        seed: cfg.sim.seed,
        reps: cfg.reps,
        threads,
        inputs,
        outputs,
        runtime_seconds: runtime,
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
    Ok(Some(manifest))
}

fn cmd_replay(a: ReplayArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let old: RunManifest = serde_json::from_str(&text).context("parsing manifest")?;
    let Some(purpose) = Purpose::from_name(&old.command) else {
        bail!("manifest command '{}' cannot be replayed", old.command);
    };
    let cfg = RunConfig::resolve(&KeyValues(old.config.clone()), purpose)?;
    let input = FileDigest {
        path: a.manifest.display().to_string(),
        sha256: sha256_file(&a.manifest)?,
    };
    let new = run_and_write(&cfg, purpose, a.threads, Some(&a.out), vec![input])?
        .expect("output directory was given");
    let mut mismatched = Vec::new();
    for f in &old.outputs {
        match new.outputs.iter().find(|g| g.path == f.path) {
            Some(g) if g.sha256 == f.sha256 => {}
            _ => mismatched.push(f.path.clone()),
        }
    }
    if !mismatched.is_empty() {
        bail!("outputs differ from the manifest: {}", mismatched.join(", "));
    }
    println!("replay matches {} output files", old.outputs.len());
    Ok(())
}

fn summary_csv(r: &MCReport) -> String {
    let mut s = String::from("variant,count,mean,sd,ks_normal");
    let levels: Vec<f64> = harness::REPORT_LEVELS.to_vec();
    for l in &levels {
        s.push_str(&format!(",reject_{l}"));
    }
    s.push('\n');
    for v in &r.variants {
        s.push_str(&format!(
            "{},{},{},{},{}",
            v.variant,
            v.summary.count,
            fmt_f64(v.summary.mean),
            fmt_f64(v.summary.sd),
            fmt_f64(v.summary.ks_normal)
        ));
        for l in &levels {
            let rate = v.rejection_rates.iter().find(|x| x.level == *l).map(|x| x.rate);
            s.push(',');
            s.push_str(&fmt_opt(rate));
        }
        s.push('\n');
    }
    s
}

fn values_csv(r: &MCReport) -> String {
    let mut s = String::from("replicate");
    for v in &r.variants {
        s.push(',');
        s.push_str(v.variant.as_str());
    }
    s.push('\n');
    for i in 0..r.reps as usize {
        s.push_str(&i.to_string());
        for v in &r.variants {
            s.push(',');
            s.push_str(&fmt_f64(v.values[i]));
        }
        s.push('\n');
    }
    s
}

/// Z-score variants share the configured range; raw statistics use their own.
fn histogram_csv(r: &MCReport, cfg: &RunConfig) -> String {
    let mut s = String::from("variant,bin_lo,bin_hi,count\n");
    for v in &r.variants {
        let (lo, hi) = if v.variant.is_normal_calibrated() {
            (cfg.hist_lo, cfg.hist_hi)
        } else {
            let finite = v.values.iter().copied().filter(|x| x.is_finite());
            let lo = finite.clone().fold(f64::INFINITY, f64::min);
            let hi = finite.fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() && hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        for (a, b, c) in histogram(&v.values, lo, hi, cfg.hist_bins) {
            s.push_str(&format!("{},{},{},{c}\n", v.variant, fmt_f64(a), fmt_f64(b)));
        }
    }
    s
}

fn power_csv(c: &PowerCurve) -> String {
    let mut s = String::from("signal,variant,threshold,reps,rejections,power,mc_sd,mean_value,warning\n");
    for r in &c.rows {
        let sd = r.power.map(|p| (p * (1.0 - p) / r.reps as f64).sqrt());
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.signal),
            r.variant,
            fmt_opt(r.threshold),
            r.reps,
            r.rejections.map(|x| x.to_string()).unwrap_or_default(),
            fmt_opt(r.power),
            fmt_opt(sd),
            fmt_opt(r.mean_value),
            csv_field(r.warning.as_deref().unwrap_or("")),
        ));
    }
    s
}

#[derive(Serialize)]
struct Diagnostics {
    /// True when the metrics are plug-in estimates from observed counts.
    plugin: bool,
    n: f64,
    p: f64,
    k: f64,
    mean_length: f64,
    dimension_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    population: Option<PopulationMetrics>,
}

#[derive(Serialize)]
struct PopulationMetrics {
    rho_sq: f64,
    omega_sq: Option<f64>,
    omega_n: Option<f64>,
    snr: f64,
    alpha_n: f64,
    beta_n: f64,
    theta: Option<ThetaComponents>,
}

fn population_metrics(params: &TrueParams) -> PopulationMetrics {
    let (alpha_n, beta_n) = alpha_beta(params);
    PopulationMetrics {
        rho_sq: rho_squared(params),
        omega_sq: omega_sq(params).ok(),
        omega_n: omega_n(params).ok(),
        snr: snr(params),
        alpha_n,
        beta_n,
        theta: theta_components(params).ok(),
    }
}

fn cmd_diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    let report = if let Some(n) = a.n {
        let (nbar, p) = (a.mean_length.unwrap_or(f64::NAN), a.p.unwrap_or(f64::NAN));
        let k = a.k.unwrap_or(n);
        if !(n > 0.0 && nbar > 0.0 && p > 0.0 && k > 0.0) {
            return Err(DelveError::InvalidParameter("n, mean length, p and K must be positive".into()).into());
        }
        Diagnostics {
            plugin: false,
            n,
            p,
            k,
            mean_length: nbar,
            dimension_ratio: dimension_ratio(n, nbar, k, p),
            population: None,
        }
    } else {
        let (params, plugin) = match (&a.params, &a.counts) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let file: ParamsFile = serde_json::from_str(&text)
                    .map_err(|e| DelveError::Parse { line: e.line(), msg: e.to_string() })?;
                (file.into_params()?, false)
            }
            (None, Some(counts)) => {
                if a.population {
                    return Err(DelveError::InvalidParameter(
                        "population metrics need true parameters (--params); counts give plug-in values only".into(),
                    )
                    .into());
                }
                let data = DataArgs {
                    counts: counts.clone(),
                    groups: a.groups.clone(),
                    cols: a.cols,
                };
                let (x, groups) = load_data(&data)?;
                (TrueParams::plugin(&x, &groups.partition)?, true)
            }
            (None, None) => bail!("give a counts file, --params, or --n/--mean-length/--p"),
        };
        let (n, p, k) = (params.n() as f64, params.p() as f64, params.k() as f64);
        let nbar = params.total() as f64 / n;
        Diagnostics {
            plugin,
            n,
            p,
            k,
            mean_length: nbar,
            dimension_ratio: dimension_ratio(n, nbar, k, p),
            population: Some(population_metrics(&params)),
        }
    };
    print!("{}", to_json(&report)?);
    Ok(())
}
