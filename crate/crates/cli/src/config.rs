//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `design` | `experiment1`, `experiment2`, `contiguity`, `lower_bound`, `anova_powerless` | required |
//! | `n`, `p` | rows and categories | required |
//! | `k` | number of groups | required, except `n` for one-row-per-group designs |
//! | `n_min`, `n_max` | row length range (inclusive); `len` sets both | required |
//! | `phi` | Dirichlet concentration | required for Dirichlet designs |
//! | `hypothesis` | `null` or `alt` | `null` |
//! | `signal` | `lambda`, `a`, `omega` or `alpha` of the design | required for `alt` runs of designs with a signal |
//! | `fixed_mu` | draw the base PMF once per run | `false` |
//! | `seed`, `reps` | overridden by `--seed`, `--reps` | required here or on the command line |
//! | `variants` | comma list | `delve,delve_plus` |
//! | `level` | power-curve level | `0.05` |
//! | `grid` | comma list of signal values | 10 points from 0 to 12 |
//! | `threshold_reps` | null draws for empirical thresholds | `1000` |
//! | `hist_bins`, `hist_lo`, `hist_hi` | histogram layout | `60`, `-6`, `6` |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use delvekit::harness::default_grid;
use delvekit::{Design, Hypothesis, SimConfig, Variant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("config line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("missing config key '{0}'")]
    Missing(String),
    #[error("config key '{key}': cannot parse '{value}' ({msg})")]
    Value {
        key: String,
        value: String,
        msg: String,
    },
}

const KEYS: &[&str] = &[
    "design",
    "n",
    "p",
    "k",
    "n_min",
    "n_max",
    "len",
    "phi",
    "hypothesis",
    "signal",
    "fixed_mu",
    "seed",
    "reps",
    "variants",
    "level",
    "grid",
    "threshold_reps",
    "hist_bins",
    "hist_lo",
    "hist_hi",
];

/// Raw key-value pairs, in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: idx + 1, key });
            }
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                    msg: e.to_string(),
                })
            })
            .transpose()
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.into(),
                    value: s.into(),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// `key = value` lines, one per key.
    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Simulate,
    Calibrate,
    Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub reps: u64,
    pub variants: Vec<Variant>,
    pub level: f64,
    pub grid: Vec<f64>,
    pub threshold_reps: u64,
    pub hist_bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    /// Every key with its effective value, defaults included.
    pub resolved: KeyValues,
}

fn parse_hypothesis(s: &str) -> Result<Hypothesis, ConfigError> {
    match s {
        "null" => Ok(Hypothesis::Null),
        "alt" => Ok(Hypothesis::Alt),
        _ => Err(ConfigError::Value {
            key: "hypothesis".into(),
            value: s.into(),
            msg: "expected 'null' or 'alt'".into(),
        }),
    }
}

impl RunConfig {
    pub fn resolve(kv: &KeyValues, purpose: Purpose) -> Result<Self, ConfigError> {
        let design_name: String = kv.require("design")?;
        let design = Design::parse(&design_name).map_err(|e| ConfigError::Value {
            key: "design".into(),
            value: design_name.clone(),
            msg: e.to_string(),
        })?;
        let one_per_group = matches!(design, Design::Contiguity | Design::AnovaPowerless);
        let dirichlet = matches!(
            design,
            Design::Experiment1 | Design::Experiment2 | Design::LowerBound
        );

        let n: usize = kv.require("n")?;
        let p: usize = kv.require("p")?;
        let k: usize = if one_per_group {
            kv.get("k")?.unwrap_or(n)
        } else {
            kv.require("k")?
        };
        let len: Option<u64> = kv.get("len")?;
        let (n_min, n_max) = match len {
            Some(l) => (l, l),
            None => (kv.require("n_min")?, kv.require("n_max")?),
        };
        let phi: f64 = if dirichlet {
            kv.require("phi")?
        } else {
            kv.get("phi")?.unwrap_or(1.0)
        };
        let hypothesis = match purpose {
            Purpose::Calibrate => Hypothesis::Null,
            Purpose::Power => Hypothesis::Alt,
            Purpose::Simulate => kv
                .raw("hypothesis")
                .map(parse_hypothesis)
                .transpose()?
                .unwrap_or(Hypothesis::Null),
        };
        let has_signal = design.signal_name() != "none";
        let signal: f64 = if purpose == Purpose::Simulate && hypothesis == Hypothesis::Alt && has_signal {
            kv.require("signal")?
        } else {
            kv.get("signal")?.unwrap_or(0.0)
        };
        let fixed_mu: bool = kv.get("fixed_mu")?.unwrap_or(false);
        let seed: u64 = kv.require("seed")?;
        let reps: u64 = kv.require("reps")?;
        let variants: Vec<Variant> = kv
            .list("variants")?
            .unwrap_or_else(|| vec![Variant::Delve, Variant::DelvePlus]);
        if variants.is_empty() {
            return Err(ConfigError::Value {
                key: "variants".into(),
                value: String::new(),
                msg: "no variants listed".into(),
            });
        }
        let level: f64 = kv.get("level")?.unwrap_or(0.05);
        let grid: Vec<f64> = kv.list("grid")?.unwrap_or_else(default_grid);
        let threshold_reps: u64 = kv.get("threshold_reps")?.unwrap_or(1000);
        let hist_bins: usize = kv.get("hist_bins")?.unwrap_or(60);
        let hist_lo: f64 = kv.get("hist_lo")?.unwrap_or(-6.0);
        let hist_hi: f64 = kv.get("hist_hi")?.unwrap_or(6.0);
        if hist_bins == 0 || hist_lo.partial_cmp(&hist_hi) != Some(std::cmp::Ordering::Less) {
            return Err(ConfigError::Value {
                key: "hist_bins".into(),
                value: format!("{hist_bins} bins on [{hist_lo}, {hist_hi}]"),
                msg: "need at least one bin and hist_lo < hist_hi".into(),
            });
        }

        let sim = SimConfig {
            design,
            n,
            p,
            k,
            n_min,
            n_max,
            phi,
            hypothesis,
            signal,
            fixed_mu,
            seed,
        };

        let mut resolved = KeyValues::default();
        resolved.set("design", design.as_str());
        resolved.set("n", n);
        resolved.set("p", p);
        resolved.set("k", k);
        resolved.set("n_min", n_min);
        resolved.set("n_max", n_max);
        resolved.set("phi", phi);
        resolved.set(
            "hypothesis",
            match hypothesis {
                Hypothesis::Null => "null",
                Hypothesis::Alt => "alt",
            },
        );
        resolved.set("signal", signal);
        resolved.set("fixed_mu", fixed_mu);
        resolved.set("seed", seed);
        resolved.set("reps", reps);
        resolved.set(
            "variants",
            variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(","),
        );
        resolved.set("level", level);
        resolved.set(
            "grid",
            grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(","),
        );
        resolved.set("threshold_reps", threshold_reps);
        resolved.set("hist_bins", hist_bins);
        resolved.set("hist_lo", hist_lo);
        resolved.set("hist_hi", hist_hi);

        Ok(Self {
            sim,
            reps,
            variants,
            level,
            grid,
            threshold_reps,
            hist_bins,
            hist_lo,
            hist_hi,
            resolved,
        })
    }
}
