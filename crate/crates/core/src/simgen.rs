//! Seeded generators for the simulation designs.
//!
//! Stream rule: replicate `r` of a run with seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` with stream id `r`. Quantities shared by
//! every replicate (a fixed base PMF) come from stream [`SHARED_STREAM`].
//! Null and alternative draws of the same replicate consume the generator in
//! the same order, so they share every random quantity except the signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::counts::{CountMatrix, GroupPartition};
use crate::error::{DelveError, Result};
use crate::population::TrueParams;

pub const SHARED_STREAM: u64 = 1 << 63;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(dim: usize, phi: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(DelveError::InvalidParameter(format!(
            "Dirichlet concentration must be positive, got {phi}"
        )));
    }
    if dim == 0 {
        return Err(DelveError::InvalidParameter("Dirichlet dimension is 0".into()));
    }
    if dim == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(phi, 1.0).map_err(|e| DelveError::InvalidParameter(e.to_string()))?;
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        // With tiny shapes every variate can underflow to zero; redraw.
        if s > 0.0 && s.is_finite() {
            v.iter_mut().for_each(|x| *x /= s);
            return Ok(v);
        }
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, omega: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if omega.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(DelveError::InvalidParameter(
            "multinomial probabilities must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = omega.iter().sum();
    if omega.is_empty() || (total - 1.0).abs() > 1e-9 {
        return Err(DelveError::InvalidParameter(format!(
            "multinomial probabilities sum to {total}"
        )));
    }
    let mut out = vec![0u64; omega.len()];
    let mut left = n;
    let mut mass = 1.0f64;
    let last = omega.len() - 1;
    for (j, &w) in omega.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j == last {
            out[j] = left;
            break;
        }
        let q = if mass > 0.0 { (w / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = Binomial::new(left, q)
            .map_err(|e| DelveError::InvalidParameter(e.to_string()))?
            .sample(rng);
        out[j] = x;
        left -= x;
        mass -= w;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Dirichlet rows; null replaces every row by the count-weighted mean.
    Experiment1,
    /// Mirrored base PMF with group-level sign perturbations, indexed by `lambda`.
    Experiment2,
    /// One row per group at the detection boundary, indexed by `a`.
    Contiguity,
    /// Mirrored base PMF with conditioned group signs, indexed by `omega`.
    LowerBound,
    /// One row per group, rank-one sign perturbation of the uniform PMF, indexed by `alpha`.
    AnovaPowerless,
}

impl Design {
    pub fn as_str(&self) -> &'static str {
        match self {
            Design::Experiment1 => "experiment1",
            Design::Experiment2 => "experiment2",
            Design::Contiguity => "contiguity",
            Design::LowerBound => "lower_bound",
            Design::AnovaPowerless => "anova_powerless",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Design::Experiment1,
            Design::Experiment2,
            Design::Contiguity,
            Design::LowerBound,
            Design::AnovaPowerless,
        ]
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| DelveError::InvalidParameter(format!("unknown design '{s}'")))
    }

    /// Name of the scalar that sets the signal strength.
    pub fn signal_name(&self) -> &'static str {
        match self {
            Design::Experiment1 => "none",
            Design::Experiment2 => "lambda",
            Design::Contiguity => "a",
            Design::LowerBound => "omega",
            Design::AnovaPowerless => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub n_min: u64,
    pub n_max: u64,
    pub phi: f64,
    pub hypothesis: Hypothesis,
    /// `lambda`, `a`, `omega` or `alpha`, depending on the design.
    pub signal: f64,
    /// Draw the base PMF once per run instead of once per replicate.
    pub fixed_mu: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn experiment1(n: usize, p: usize, k: usize, n_min: u64, n_max: u64, phi: f64) -> Self {
        Self {
            design: Design::Experiment1,
            n,
            p,
            k,
            n_min,
            n_max,
            phi,
            hypothesis: Hypothesis::Null,
            signal: 0.0,
            fixed_mu: false,
            seed: 0,
        }
    }

    pub fn experiment2(n: usize, p: usize, k: usize, n_min: u64, n_max: u64, phi: f64, lambda: f64) -> Self {
        Self {
            design: Design::Experiment2,
            hypothesis: Hypothesis::Alt,
            signal: lambda,
            ..Self::experiment1(n, p, k, n_min, n_max, phi)
        }
    }

    /// One row per group, all of length `len`.
    pub fn one_per_group(design: Design, n: usize, p: usize, len: u64, signal: f64) -> Self {
        Self {
            design,
            hypothesis: Hypothesis::Alt,
            signal,
            ..Self::experiment1(n, p, n, len, len, 1.0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hypothesis(mut self, h: Hypothesis) -> Self {
        self.hypothesis = h;
        self
    }

    pub fn with_signal(mut self, s: f64) -> Self {
        self.signal = s;
        self
    }

    /// Checks everything that can be checked before drawing, so that
    /// infeasible designs fail before any replicate runs.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DelveError::InvalidParameter(m));
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return bad("n, p and K must be positive".into());
        }
        if !self.n.is_multiple_of(self.k) {
            return bad(format!("K = {} does not divide n = {}", self.k, self.n));
        }
        if self.n_min > self.n_max {
            return bad(format!("N_min = {} exceeds N_max = {}", self.n_min, self.n_max));
        }
        if self.n_min < 1 {
            return bad("N_min must be at least 1".into());
        }
        if !(self.signal >= 0.0) || !self.signal.is_finite() {
            return bad(format!("signal must be finite and nonnegative, got {}", self.signal));
        }
        match self.design {
            Design::Experiment1 => {
                if !(self.phi > 0.0) {
                    return bad(format!("phi must be positive, got {}", self.phi));
                }
            }
            Design::Experiment2 | Design::LowerBound => {
                if !self.p.is_multiple_of(2) {
                    return bad(format!("p = {} must be even", self.p));
                }
                if !(self.phi > 0.0) {
                    return bad(format!("phi must be positive, got {}", self.phi));
                }
            }
            Design::Contiguity | Design::AnovaPowerless => {
                if self.k != self.n {
                    return bad("this design needs K = n".into());
                }
                if self.n_min != self.n_max {
                    return bad("this design needs a common row length (N_min = N_max)".into());
                }
                if !self.n.is_multiple_of(2) || !self.p.is_multiple_of(2) {
                    return bad(format!("n = {} and p = {} must be even", self.n, self.p));
                }
                if self.design == Design::Contiguity {
                    let nu_sq = contiguity_nu_sq(self.n, self.p, self.n_min, self.signal);
                    if nu_sq > 1.0 {
                        return Err(DelveError::Infeasible(format!(
                            "nu^2 = {nu_sq} exceeds 1; largest feasible a is {}",
                            self.signal / nu_sq
                        )));
                    }
                } else if self.signal >= 1.0 {
                    return bad(format!("alpha must lie in [0, 1), got {}", self.signal));
                }
            }
        }
        Ok(())
    }

    /// Draws replicate `index`.
    pub fn draw(&self, index: u64) -> Result<SimDraw> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, index);
        match self.design {
            Design::Experiment1 => gen_experiment1(self, &mut rng),
            Design::Experiment2 => gen_experiment2(self, &mut rng),
            Design::Contiguity => gen_contiguity(self, &mut rng),
            Design::LowerBound => {
                let mu_half = self.base_half(&mut rng)?;
                let sizes = vec![self.n / self.k; self.k];
                let totals = uniform_lengths(self, &mut rng);
                gen_lower_bound(&mu_half, self.signal_if_alt(), &sizes, &totals, &mut rng)
            }
            Design::AnovaPowerless => gen_anova_powerless(self, &mut rng),
        }
    }

    fn signal_if_alt(&self) -> f64 {
        match self.hypothesis {
            Hypothesis::Null => 0.0,
            Hypothesis::Alt => self.signal,
        }
    }

    /// Half-mass base PMF `mu` of length `p/2` (sums to 1/2).
    fn base_half<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut mu = if self.fixed_mu {
            sample_dirichlet(self.p / 2, self.phi, &mut stream_rng(self.seed, SHARED_STREAM))?
        } else {
            sample_dirichlet(self.p / 2, self.phi, rng)?
        };
        mu.iter_mut().for_each(|m| *m *= 0.5);
        Ok(mu)
    }
}

/// One synthetic dataset with the parameters it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDraw {
    pub counts: CountMatrix,
    pub groups: GroupPartition,
    pub params: TrueParams,
    /// Mixing level actually used (`tau` or `nu`), when the design has one.
    pub mixing: Option<f64>,
    /// Group sign vectors drawn before acceptance (lower-bound design).
    pub attempts: Option<u64>,
}

fn uniform_lengths<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Vec<u64> {
    (0..cfg.n)
        .map(|_| rng.random_range(cfg.n_min..=cfg.n_max))
        .collect()
}

fn rademacher<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Uniformly shuffled vector with `len/2` entries of each sign.
fn balanced_signs<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|i| if i < len / 2 { 1.0 } else { -1.0 }).collect();
    v.shuffle(rng);
    v
}

fn mirror(mu_half: &[f64]) -> Vec<f64> {
    mu_half.iter().chain(mu_half).copied().collect()
}

fn finish<R: Rng>(
    totals: Vec<u64>,
    omega: Vec<Vec<f64>>,
    groups: GroupPartition,
    rng: &mut R,
) -> Result<SimDraw> {
    let p = omega.first().map_or(0, Vec::len);
    let mut triples = Vec::new();
    for (i, (row, &ni)) in omega.iter().zip(&totals).enumerate() {
        let x = sample_multinomial(ni, row, rng)?;
        triples.extend(
            x.into_iter()
                .enumerate()
                .filter(|&(_, v)| v > 0)
                .map(|(j, v)| (i, j, v)),
        );
    }
    let counts = CountMatrix::from_triples(&triples, totals.len(), p)?;
    let params = TrueParams::new(totals, omega, groups.clone())?;
    Ok(SimDraw {
        counts,
        groups,
        params,
        mixing: None,
        attempts: None,
    })
}

/// Dirichlet rows in `K` contiguous equal groups; the null replaces every row
/// by the count-weighted mean of the alternative rows.
pub fn gen_experiment1<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimDraw> {
    cfg.validate()?;
    let groups = GroupPartition::equal_blocks(cfg.n, cfg.k)?;
    let mut omega = (0..cfg.n)
        .map(|_| sample_dirichlet(cfg.p, cfg.phi, rng))
        .collect::<Result<Vec<_>>>()?;
    let totals = uniform_lengths(cfg, rng);
    if cfg.hypothesis == Hypothesis::Null {
        let total: u64 = totals.iter().sum();
        let mut mu = vec![0.0; cfg.p];
        for (row, &ni) in omega.iter().zip(&totals) {
            for (m, &w) in mu.iter_mut().zip(row) {
                *m += ni as f64 * w;
            }
        }
        mu.iter_mut().for_each(|m| *m /= total as f64);
        omega = vec![mu; cfg.n];
    }
    finish(totals, omega, groups, rng)
}

/// `tau^2 = lambda sqrt(K) / (N ||mu_tilde||)` for the Experiment-2 family.
pub fn experiment2_tau_sq(lambda: f64, k: usize, total: u64, mu_tilde_norm: f64) -> f64 {
    lambda * (k as f64).sqrt() / (total as f64 * mu_tilde_norm)
}

pub fn gen_experiment2<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimDraw> {
    cfg.validate()?;
    let groups = GroupPartition::equal_blocks(cfg.n, cfg.k)?;
    let totals = uniform_lengths(cfg, rng);
    let mu_half = cfg.base_half(rng)?;
    let z: Vec<f64> = (0..cfg.k).map(|_| rademacher(rng)).collect();
    let b: Vec<f64> = (0..cfg.p / 2).map(|_| rademacher(rng)).collect();

    let mu_tilde = mirror(&mu_half);
    let norm = mu_tilde.iter().map(|m| m * m).sum::<f64>().sqrt();
    let total: u64 = totals.iter().sum();
    let lambda = cfg.signal_if_alt();
    let tau_sq = experiment2_tau_sq(lambda, cfg.k, total, norm);
    if tau_sq > 1.0 {
        return Err(DelveError::Infeasible(format!(
            "lambda = {lambda} needs tau^2 = {tau_sq} > 1; largest feasible lambda is {}",
            total as f64 * norm / (cfg.k as f64).sqrt()
        )));
    }
    let tau = tau_sq.sqrt();
    let half = cfg.p / 2;
    let omega = (0..cfg.n)
        .map(|i| {
            let zk = z[groups.label(i)];
            (0..cfg.p)
                .map(|j| {
                    if j < half {
                        mu_tilde[j] * (1.0 + tau * zk * b[j])
                    } else {
                        mu_tilde[j] * (1.0 - tau * zk * b[j - half])
                    }
                })
                .collect()
        })
        .collect();
    let mut draw = finish(totals, omega, groups, rng)?;
    draw.mixing = Some(tau);
    Ok(draw)
}

/// `nu^2 = a sqrt(2p) / (N sqrt(n))`.
pub fn contiguity_nu_sq(n: usize, p: usize, len: u64, a: f64) -> f64 {
    a * (2.0 * p as f64).sqrt() / (len as f64 * (n as f64).sqrt())
}

/// Rows `(1 + nu eps_i sigma_j) / p` with balanced sign vectors, so every
/// row and column perturbation sums to zero.
pub fn gen_contiguity<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimDraw> {
    cfg.validate()?;
    let nu = contiguity_nu_sq(cfg.n, cfg.p, cfg.n_min, cfg.signal_if_alt()).sqrt();
    let mut draw = sign_perturbed_uniform(cfg, nu, rng)?;
    draw.mixing = Some(nu);
    Ok(draw)
}

/// Rows `(1 + alpha eps_i sigma_j) / p`, one row per group.
pub fn gen_anova_powerless<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimDraw> {
    cfg.validate()?;
    let mut draw = sign_perturbed_uniform(cfg, cfg.signal_if_alt(), rng)?;
    draw.mixing = Some(cfg.signal_if_alt());
    Ok(draw)
}

fn sign_perturbed_uniform<R: Rng>(cfg: &SimConfig, scale: f64, rng: &mut R) -> Result<SimDraw> {
    let eps = balanced_signs(cfg.n, rng);
    let sigma = balanced_signs(cfg.p, rng);
    debug_assert_eq!(eps.iter().sum::<f64>(), 0.0);
    debug_assert_eq!(sigma.iter().sum::<f64>(), 0.0);
    let inv_p = 1.0 / cfg.p as f64;
    let omega = eps
        .iter()
        .map(|&e| sigma.iter().map(|&s| inv_p * (1.0 + scale * e * s)).collect())
        .collect();
    finish(
        vec![cfg.n_min; cfg.n],
        omega,
        GroupPartition::singletons(cfg.n),
        rng,
    )
}

/// Mirrored alternative with group-level signs `z_k` drawn conditionally on
/// `|sum_k z_k| <= 100 sqrt(K)`, multiplier `omega (N/K) / T_k`.
///
/// `mu_half` must be nonnegative with total mass 1/2; `group_sizes` lists the
/// contiguous group sizes and `totals` the row lengths.
pub fn gen_lower_bound<R: Rng>(
    mu_half: &[f64],
    omega: f64,
    group_sizes: &[usize],
    totals: &[u64],
    rng: &mut R,
) -> Result<SimDraw> {
    let mass: f64 = mu_half.iter().sum();
    if mu_half.iter().any(|&m| !(m >= 0.0)) || (mass - 0.5).abs() > 1e-12 {
        return Err(DelveError::InvalidParameter(format!(
            "half PMF must be nonnegative with mass 1/2, got mass {mass}"
        )));
    }
    let n: usize = group_sizes.iter().sum();
    if n != totals.len() || group_sizes.contains(&0) {
        return Err(DelveError::InvalidParameter(
            "group sizes must be positive and cover every row".into(),
        ));
    }
    let k = group_sizes.len();
    let labels: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    let groups = GroupPartition::new(labels, k)?;
    let mut group_totals = vec![0u64; k];
    for (i, &t) in totals.iter().enumerate() {
        group_totals[groups.label(i)] += t;
    }
    let total: u64 = group_totals.iter().sum();
    let avg = total as f64 / k as f64;
    let bound = *group_totals.iter().min().unwrap() as f64 / avg;
    if omega > bound {
        return Err(DelveError::Infeasible(format!(
            "omega = {omega} exceeds the nonnegativity bound {bound}"
        )));
    }

    let limit = 100.0 * (k as f64).sqrt();
    let mut attempts = 0u64;
    let z = loop {
        attempts += 1;
        let z: Vec<f64> = (0..k).map(|_| rademacher(rng)).collect();
        if z.iter().sum::<f64>().abs() <= limit {
            break z;
        }
    };
    let half = mu_half.len();
    let b: Vec<f64> = (0..half).map(|_| rademacher(rng)).collect();
    let omega_rows = (0..n)
        .map(|i| {
            let kk = groups.label(i);
            let s = omega * avg / group_totals[kk] as f64 * z[kk];
            (0..2 * half)
                .map(|j| {
                    if j < half {
                        mu_half[j] * (1.0 + s * b[j])
                    } else {
                        mu_half[j - half] * (1.0 - s * b[j - half])
                    }
                })
                .collect()
        })
        .collect();
    let mut draw = finish(totals.to_vec(), omega_rows, groups, rng)?;
    draw.mixing = Some(omega);
    draw.attempts = Some(attempts);
    Ok(draw)
}
