//! Hyperparameter marginalization by importance sampling. The default
//! proposal is the prior; [`Proposal::Adaptive`] refines it over several
//! rounds. Weights are kept in log space.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{param_err, Error, Result};
use crate::gp::PosteriorEstimate;

/// Default number of Monte-Carlo samples.
pub const DEFAULT_SAMPLES: usize = 2000;

/// Samples below this normalized log weight are skipped when forming
/// predictive mixtures.
pub const NEGLIGIBLE_LOG_WEIGHT: f64 = -30.0;

/// Rounds used by `adaptive` without an explicit count.
pub const DEFAULT_ROUNDS: usize = 4;

/// Rejection attempts per draw before giving up on ordering constraints.
const MAX_REJECTIONS: usize = 100_000;

const CONSTRAINT_MASS_DRAWS: usize = 100_000;
const CONSTRAINT_MASS_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Kernel standard deviations of adaptive rounds, as fractions of each
/// prior's flat width.
const KERNEL_SCALES: [f64; 3] = [0.2, 0.05, 0.01];

/// How hyperparameter samples are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proposal {
    /// Independent prior draws; weights are the likelihoods.
    #[default]
    Prior,
    /// Round one draws from the prior; each later round perturbs particles
    /// resampled from the current weights with Gaussian kernels in the flat
    /// coordinates. Every draw is weighted against the mixture of all
    /// rounds' proposals.
    Adaptive { rounds: usize },
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Prior => f.write_str("prior"),
            Self::Adaptive { rounds } => write!(f, "adaptive({rounds})"),
        }
    }
}

impl FromStr for Proposal {
    type Err = Error;

    /// Parses `prior`, `adaptive` or `adaptive(R)` with `R >= 1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || param_err(format!("cannot parse proposal '{s}' (expected prior, adaptive or adaptive(R))"));
        match s {
            "prior" => return Ok(Self::Prior),
            "adaptive" => return Ok(Self::Adaptive { rounds: DEFAULT_ROUNDS }),
            _ => {}
        }
        let inner = s.strip_prefix("adaptive(").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let rounds: usize = inner.trim().parse().map_err(|_| bad())?;
        if rounds == 0 {
            return Err(bad());
        }
        Ok(Self::Adaptive { rounds })
    }
}

/// Prior over one scalar hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Fixed(f64),
}

impl Prior {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(param_err(format!("uniform({lo}, {hi}) needs finite lo < hi")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn log_uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(param_err(format!("log_uniform({lo}, {hi}) needs 0 < lo < hi")));
        }
        Ok(Self::LogUniform { lo, hi })
    }

    pub fn fixed(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(param_err(format!("fixed({v}) must be finite")));
        }
        Ok(Self::Fixed(v))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => rng.random_range(lo..hi),
            Self::LogUniform { lo, hi } => rng.random_range(lo.ln()..hi.ln()).exp(),
            Self::Fixed(v) => v,
        }
    }

    /// Log density; the point mass of a fixed prior has log density 0.
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } if v >= lo && v <= hi => -(hi - lo).ln(),
            Self::LogUniform { lo, hi } if v >= lo && v <= hi => -v.ln() - (hi / lo).ln().ln(),
            Self::Fixed(f) if v == f => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Fixed(_))
    }

    /// Coordinate in which the prior is flat: the value, or its log.
    fn flat(&self, v: f64) -> f64 {
        match self {
            Self::LogUniform { .. } => v.ln(),
            _ => v,
        }
    }

    fn unflatten(&self, u: f64) -> f64 {
        match self {
            Self::LogUniform { .. } => u.exp(),
            _ => u,
        }
    }

    /// Support width in the flat coordinate; zero when fixed.
    fn flat_width(&self) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => hi - lo,
            Self::LogUniform { lo, hi } => (hi / lo).ln(),
            Self::Fixed(_) => 0.0,
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { lo, hi } => write!(f, "uniform({lo}, {hi})"),
            Self::LogUniform { lo, hi } => write!(f, "log_uniform({lo}, {hi})"),
            Self::Fixed(v) => write!(f, "fixed({v})"),
        }
    }
}

impl FromStr for Prior {
    type Err = Error;

    /// Parses `uniform(a, b)`, `log_uniform(a, b)`, `fixed(v)` or a bare number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(v) = s.parse::<f64>() {
            return Self::fixed(v);
        }
        let bad = || param_err(format!("cannot parse prior '{s}'"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name, args.as_slice()) {
            ("uniform", [a, b]) => Self::uniform(*a, *b),
            ("log_uniform", [a, b]) => Self::log_uniform(*a, *b),
            ("fixed", [v]) => Self::fixed(*v),
            _ => Err(bad()),
        }
    }
}

/// Named independent priors, optionally truncated by ordering constraints
/// `θ[a] < θ[b]` (enforced by rejection).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorSet {
    names: Vec<String>,
    priors: Vec<Prior>,
    constraints: Vec<(usize, usize)>,
}

impl PriorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, prior: Prior) -> Self {
        self.names.push(name.to_string());
        self.priors.push(prior);
        self
    }

    /// Require `θ[a] < θ[b]`.
    pub fn less_than(mut self, a: &str, b: &str) -> Result<Self> {
        let ia = self.index(a).ok_or_else(|| param_err(format!("unknown parameter {a}")))?;
        let ib = self.index(b).ok_or_else(|| param_err(format!("unknown parameter {b}")))?;
        self.constraints.push((ia, ib));
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn priors(&self) -> &[Prior] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn satisfies_constraints(&self, theta: &[f64]) -> bool {
        self.constraints.iter().all(|&(a, b)| theta[a] < theta[b])
    }

    /// Unnormalized log density of the (truncated) prior.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.priors.len() || !self.satisfies_constraints(theta) {
            return f64::NEG_INFINITY;
        }
        self.priors.iter().zip(theta).map(|(p, v)| p.log_density(*v)).sum()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_REJECTIONS {
            let theta: Vec<f64> = self.priors.iter().map(|p| p.sample(rng)).collect();
            if self.satisfies_constraints(&theta) {
                return Ok(theta);
            }
        }
        Err(param_err("prior ordering constraints are (nearly) unsatisfiable"))
    }

    /// `ln P(constraints hold)` under the untruncated product prior,
    /// estimated from a fixed number of draws; exactly 0 without constraints.
    pub fn log_constraint_mass(&self, seed: u64) -> Result<f64> {
        if self.constraints.is_empty() {
            return Ok(0.0);
        }
        let mut rng = crate::rng_from_seed(seed ^ CONSTRAINT_MASS_STREAM);
        let mut theta = vec![0.0; self.len()];
        let mut hits = 0usize;
        for _ in 0..CONSTRAINT_MASS_DRAWS {
            for (t, p) in theta.iter_mut().zip(&self.priors) {
                *t = p.sample(&mut rng);
            }
            hits += usize::from(self.satisfies_constraints(&theta));
        }
        if hits == 0 {
            return Err(param_err("prior ordering constraints are (nearly) unsatisfiable"));
        }
        Ok((hits as f64 / CONSTRAINT_MASS_DRAWS as f64).ln())
    }

    /// `n` draws, deterministic in `seed`.
    pub fn draw_samples(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(param_err("sample count must be >= 1"));
        }
        let mut rng = crate::rng_from_seed(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

/// Weighted hyperparameter samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPosterior {
    pub names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    /// Normalized: `logsumexp(log_weights) == 0`.
    pub log_weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    /// Samples whose evaluation failed numerically (weight zero).
    pub failures: usize,
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl HyperPosterior {
    /// Self-normalized importance weights from per-sample log likelihoods.
    pub fn from_log_likelihoods(
        names: Vec<String>,
        samples: Vec<Vec<f64>>,
        log_likelihoods: Vec<f64>,
        failures: usize,
    ) -> Result<Self> {
        let iw = log_likelihoods.clone();
        Self::from_importance(names, samples, log_likelihoods, iw, failures)
    }

    /// Self-normalized weights from unnormalized log importance weights.
    pub fn from_importance(
        names: Vec<String>,
        samples: Vec<Vec<f64>>,
        log_likelihoods: Vec<f64>,
        log_importance: Vec<f64>,
        failures: usize,
    ) -> Result<Self> {
        if samples.is_empty() || samples.len() != log_likelihoods.len() || samples.len() != log_importance.len() {
            return Err(param_err("need one log likelihood per sample, at least one sample"));
        }
        let sanitize = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|l| if l.is_nan() || *l == f64::INFINITY { f64::NEG_INFINITY } else { *l })
                .collect()
        };
        let clean = sanitize(&log_likelihoods);
        let iw: Vec<f64> = sanitize(&log_importance)
            .into_iter()
            .zip(&clean)
            .map(|(w, l)| if *l == f64::NEG_INFINITY { f64::NEG_INFINITY } else { w })
            .collect();
        let lse = log_sum_exp(&iw);
        if !lse.is_finite() {
            return Err(Error::Inference(format!(
                "all {} samples have zero likelihood ({} numerical failures)",
                samples.len(),
                failures
            )));
        }
        let log_weights = iw.iter().map(|l| l - lse).collect();
        Ok(Self {
            names,
            samples,
            log_weights,
            log_likelihoods: clean,
            failures,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Indices of samples whose normalized log weight is at least
    /// [`NEGLIGIBLE_LOG_WEIGHT`]; the rest carry under `n·e⁻³⁰` of the mass.
    pub fn live(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.log_weights[i] >= NEGLIGIBLE_LOG_WEIGHT).collect()
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.samples.iter().map(|s| s[i]).collect())
    }

    /// Smallest sample value whose cumulative weight reaches `q`.
    pub fn weighted_quantile(&self, name: &str, q: f64) -> Option<f64> {
        let values = self.column(name)?;
        let weights = self.weights();
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut acc = 0.0;
        for &i in &order {
            acc += weights[i];
            if acc >= q * (1.0 - 1e-12) {
                return Some(values[i]);
            }
        }
        order.last().map(|&i| values[i])
    }

    pub fn weighted_mean(&self, name: &str) -> Option<f64> {
        let values = self.column(name)?;
        Some(values.iter().zip(self.weights()).map(|(v, w)| v * w).sum())
    }
}

/// `log p(y | θ) + log p(θ)`, with a flag set when the likelihood failed
/// numerically (the value is then −∞).
pub fn log_unnormalized_posterior<F>(theta: &[f64], priors: &PriorSet, log_likelihood: F) -> (f64, bool)
where
    F: FnOnce(&[f64]) -> Result<f64>,
{
    let lp = priors.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return (lp, false);
    }
    match log_likelihood(theta) {
        Ok(ll) if !ll.is_nan() => (ll + lp, false),
        _ => (f64::NEG_INFINITY, true),
    }
}

#[cfg(feature = "parallel")]
fn map_samples<T, F>(samples: &[Vec<f64>], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    use rayon::prelude::*;
    samples.par_iter().enumerate().map(|(i, s)| f(i, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_samples<T, F>(samples: &[Vec<f64>], f: F) -> Vec<T>
where
    F: Fn(usize, &[f64]) -> T,
{
    samples.iter().enumerate().map(|(i, s)| f(i, s)).collect()
}

/// Evaluate `f` on every sample, concurrently when the `parallel` feature is
/// on. Output order matches input order.
pub fn evaluate_samples<T, F>(samples: &[Vec<f64>], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    map_samples(samples, f)
}

/// Update per-sample state in place, concurrently when the `parallel`
/// feature is on.
pub fn evaluate_states<S, F>(states: &mut [S], f: F)
where
    S: Send,
    F: Fn(&mut S) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        // `F` is only `Sync`; borrowing it keeps the closure `Send`.
        #[allow(clippy::redundant_closure)]
        states.par_iter_mut().for_each(|s| f(s));
    }
    #[cfg(not(feature = "parallel"))]
    states.iter_mut().for_each(f);
}

/// Weight prior draws by `log_likelihood`. Evaluation errors count as
/// failures with zero weight.
pub fn mc_marginalize_samples<F>(priors: &PriorSet, samples: Vec<Vec<f64>>, log_likelihood: F) -> Result<HyperPosterior>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let results = evaluate_samples(&samples, |_, theta| log_likelihood(theta));
    let failures = results.iter().filter(|r| r.is_err()).count();
    let lls = results.into_iter().map(|r| r.unwrap_or(f64::NEG_INFINITY)).collect();
    HyperPosterior::from_log_likelihoods(priors.names().to_vec(), samples, lls, failures)
}

/// One adaptive round's proposal.
enum Component {
    Prior { log_mass: f64 },
    /// Distinct centres in flat coordinates with their draw counts.
    Kernel { centres: Vec<(Vec<f64>, usize)>, total: usize },
}

impl Component {
    fn log_density(&self, priors: &PriorSet, theta: &[f64]) -> f64 {
        match self {
            Self::Prior { log_mass } => priors.log_density(theta) - log_mass,
            Self::Kernel { centres, total } => {
                let ps = priors.priors();
                let mut jac = 0.0;
                for (p, v) in ps.iter().zip(theta) {
                    match p {
                        Prior::Fixed(f) if v != f => return f64::NEG_INFINITY,
                        Prior::LogUniform { .. } if *v <= 0.0 => return f64::NEG_INFINITY,
                        Prior::LogUniform { .. } => jac -= v.ln(),
                        _ => {}
                    }
                }
                let u: Vec<f64> = ps.iter().zip(theta).map(|(p, v)| p.flat(*v)).collect();
                let mut terms = Vec::with_capacity(centres.len() * KERNEL_SCALES.len());
                let log_scales = (KERNEL_SCALES.len() as f64).ln();
                for (c, count) in centres {
                    let lw = (*count as f64 / *total as f64).ln();
                    for scale in KERNEL_SCALES {
                        let mut l = lw - log_scales;
                        for ((p, ui), ci) in ps.iter().zip(&u).zip(c) {
                            let h = p.flat_width() * scale;
                            if h > 0.0 {
                                let z = (ui - ci) / h;
                                l -= 0.5 * z * z + h.ln() + 0.5 * LN_2PI;
                            }
                        }
                        terms.push(l);
                    }
                }
                log_sum_exp(&terms) + jac
            }
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Systematic resampling of `m` indices from normalized log weights,
/// returned as distinct indices with counts.
fn resample<R: Rng + ?Sized>(log_weights: &[f64], m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let u0: f64 = rng.random_range(0.0..1.0);
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut acc = 0.0;
    let mut j = 0usize;
    for (i, lw) in log_weights.iter().enumerate() {
        acc += lw.exp() * m as f64;
        let mut count = 0;
        while j < m && (j as f64 + u0) < acc {
            count += 1;
            j += 1;
        }
        if count > 0 {
            out.push((i, count));
        }
    }
    if j < m {
        // Rounding left a remainder; give it to the heaviest particle.
        let best = (0..log_weights.len()).max_by(|&a, &b| log_weights[a].total_cmp(&log_weights[b])).unwrap_or(0);
        match out.iter_mut().find(|(i, _)| *i == best) {
            Some(e) => e.1 += m - j,
            None => out.push((best, m - j)),
        }
    }
    out
}

/// Importance sampling with `n` proposals in total. Returns the weighted
/// samples and `eval`'s payload for each. Draws outside the prior's support
/// are discarded unevaluated; evaluation errors count as failures.
pub fn importance_sample<T, F>(
    priors: &PriorSet,
    n: usize,
    seed: u64,
    proposal: Proposal,
    eval: F,
) -> Result<(HyperPosterior, Vec<Option<T>>)>
where
    T: Send,
    F: Fn(&[f64]) -> Result<(f64, T)> + Sync,
{
    let rounds = match proposal {
        Proposal::Prior => 1,
        Proposal::Adaptive { rounds } => rounds.max(1),
    };
    if rounds == 1 {
        let samples = priors.draw_samples(n, seed)?;
        let (lls, outs, failures) = evaluate_payloads(&samples, &eval);
        let hp = HyperPosterior::from_log_likelihoods(priors.names().to_vec(), samples, lls, failures)?;
        return Ok((hp, outs));
    }
    if n < rounds {
        return Err(param_err(format!("adaptive sampling needs at least {rounds} samples, got {n}")));
    }

    let mut rng = crate::rng_from_seed(seed);
    let sizes: Vec<usize> = (0..rounds).map(|r| n / rounds + usize::from(r < n % rounds)).collect();
    let mut comps: Vec<Component> = Vec::with_capacity(rounds);
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut lls: Vec<f64> = Vec::new();
    let mut outs: Vec<Option<T>> = Vec::new();
    let mut log_q: Vec<Vec<f64>> = Vec::new();
    let mut failures = 0;
    let log_mass = priors.log_constraint_mass(seed)?;

    for (r, &m) in sizes.iter().enumerate() {
        let log_iw = mixture_weights(priors, &samples, &lls, &log_q, &sizes[..r]);
        let comp = match log_iw {
            Some(lw) if r > 0 => {
                let centres = resample(&lw, m, &mut rng)
                    .into_iter()
                    .map(|(i, c)| {
                        let flat = priors.priors().iter().zip(&samples[i]).map(|(p, v)| p.flat(*v)).collect();
                        (flat, c)
                    })
                    .collect();
                Component::Kernel { centres, total: m }
            }
            _ => Component::Prior { log_mass },
        };
        let draws = draw_component(&comp, priors, m, &mut rng)?;
        for (theta, row) in samples.iter().zip(log_q.iter_mut()) {
            row.push(comp.log_density(priors, theta));
        }
        comps.push(comp);

        let valid: Vec<Vec<f64>> = draws
            .into_iter()
            .filter(|t| priors.log_density(t) > f64::NEG_INFINITY)
            .collect();
        let (round_lls, round_outs, round_failures) = evaluate_payloads(&valid, &eval);
        failures += round_failures;
        for theta in &valid {
            log_q.push(comps.iter().map(|c| c.log_density(priors, theta)).collect());
        }
        samples.extend(valid);
        lls.extend(round_lls);
        outs.extend(round_outs);
    }

    if samples.is_empty() {
        return Err(Error::Inference("no proposal fell inside the prior support".into()));
    }
    let log_iw = importance_logs(priors, &samples, &lls, &log_q, &sizes);
    let hp = HyperPosterior::from_importance(priors.names().to_vec(), samples, lls, log_iw, failures)?;
    Ok((hp, outs))
}

fn evaluate_payloads<T, F>(samples: &[Vec<f64>], eval: &F) -> (Vec<f64>, Vec<Option<T>>, usize)
where
    T: Send,
    F: Fn(&[f64]) -> Result<(f64, T)> + Sync,
{
    let results = evaluate_samples(samples, |_, theta| eval(theta));
    let failures = results.iter().filter(|r| r.is_err()).count();
    let (lls, outs) = results
        .into_iter()
        .map(|r| match r {
            Ok((ll, t)) => (ll, Some(t)),
            Err(_) => (f64::NEG_INFINITY, None),
        })
        .unzip();
    (lls, outs, failures)
}

fn draw_component<R: Rng + ?Sized>(comp: &Component, priors: &PriorSet, m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    match comp {
        Component::Prior { .. } => (0..m).map(|_| priors.draw(rng)).collect(),
        Component::Kernel { centres, .. } => {
            let ps = priors.priors();
            let mut out = Vec::with_capacity(m);
            for (c, count) in centres {
                for _ in 0..*count {
                    let scale = KERNEL_SCALES[rng.random_range(0..KERNEL_SCALES.len())];
                    let theta = ps
                        .iter()
                        .zip(c)
                        .map(|(p, ci)| {
                            let h = p.flat_width() * scale;
                            let z: f64 = rng.sample(rand_distr::StandardNormal);
                            p.unflatten(ci + h * z)
                        })
                        .collect();
                    out.push(theta);
                }
            }
            Ok(out)
        }
    }
}

/// Log importance weights against the size-weighted mixture of the first
/// `sizes.len()` proposals, or `None` when every weight is zero.
fn mixture_weights(priors: &PriorSet, samples: &[Vec<f64>], lls: &[f64], log_q: &[Vec<f64>], sizes: &[usize]) -> Option<Vec<f64>> {
    if samples.is_empty() {
        return None;
    }
    let iw = importance_logs(priors, samples, lls, log_q, sizes);
    let lse = log_sum_exp(&iw);
    lse.is_finite().then(|| iw.iter().map(|w| w - lse).collect())
}

fn importance_logs(priors: &PriorSet, samples: &[Vec<f64>], lls: &[f64], log_q: &[Vec<f64>], sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    let log_frac: Vec<f64> = sizes.iter().map(|s| (*s as f64 / total as f64).ln()).collect();
    samples
        .iter()
        .zip(lls)
        .zip(log_q)
        .map(|((theta, ll), q)| {
            if *ll == f64::NEG_INFINITY || ll.is_nan() {
                return f64::NEG_INFINITY;
            }
            let terms: Vec<f64> = log_frac.iter().zip(q).map(|(f, l)| f + l).collect();
            priors.log_density(theta) + ll - log_sum_exp(&terms)
        })
        .collect()
}

/// Importance sampling with `n` prior draws.
pub fn mc_marginalize<F>(priors: &PriorSet, n: usize, seed: u64, log_likelihood: F) -> Result<HyperPosterior>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let samples = priors.draw_samples(n, seed)?;
    mc_marginalize_samples(priors, samples, log_likelihood)
}

/// Moment-matched Gaussian mixture of per-component estimates.
pub fn mixture(weights: &[f64], components: &[&PosteriorEstimate]) -> PosteriorEstimate {
    assert_eq!(weights.len(), components.len());
    let m = components.first().map_or(0, |c| c.len());
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; m];
    for (w, c) in weights.iter().zip(components) {
        for i in 0..m {
            mean[i] += w * c.mean[i];
        }
    }
    for v in &mut mean {
        *v /= total;
    }
    // Centred form: within-component plus between-component spread.
    let mut var = vec![0.0; m];
    for (w, c) in weights.iter().zip(components) {
        for i in 0..m {
            let d = c.mean[i] - mean[i];
            var[i] += w * (c.variance[i] + d * d);
        }
    }
    for (i, v) in var.iter_mut().enumerate() {
        *v /= total;
        let floor = components.iter().map(|c| c.variance[i]).fold(f64::INFINITY, f64::min);
        // Rounding in the weighted average must not undercut the smallest component.
        *v = v.max(floor);
    }
    PosteriorEstimate::new(mean, var)
}

/// Evidence-weighted mixture of per-sample predictions. Samples whose weight
/// underflows to zero are not evaluated.
pub fn marginal_predict<F>(hp: &HyperPosterior, predictor: F) -> Result<PosteriorEstimate>
where
    F: Fn(&[f64]) -> Result<PosteriorEstimate> + Sync,
{
    let weights = hp.weights();
    let live = hp.live();
    let live_samples: Vec<Vec<f64>> = live.iter().map(|&i| hp.samples[i].clone()).collect();
    let preds = evaluate_samples(&live_samples, |_, theta| predictor(theta))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = live.iter().map(|&i| weights[i]).collect();
    let refs: Vec<&PosteriorEstimate> = preds.iter().collect();
    Ok(mixture(&w, &refs))
}
