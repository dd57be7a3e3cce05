//! Fault-process priors and fault removal.
//!
//! Observations are `y = f + e + ε` with a stationary real process `f` and a
//! fault process `e` that is zero outside the window `(t0, t1]`:
//!
//! * **bias**: a constant offset of variance `μ` inside the window;
//! * **drift**: a squared-exponential process pinned to zero at `t0` (MRL
//!   with `K_B = 0`), so it grows gradually and snaps back at `t1`;
//! * **drift-then-bias**: drift on `(t0, t_m]` that comes to rest at a bias
//!   with variance `k_b_link`, value-continuous at `t_m`.
//!
//! [`remove_fault`] marginalizes the fault hyperparameters by importance
//! sampling and reports moment-matched posteriors for `f` and `e`.
//! [`online_filter`] gives the causal version.

use std::fmt;

use nalgebra::DMatrix;
use std::str::FromStr;

use crate::error::{param_err, Error, Result};
use crate::gp::{Conditioner, PosteriorEstimate, TimeSeries};
use crate::hyper::{
    evaluate_samples, evaluate_states, importance_sample, mixture, HyperPosterior, Prior, PriorSet, Proposal, DEFAULT_SAMPLES,
};
use crate::kernels::{Cached, Covariance, GramMatrix, KernelSpec, SumCov};
use crate::mrl::{Link, MrlKernel, RegionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    Bias,
    Drift,
    DriftThenBias,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [Self::Bias, Self::Drift, Self::DriftThenBias];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bias => "bias",
            Self::Drift => "drift",
            Self::DriftThenBias => "drift_then_bias",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bias" => Ok(Self::Bias),
            "drift" => Ok(Self::Drift),
            "drift_then_bias" => Ok(Self::DriftThenBias),
            other => Err(param_err(format!(
                "unknown fault kind '{other}' (expected bias, drift or drift_then_bias)"
            ))),
        }
    }
}

/// One fault episode. Fields a kind does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub t0: f64,
    pub t1: f64,
    /// Bias variance, or drift output scale.
    pub mu: f64,
    /// Drift length scale.
    pub length: f64,
    /// Drift-to-bias transition.
    pub t_m: f64,
    /// Boundary variance at `t_m`; the bias segment's variance.
    pub k_b_link: f64,
}

impl FaultSpec {
    pub fn bias(t0: f64, t1: f64, mu: f64) -> Result<Self> {
        let s = Self {
            kind: FaultKind::Bias,
            t0,
            t1,
            mu,
            length: 1.0,
            t_m: t0,
            k_b_link: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn drift(t0: f64, t1: f64, mu: f64, length: f64) -> Result<Self> {
        let s = Self {
            kind: FaultKind::Drift,
            t0,
            t1,
            mu,
            length,
            t_m: t0,
            k_b_link: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn drift_then_bias(t0: f64, t_m: f64, t1: f64, mu: f64, length: f64, k_b_link: f64) -> Result<Self> {
        let s = Self {
            kind: FaultKind::DriftThenBias,
            t0,
            t1,
            mu,
            length,
            t_m,
            k_b_link,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t0 < self.t1) {
            return Err(param_err(format!("fault window needs t0 < t1, got ({}, {})", self.t0, self.t1)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(param_err(format!("fault magnitude must be >= 0, got {}", self.mu)));
        }
        if self.kind != FaultKind::Bias && !(self.length.is_finite() && self.length > 0.0) {
            return Err(param_err(format!("drift length scale must be positive, got {}", self.length)));
        }
        if self.kind == FaultKind::DriftThenBias {
            if !(self.t0 < self.t_m && self.t_m < self.t1) {
                return Err(param_err(format!(
                    "drift_then_bias needs t0 < t_m < t1, got ({}, {}, {})",
                    self.t0, self.t_m, self.t1
                )));
            }
            if !(self.k_b_link.is_finite() && self.k_b_link >= 0.0) {
                return Err(param_err(format!("k_b_link must be >= 0, got {}", self.k_b_link)));
            }
        }
        Ok(())
    }

    /// `t ∈ (t0, t1]`.
    pub fn in_window(&self, t: f64) -> bool {
        t > self.t0 && t <= self.t1
    }

    pub fn kernel(&self) -> Result<FaultKernel> {
        self.validate()?;
        let inner = match self.kind {
            FaultKind::Bias => Inner::Bias,
            FaultKind::Drift => Inner::Drift,
            FaultKind::DriftThenBias => {
                let model = RegionModel::new(
                    vec![self.t0, self.t_m, self.t1],
                    vec![
                        KernelSpec::Zero,
                        KernelSpec::squared_exponential(self.mu, self.length)?,
                        KernelSpec::constant(self.k_b_link)?,
                        KernelSpec::Zero,
                    ],
                    vec![
                        Link::Value { variance: 0.0 },
                        Link::Value {
                            variance: self.k_b_link,
                        },
                        Link::Cut,
                    ],
                )?;
                Inner::Chain(Box::new(MrlKernel::new(model)?))
            }
        };
        Ok(FaultKernel { spec: *self, inner })
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Bias,
    Drift,
    Chain(Box<MrlKernel>),
}

/// Covariance of a fault process; exactly zero unless both points lie in
/// `(t0, t1]`.
#[derive(Debug, Clone)]
pub struct FaultKernel {
    spec: FaultSpec,
    inner: Inner,
}

impl FaultKernel {
    pub fn spec(&self) -> &FaultSpec {
        &self.spec
    }
}

impl Covariance for FaultKernel {
    fn cov(&self, a: f64, b: f64) -> Result<f64> {
        let s = &self.spec;
        if !(s.in_window(a) && s.in_window(b)) {
            return Ok(0.0);
        }
        Ok(match &self.inner {
            Inner::Bias => s.mu,
            Inner::Drift => {
                let l2 = s.length * s.length;
                let (da, db, d) = (a - s.t0, b - s.t0, a - b);
                s.mu * ((-d * d / l2).exp() - (-da * da / l2).exp() * (-db * db / l2).exp())
            }
            Inner::Chain(k) => k.cov(a, b)?,
        })
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        let Inner::Chain(k) = &self.inner else {
            return default_cov_matrix(self, xs, ys);
        };
        let (ri, xin) = self.window_subset(xs);
        let (ci, yin) = self.window_subset(ys);
        let inner = k.cov_matrix(&xin, &yin)?;
        let mut m = DMatrix::zeros(xs.len(), ys.len());
        for (a, &i) in ri.iter().enumerate() {
            for (b, &j) in ci.iter().enumerate() {
                m[(i, j)] = inner[(a, b)];
            }
        }
        Ok(m)
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let Inner::Chain(k) = &self.inner else {
            return default_cov_sym(self, xs);
        };
        let (idx, xin) = self.window_subset(xs);
        let inner = k.cov_sym(&xin)?;
        let mut m = DMatrix::zeros(xs.len(), xs.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(i, j)] = inner[(a, b)];
            }
        }
        Ok(m)
    }
}

impl FaultKernel {
    fn window_subset(&self, xs: &[f64]) -> (Vec<usize>, Vec<f64>) {
        xs.iter()
            .enumerate()
            .filter(|(_, x)| self.spec.in_window(**x))
            .map(|(i, x)| (i, *x))
            .unzip()
    }
}

fn default_cov_matrix<C: Covariance>(k: &C, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(xs.len(), ys.len());
    for (i, &a) in xs.iter().enumerate() {
        for (j, &b) in ys.iter().enumerate() {
            m[(i, j)] = k.cov(a, b)?;
        }
    }
    Ok(m)
}

fn default_cov_sym<C: Covariance>(k: &C, xs: &[f64]) -> Result<DMatrix<f64>> {
    let n = xs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = k.cov(xs[i], xs[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn require_kind(spec: &FaultSpec, kind: FaultKind) -> Result<()> {
    if spec.kind == kind {
        Ok(())
    } else {
        Err(param_err(format!("expected a {kind} fault, got {}", spec.kind)))
    }
}

pub fn bias_cov(spec: &FaultSpec, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
    require_kind(spec, FaultKind::Bias)?;
    GramMatrix::of(&spec.kernel()?, xs, ys)
}

pub fn drift_cov(spec: &FaultSpec, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
    require_kind(spec, FaultKind::Drift)?;
    GramMatrix::of(&spec.kernel()?, xs, ys)
}

pub fn drift_then_bias_cov(spec: &FaultSpec, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
    require_kind(spec, FaultKind::DriftThenBias)?;
    GramMatrix::of(&spec.kernel()?, xs, ys)
}

/// Priors over one fault kind's hyperparameters and the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPriors {
    pub kind: FaultKind,
    pub t0: Prior,
    pub t1: Prior,
    pub mu: Prior,
    pub length: Prior,
    pub t_m: Prior,
    pub k_b_link: Prior,
    pub noise: Prior,
}

impl FaultPriors {
    /// Vague defaults over the span `[lo, hi]` of the data: uniform onset,
    /// end and transition (ordered by rejection), log-uniform scales.
    pub fn vague(kind: FaultKind, lo: f64, hi: f64) -> Result<Self> {
        let span = hi - lo;
        if !(span > 0.0) {
            return Err(param_err("fault priors need a data span of positive length"));
        }
        let window = Prior::uniform(lo, hi)?;
        Ok(Self {
            kind,
            t0: window,
            t1: window,
            mu: Prior::log_uniform(1e-3, 1e2)?,
            length: if span > 1.0 {
                Prior::log_uniform(1.0, span)?
            } else {
                Prior::fixed(1.0)?
            },
            t_m: window,
            k_b_link: Prior::log_uniform(1e-3, 1e2)?,
            noise: Prior::log_uniform(1e-4, 1e-1)?,
        })
    }

    pub fn for_series(kind: FaultKind, train: &TimeSeries) -> Result<Self> {
        match (train.t().first(), train.t().last()) {
            (Some(a), Some(b)) => Self::vague(kind, *a, *b),
            _ => Err(Error::Data("empty series".into())),
        }
    }

    pub fn prior_set(&self) -> Result<PriorSet> {
        let mut ps = PriorSet::new().with("t0", self.t0);
        if self.kind == FaultKind::DriftThenBias {
            ps = ps.with("t_m", self.t_m);
        }
        ps = ps.with("t1", self.t1).with("mu", self.mu);
        if self.kind != FaultKind::Bias {
            ps = ps.with("length", self.length);
        }
        if self.kind == FaultKind::DriftThenBias {
            ps = ps.with("k_b_link", self.k_b_link);
        }
        ps = ps.with("noise", self.noise);
        if self.kind == FaultKind::DriftThenBias {
            ps.less_than("t0", "t_m")?.less_than("t_m", "t1")
        } else {
            ps.less_than("t0", "t1")
        }
    }

    /// Fault specification and noise variance for a vector drawn from
    /// [`FaultPriors::prior_set`].
    pub fn decode(&self, theta: &[f64]) -> Result<(FaultSpec, f64)> {
        let mut it = theta.iter().cloned();
        let mut next = || it.next().ok_or_else(|| param_err("hyperparameter vector too short"));
        let t0 = next()?;
        let spec = match self.kind {
            FaultKind::Bias => {
                let t1 = next()?;
                FaultSpec::bias(t0, t1, next()?)?
            }
            FaultKind::Drift => {
                let t1 = next()?;
                let mu = next()?;
                FaultSpec::drift(t0, t1, mu, next()?)?
            }
            FaultKind::DriftThenBias => {
                let t_m = next()?;
                let t1 = next()?;
                let mu = next()?;
                let length = next()?;
                FaultSpec::drift_then_bias(t0, t_m, t1, mu, length, next()?)?
            }
        };
        let noise = next()?;
        Ok((spec, noise))
    }
}

/// Fault removal settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalConfig {
    /// Kernel of the real process.
    pub real: KernelSpec,
    pub priors: FaultPriors,
    pub n_samples: usize,
    pub seed: u64,
    pub proposal: Proposal,
}

impl RemovalConfig {
    pub fn new(real: KernelSpec, priors: FaultPriors) -> Self {
        Self {
            real,
            priors,
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            proposal: Proposal::Prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultRemovalResult {
    /// Real process `f`.
    pub clean: PosteriorEstimate,
    /// Fault process `e`.
    pub fault: PosteriorEstimate,
    /// `f + e`, i.e. the posterior under `K_f + K_e`.
    pub total: PosteriorEstimate,
    pub hyper: HyperPosterior,
}

struct SampleModel {
    fault: FaultKernel,
    noise: f64,
}

fn sample_model(cfg: &RemovalConfig, theta: &[f64]) -> Result<SampleModel> {
    let (spec, noise) = cfg.priors.decode(theta)?;
    Ok(SampleModel {
        fault: spec.kernel()?,
        noise,
    })
}

struct Triple {
    clean: PosteriorEstimate,
    fault: PosteriorEstimate,
    total: PosteriorEstimate,
}

fn predict_all<R: Covariance>(cond: &Conditioner, real: &R, fault: &FaultKernel, xs: &[f64]) -> Result<Triple> {
    let (clean, fault, total) = cond.predict_split(real, fault, xs)?;
    Ok(Triple { clean, fault, total })
}

fn combine(weights: &[f64], triples: &[Triple]) -> (PosteriorEstimate, PosteriorEstimate, PosteriorEstimate) {
    let pick = |f: fn(&Triple) -> &PosteriorEstimate| -> PosteriorEstimate {
        let refs: Vec<&PosteriorEstimate> = triples.iter().map(f).collect();
        mixture(weights, &refs)
    };
    (pick(|t| &t.clean), pick(|t| &t.fault), pick(|t| &t.total))
}

/// Fault removal evaluated at the training locations.
pub fn remove_fault(train: &TimeSeries, cfg: &RemovalConfig) -> Result<FaultRemovalResult> {
    if train.is_empty() {
        return Err(Error::Data("fault removal needs at least one observation".into()));
    }
    remove_fault_at(train, train.t(), cfg)
}

/// Fault removal evaluated at arbitrary query locations. An empty training
/// set yields the prior mixture.
pub fn remove_fault_at(train: &TimeSeries, xs: &[f64], cfg: &RemovalConfig) -> Result<FaultRemovalResult> {
    let priors = cfg.priors.prior_set()?;
    let real = Cached::new(&cfg.real).with_sym(train.t())?.with_cross(xs, train.t())?;
    let (hyper, _) = importance_sample(&priors, cfg.n_samples, cfg.seed, cfg.proposal, |theta| {
        let m = sample_model(cfg, theta)?;
        Ok((Conditioner::new(train, &SumCov(&real, &m.fault), m.noise)?.log_evidence(), ()))
    })?;

    let weights = hyper.weights();
    let live = hyper.live();
    let live_samples: Vec<Vec<f64>> = live.iter().map(|&i| hyper.samples[i].clone()).collect();
    let triples = evaluate_samples(&live_samples, |_, theta| {
        let m = sample_model(cfg, theta)?;
        let cond = Conditioner::new(train, &SumCov(&real, &m.fault), m.noise)?;
        predict_all(&cond, &real, &m.fault, xs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = live.iter().map(|&i| weights[i]).collect();
    let (clean, fault, total) = combine(&w, &triples);
    Ok(FaultRemovalResult {
        clean,
        fault,
        total,
        hyper,
    })
}

/// Causal estimate at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineStep {
    pub t: f64,
    pub clean: PosteriorEstimate,
    pub fault: PosteriorEstimate,
}

/// For every `i`, the fault-removal estimate at `t_i` from observations
/// `0..i` only. Step `i` equals [`remove_fault_at`] on the first `i` points
/// queried at `t_i`, bit for bit; factorizations are grown one row at a time.
pub fn online_filter(train: &TimeSeries, cfg: &RemovalConfig) -> Result<Vec<OnlineStep>> {
    if cfg.proposal != Proposal::Prior {
        // Adaptive proposals depend on the data, so every prefix is refit.
        return (0..train.len())
            .map(|i| {
                let query = [train.t()[i]];
                let r = remove_fault_at(&train.prefix(i), &query, cfg)?;
                Ok(OnlineStep {
                    t: query[0],
                    clean: r.clean,
                    fault: r.fault,
                })
            })
            .collect();
    }
    let priors = cfg.priors.prior_set()?;
    let samples = priors.draw_samples(cfg.n_samples, cfg.seed)?;
    let mut states: Vec<(Option<SampleModel>, Option<Conditioner>)> = evaluate_samples(&samples, |_, theta| {
        match sample_model(cfg, theta) {
            Ok(m) => {
                let cond = Conditioner::new(&TimeSeries::empty(), &SumCov(&cfg.real, &m.fault), m.noise).ok();
                (Some(m), cond)
            }
            Err(_) => (None, None),
        }
    });

    let mut out = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let prefix = train.prefix(i);
        let query = [train.t()[i]];
        let lls: Vec<f64> = states
            .iter()
            .map(|(_, c)| c.as_ref().map_or(f64::NEG_INFINITY, |c| c.log_evidence()))
            .collect();
        let failures = states.iter().filter(|(_, c)| c.is_none()).count();
        let hyper = HyperPosterior::from_log_likelihoods(priors.names().to_vec(), samples.clone(), lls, failures)?;
        let weights = hyper.weights();
        let live = hyper.live();
        let triples = live
            .iter()
            .map(|&k| {
                let (m, c) = &states[k];
                predict_all(c.as_ref().expect("live sample"), &cfg.real, &m.as_ref().expect("live sample").fault, &query)
            })
            .collect::<Result<Vec<_>>>()?;
        let w: Vec<f64> = live.iter().map(|&k| weights[k]).collect();
        let (clean, fault, _) = combine(&w, &triples);
        out.push(OnlineStep {
            t: query[0],
            clean,
            fault,
        });

        let (ti, yi) = (train.t()[i], train.y()[i]);
        evaluate_states(&mut states, |(m, c)| {
            let Some(m) = m else { return };
            let k = SumCov(&cfg.real, &m.fault);
            *c = match c.take() {
                Some(mut cond) => cond.push(&k, ti, yi, m.noise).ok().map(|_| cond),
                // Failed on a shorter prefix: retry from scratch.
                None => None,
            };
            if c.is_none() {
                let next = TimeSeries::new(
                    prefix.t().iter().chain([&ti]).cloned().collect(),
                    prefix.y().iter().chain([&yi]).cloned().collect(),
                );
                *c = next.ok().and_then(|s| Conditioner::new(&s, &k, m.noise).ok());
            }
        });
    }
    Ok(out)
}
