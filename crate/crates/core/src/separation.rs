//! Additive separation `y = s_sig + s_art` of a smooth signal and a windowed
//! artifact.
//!
//! Each component is a GP mean plus i.i.d. residuals that belong to the
//! component (`s = m + r`, `r ~ N(0, R)`). The signal mean has an SE prior.
//! The artifact mean is zero outside `[T_s, T_e]`, pinned to zero at both
//! ends, and made of two SE pieces joined by value (not slope) at the
//! midpoint. Observations are processed in time order; at each `t_i` the
//! hidden means are predicted from the earlier points and the observed value
//! is apportioned between the components by precision weighting.

use crate::error::{param_err, Error, Result};
use crate::gp::{dual_posterior, Conditioner, PosteriorEstimate, TimeSeries};
use crate::hyper::{importance_sample, mixture, HyperPosterior, Prior, PriorSet, Proposal};
use crate::kernels::{Covariance, GramMatrix, KernelSpec, SumCov};
use crate::mrl::{Link, MrlKernel, RegionModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One hyperparameter setting of the separation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationModel {
    pub mu_sig: f64,
    pub l_sig: f64,
    /// Shared by both artifact halves.
    pub mu_art: f64,
    pub l_art: f64,
    pub t_s: f64,
    pub t_e: f64,
    pub r_sig: f64,
    pub r_art: f64,
    /// Artifact variance at the midpoint join; `mu_art` when `None`.
    pub k_mid: Option<f64>,
}

impl SeparationModel {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(param_err(format!("{name} must be >= 0, got {v}")))
            }
        };
        nonneg("mu_sig", self.mu_sig)?;
        nonneg("mu_art", self.mu_art)?;
        nonneg("r_sig", self.r_sig)?;
        nonneg("r_art", self.r_art)?;
        if let Some(k) = self.k_mid {
            nonneg("k_mid", k)?;
        }
        for (name, l) in [("l_sig", self.l_sig), ("l_art", self.l_art)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(param_err(format!("{name} must be positive, got {l}")));
            }
        }
        if !(self.t_s.is_finite() && self.t_e.is_finite() && self.t_s < self.t_e) {
            return Err(param_err(format!(
                "artifact window needs T_s < T_e, got ({}, {})",
                self.t_s, self.t_e
            )));
        }
        Ok(())
    }

    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_s + self.t_e)
    }

    pub fn noise(&self) -> f64 {
        self.r_sig + self.r_art
    }

    pub fn sig_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::squared_exponential(self.mu_sig, self.l_sig)
    }

    /// `[zero | SE | SE | zero]` with `K_B = 0` at the window ends and
    /// `K_B = k_mid` at the midpoint.
    pub fn art_model(&self) -> Result<RegionModel> {
        self.validate()?;
        let half = KernelSpec::squared_exponential(self.mu_art, self.l_art)?;
        RegionModel::new(
            vec![self.t_s, self.t_mid(), self.t_e],
            vec![KernelSpec::Zero, half.clone(), half, KernelSpec::Zero],
            vec![
                Link::Value { variance: 0.0 },
                Link::Value {
                    variance: self.k_mid.unwrap_or(self.mu_art),
                },
                Link::Value { variance: 0.0 },
            ],
        )
    }

    pub fn art_kernel(&self) -> Result<MrlKernel> {
        MrlKernel::new(self.art_model()?)
    }
}

pub fn artifact_prior(model: &SeparationModel, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
    model.art_kernel()?.gram(xs, ys)
}

/// Posteriors of the two hidden means given all of `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub sig: PosteriorEstimate,
    pub art: PosteriorEstimate,
}

pub fn hidden_posteriors(model: &SeparationModel, train: &TimeSeries, xs: &[f64], full_cov: bool) -> Result<Hidden> {
    model.validate()?;
    let (sig, art) = dual_posterior(train, xs, &model.sig_kernel()?, &model.art_kernel()?, model.noise(), full_cov)?;
    Ok(Hidden { sig, art })
}

/// Split of one observation between the components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Apportioned {
    pub sig: f64,
    pub art: f64,
    /// Shared by both components: `P_sig P_art / (P_sig + P_art)`.
    pub variance: f64,
}

/// Precision-weighted split of `y` given hidden means and variances.
pub fn apportion(y: f64, m_sig: f64, cov_sig: f64, m_art: f64, cov_art: f64, r_sig: f64, r_art: f64) -> Result<Apportioned> {
    let p_sig = cov_sig + r_sig;
    let p_art = cov_art + r_art;
    let total = p_sig + p_art;
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "signal and artifact predictive variances are both zero".into(),
        ));
    }
    Ok(Apportioned {
        sig: (p_sig * (y - m_art) + p_art * m_sig) / total,
        art: (p_art * (y - m_sig) + p_sig * m_art) / total,
        variance: p_sig * p_art / total,
    })
}

/// Per-point outputs of one sequential pass under fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialPass {
    /// `Σ_i log N(y_i; m_sig + m_art, P_sig + P_art)`.
    pub log_likelihood: f64,
    pub sig: PosteriorEstimate,
    pub art: PosteriorEstimate,
    pub hidden_sig: PosteriorEstimate,
    pub hidden_art: PosteriorEstimate,
}

/// Predict the hidden means at each `t_i` from `t_0..t_{i-1}`, apportion
/// `y_i`, then absorb it.
pub fn sequential_pass(model: &SeparationModel, train: &TimeSeries) -> Result<SequentialPass> {
    model.validate()?;
    let k_sig = model.sig_kernel()?;
    let k_art = model.art_kernel()?;
    let k_sum = SumCov(&k_sig, &k_art);
    let noise = model.noise();
    let n = train.len();
    let mut cond = Conditioner::new(&TimeSeries::empty(), &k_sum, noise)?;
    let g_sig = k_sig.cov_sym(train.t())?;
    let g_art = k_art.cov_sym(train.t())?;
    let mut ll = 0.0;
    let mut out: [Vec<f64>; 7] = Default::default();
    for i in 0..n {
        let (t, y) = (train.t()[i], train.y()[i]);
        let cs: Vec<f64> = (0..i).map(|j| g_sig[(i, j)]).collect();
        let ca: Vec<f64> = (0..i).map(|j| g_art[(i, j)]).collect();
        let hs = cond.predict_point(&cs, g_sig[(i, i)]);
        let ha = cond.predict_point(&ca, g_art[(i, i)]);
        let (ms, vs, ma, va) = (hs.mean[0], hs.variance[0], ha.mean[0], ha.variance[0]);
        let a = apportion(y, ms, vs, ma, va, model.r_sig, model.r_art)?;
        let p = vs + model.r_sig + va + model.r_art;
        let r = y - ms - ma;
        ll += -0.5 * (r * r / p + p.ln() + LN_2PI);
        for (v, x) in out.iter_mut().zip([a.sig, a.art, a.variance, ms, vs, ma, va]) {
            v.push(x);
        }
        let mut row: Vec<f64> = cs.iter().zip(&ca).map(|(p, q)| p + q).collect();
        row.push(g_sig[(i, i)] + g_art[(i, i)] + noise);
        cond.push_with_row(&k_sum, t, y, noise, row)?;
    }
    let [s, a, fv, ms, vs, ma, va] = out;
    Ok(SequentialPass {
        log_likelihood: ll,
        sig: PosteriorEstimate::new(s, fv.clone()),
        art: PosteriorEstimate::new(a, fv),
        hidden_sig: PosteriorEstimate::new(ms, vs),
        hidden_art: PosteriorEstimate::new(ma, va),
    })
}

/// Priors over the eight hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationPriors {
    pub mu_sig: Prior,
    pub l_sig: Prior,
    pub mu_art: Prior,
    pub l_art: Prior,
    pub t_s: Prior,
    pub t_e: Prior,
    pub r_sig: Prior,
    pub r_art: Prior,
}

pub const SEPARATION_PARAMS: [&str; 8] = ["mu_sig", "l_sig", "mu_art", "l_art", "t_s", "t_e", "r_sig", "r_art"];

impl SeparationPriors {
    /// Vague defaults scaled to the data: output scales log-uniform over
    /// `[1e-2, 10]·var(y)`, length scales log-uniform over `[1, span]`, window
    /// uniform over the span (ordered), signal residual log-uniform over
    /// `[1e-4, 1e-1]·var(y)` and artifact residual over `[1e-6, 1e-3]·var(y)`.
    pub fn for_series(train: &TimeSeries) -> Result<Self> {
        let (lo, hi) = match (train.t().first(), train.t().last()) {
            (Some(a), Some(b)) if b > a => (*a, *b),
            _ => return Err(Error::Data("separation needs at least two observations".into())),
        };
        let n = train.len() as f64;
        let mean = train.y().iter().sum::<f64>() / n;
        let var = train.y().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let var = if var > 0.0 { var } else { 1.0 };
        let span = hi - lo;
        let length = if span > 1.0 {
            Prior::log_uniform(1.0, span)?
        } else {
            Prior::fixed(span)?
        };
        Ok(Self {
            mu_sig: Prior::log_uniform(1e-2 * var, 10.0 * var)?,
            l_sig: length,
            mu_art: Prior::log_uniform(1e-2 * var, 10.0 * var)?,
            l_art: length,
            t_s: Prior::uniform(lo, hi)?,
            t_e: Prior::uniform(lo, hi)?,
            r_sig: Prior::log_uniform(1e-4 * var, 1e-1 * var)?,
            r_art: Prior::log_uniform(1e-6 * var, 1e-3 * var)?,
        })
    }

    pub fn prior_set(&self) -> Result<PriorSet> {
        let p = [
            self.mu_sig, self.l_sig, self.mu_art, self.l_art, self.t_s, self.t_e, self.r_sig, self.r_art,
        ];
        SEPARATION_PARAMS
            .iter()
            .zip(p)
            .fold(PriorSet::new(), |s, (n, p)| s.with(n, p))
            .less_than("t_s", "t_e")
    }

    pub fn decode(theta: &[f64]) -> Result<SeparationModel> {
        let [mu_sig, l_sig, mu_art, l_art, t_s, t_e, r_sig, r_art] = <[f64; 8]>::try_from(theta)
            .map_err(|_| param_err(format!("expected 8 hyperparameters, got {}", theta.len())))?;
        let m = SeparationModel {
            mu_sig,
            l_sig,
            mu_art,
            l_art,
            t_s,
            t_e,
            r_sig,
            r_art,
            k_mid: None,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Hyperparameter-marginalized separation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// `ŝ_sig` with fused variance.
    pub sig: PosteriorEstimate,
    /// `ŝ_art` with fused variance.
    pub art: PosteriorEstimate,
    /// One-step-ahead hidden signal mean.
    pub hidden_sig: PosteriorEstimate,
    pub hidden_art: PosteriorEstimate,
    pub hyper: HyperPosterior,
}

impl SeparationResult {
    /// Largest `|ŝ_sig + ŝ_art − y|`.
    pub fn closure_error(&self) -> f64 {
        self.y
            .iter()
            .zip(self.sig.mean.iter().zip(&self.art.mean))
            .map(|(y, (s, a))| (s + a - y).abs())
            .fold(0.0, f64::max)
    }
}

pub fn separate(train: &TimeSeries, priors: &SeparationPriors, n: usize, seed: u64) -> Result<SeparationResult> {
    separate_with(train, priors, n, seed, Proposal::Prior)
}

/// [`separate`] with an explicit sampling proposal.
pub fn separate_with(
    train: &TimeSeries,
    priors: &SeparationPriors,
    n: usize,
    seed: u64,
    proposal: Proposal,
) -> Result<SeparationResult> {
    if train.is_empty() {
        return Err(Error::Data("separation needs at least one observation".into()));
    }
    let ps = priors.prior_set()?;
    let (hyper, passes) = importance_sample(&ps, n, seed, proposal, |theta| {
        let pass = sequential_pass(&SeparationPriors::decode(theta)?, train)?;
        Ok((pass.log_likelihood, pass))
    })?;
    let weights = hyper.weights();
    let (w, live): (Vec<f64>, Vec<&SequentialPass>) = hyper
        .live()
        .into_iter()
        .map(|i| (weights[i], passes[i].as_ref().expect("live sample succeeded")))
        .unzip();
    let pick = |f: fn(&SequentialPass) -> &PosteriorEstimate| {
        let refs: Vec<&PosteriorEstimate> = live.iter().map(|p| f(p)).collect();
        mixture(&w, &refs)
    };
    Ok(SeparationResult {
        t: train.t().to_vec(),
        y: train.y().to_vec(),
        sig: pick(|p| &p.sig),
        art: pick(|p| &p.art),
        hidden_sig: pick(|p| &p.hidden_sig),
        hidden_art: pick(|p| &p.hidden_art),
        hyper,
    })
}
