//! Seeded synthetic scenarios.
//!
//! Every generator draws from one ChaCha8 stream in a fixed order (truth,
//! fault, noise), so a `(config, seed)` pair reproduces a scenario bit for
//! bit. Constants not pinned by any measurement are synthetic defaults.

use rand_distr::{Distribution, Normal};

use crate::error::{param_err, Result};
use crate::faults::{FaultKind, FaultSpec};
use crate::gp::{PriorSampler, TimeSeries};
use crate::kernels::{Covariance, KernelSpec, LengthScaleTable};
use crate::mrl::{Link, MrlKernel, RegionModel};
use crate::separation::SeparationModel;

/// Default observation noise variance of the tracking scenarios.
pub const TRACKING_NOISE: f64 = 0.001;

/// Evenly spaced grid `lo, lo + step, ...` up to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(param_err(format!("bad grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

/// A synthetic data set `y = f + e + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Real process `f`.
    pub truth: TimeSeries,
    /// Fault or artifact process `e` (all zeros when absent).
    pub fault: TimeSeries,
    pub observed: TimeSeries,
    pub seed: u64,
    /// Generating configuration as `key = value` pairs.
    pub params: Vec<(String, String)>,
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    name: &str,
    t: Vec<f64>,
    f: Vec<f64>,
    e: Vec<f64>,
    noise_std: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    seed: u64,
    params: Vec<(String, String)>,
) -> Result<Scenario> {
    let normal = Normal::new(0.0, noise_std).map_err(|e| param_err(e.to_string()))?;
    let y: Vec<f64> = f.iter().zip(&e).map(|(a, b)| a + b + normal.sample(rng)).collect();
    Ok(Scenario {
        name: name.to_string(),
        truth: TimeSeries::new(t.clone(), f)?,
        fault: TimeSeries::new(t.clone(), e)?,
        observed: TimeSeries::new(t, y)?,
        seed,
        params,
    })
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Tracking scenario: SE trajectory, one fault episode, white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    pub step: f64,
    pub real: KernelSpec,
    pub fault: FaultSpec,
    pub noise: f64,
}

impl TrackingConfig {
    /// Defaults: `t ∈ [0, 100]`, SE(μ = 1, L = 15) trajectory, fault window
    /// `(40, 70]`, transition at 55, `μ = 1`, `L = 10`, `k_b_link = 0.5`.
    pub fn default_for(kind: FaultKind) -> Self {
        let fault = match kind {
            FaultKind::Bias => FaultSpec::bias(40.0, 70.0, 1.0),
            FaultKind::Drift => FaultSpec::drift(40.0, 70.0, 1.0, 10.0),
            FaultKind::DriftThenBias => FaultSpec::drift_then_bias(40.0, 55.0, 70.0, 1.0, 10.0, 0.5),
        }
        .expect("valid default fault");
        Self {
            t_lo: 0.0,
            t_hi: 100.0,
            step: 1.0,
            real: KernelSpec::squared_exponential(1.0, 15.0).expect("valid default kernel"),
            fault,
            noise: TRACKING_NOISE,
        }
    }
}

pub fn gen_tracking(kind: FaultKind, seed: u64) -> Result<Scenario> {
    gen_tracking_with(&TrackingConfig::default_for(kind), seed)
}

pub fn gen_tracking_with(cfg: &TrackingConfig, seed: u64) -> Result<Scenario> {
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(param_err(format!("noise variance must be >= 0, got {}", cfg.noise)));
    }
    let t = grid(cfg.t_lo, cfg.t_hi, cfg.step)?;
    let mut rng = crate::rng_from_seed(seed);
    let f = PriorSampler::new(&cfg.real, &t)?.draw(&mut rng);
    let e = PriorSampler::new(&cfg.fault.kernel()?, &t)?.draw(&mut rng);
    let s = &cfg.fault;
    let mut params = vec![
        kv("scenario", "tracking"),
        kv("t_lo", cfg.t_lo),
        kv("t_hi", cfg.t_hi),
        kv("step", cfg.step),
        kv("real", format!("{:?}", cfg.real)),
        kv("fault_kind", s.kind),
        kv("t0", s.t0),
        kv("t1", s.t1),
        kv("mu", s.mu),
    ];
    if s.kind != FaultKind::Bias {
        params.push(kv("length", s.length));
    }
    if s.kind == FaultKind::DriftThenBias {
        params.push(kv("t_m", s.t_m));
        params.push(kv("k_b_link", s.k_b_link));
    }
    params.push(kv("noise", cfg.noise));
    assemble(
        &format!("tracking_{}", s.kind),
        t,
        f,
        e,
        cfg.noise.sqrt(),
        &mut rng,
        seed,
        params,
    )
}

/// Length scale 35 up to and including 130, 15 after.
pub fn gibbs_demo_table() -> LengthScaleTable {
    LengthScaleTable::new(vec![130.0], vec![35.0, 15.0]).expect("valid table")
}

pub fn gibbs_demo_kernel() -> KernelSpec {
    KernelSpec::gibbs(1.0, gibbs_demo_table()).expect("valid kernel")
}

/// The MRL counterpart of the Gibbs demo: SE(1, 35) and SE(1, 15) joined by
/// value at 130 with unit boundary variance.
pub fn mrl_demo_model() -> RegionModel {
    RegionModel::two_region(
        KernelSpec::squared_exponential(1.0, 35.0).expect("valid kernel"),
        KernelSpec::squared_exponential(1.0, 15.0).expect("valid kernel"),
        130.0,
        Link::Value { variance: 1.0 },
    )
    .expect("valid model")
}

/// Draw from the Gibbs kernel over `[0, 260]`; no fault.
pub fn gen_gibbs_demo(seed: u64) -> Result<Scenario> {
    let t = grid(0.0, 260.0, 1.0)?;
    let mut rng = crate::rng_from_seed(seed);
    let f = PriorSampler::new(&gibbs_demo_kernel(), &t)?.draw(&mut rng);
    let e = vec![0.0; t.len()];
    let params = vec![
        kv("scenario", "gibbs_demo"),
        kv("length_left", 35),
        kv("length_right", 15),
        kv("change_point", 130),
        kv("noise", TRACKING_NOISE),
    ];
    assemble("gibbs_demo", t, f, e, TRACKING_NOISE.sqrt(), &mut rng, seed, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Snr {
    Low,
    High,
}

impl Snr {
    pub fn noise_std(&self) -> f64 {
        match self {
            Self::Low => 0.2,
            Self::High => 0.02,
        }
    }
}

impl std::str::FromStr for Snr {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "low" => Ok(Self::Low),
            "high" => Ok(Self::High),
            other => Err(param_err(format!("snr must be low or high, got '{other}'"))),
        }
    }
}

pub const WEDGE_APEX: f64 = 100.0;
pub const WEDGE_SLOPE: f64 = 0.02;

/// `0.02·(100 − |x − 100|)`: rises from 0 at x = 0 to 2 at the apex, back to 0 at 200.
pub fn wedge(x: f64) -> f64 {
    WEDGE_SLOPE * (WEDGE_APEX - (x - WEDGE_APEX).abs())
}

pub fn gen_wedge(snr: Snr, seed: u64) -> Result<Scenario> {
    let t = grid(0.0, 200.0, 1.0)?;
    let mut rng = crate::rng_from_seed(seed);
    let f: Vec<f64> = t.iter().map(|x| wedge(*x)).collect();
    let e = vec![0.0; t.len()];
    let params = vec![
        kv("scenario", "wedge"),
        kv("snr", if snr == Snr::Low { "low" } else { "high" }),
        kv("slope", WEDGE_SLOPE),
        kv("apex", WEDGE_APEX),
        kv("noise_std", snr.noise_std()),
    ];
    assemble("wedge", t, f, e, snr.noise_std(), &mut rng, seed, params)
}

/// Separation scenario settings: SE signal with residuals plus an optional
/// artifact drawn from the windowed artifact prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    pub step: f64,
    pub model: SeparationModel,
    pub with_artifact: bool,
}

impl Default for SeparationConfig {
    /// `t ∈ [0, 100]`, signal SE(1, 8) with residual 0.01, artifact window
    /// `[35, 65]` with SE(25, 4) halves and residual 1e-4: a large, brief
    /// excursion over a smaller background signal.
    fn default() -> Self {
        Self {
            t_lo: 0.0,
            t_hi: 100.0,
            step: 1.0,
            model: SeparationModel {
                mu_sig: 1.0,
                l_sig: 8.0,
                mu_art: 25.0,
                l_art: 4.0,
                t_s: 35.0,
                t_e: 65.0,
                r_sig: 0.01,
                r_art: 1e-4,
                k_mid: None,
            },
            with_artifact: true,
        }
    }
}

/// `truth` is the signal mean, `fault` the artifact mean; residuals of both
/// components are folded into `observed`.
pub fn gen_separation(cfg: &SeparationConfig, seed: u64) -> Result<Scenario> {
    let m = &cfg.model;
    m.validate()?;
    let t = grid(cfg.t_lo, cfg.t_hi, cfg.step)?;
    let mut rng = crate::rng_from_seed(seed);
    let f = PriorSampler::new(&m.sig_kernel()?, &t)?.draw(&mut rng);
    let e = if cfg.with_artifact {
        PriorSampler::new(&m.art_kernel()?, &t)?.draw(&mut rng)
    } else {
        vec![0.0; t.len()]
    };
    let r_art = if cfg.with_artifact { m.r_art } else { 0.0 };
    let params = vec![
        kv("scenario", "separation"),
        kv("mu_sig", m.mu_sig),
        kv("l_sig", m.l_sig),
        kv("mu_art", m.mu_art),
        kv("l_art", m.l_art),
        kv("t_s", m.t_s),
        kv("t_e", m.t_e),
        kv("r_sig", m.r_sig),
        kv("r_art", r_art),
        kv("with_artifact", cfg.with_artifact),
    ];
    assemble("separation", t, f, e, (m.r_sig + r_art).sqrt(), &mut rng, seed, params)
}

/// Mean over draws of `(f(b) − f(a))²`, an empirical jump statistic.
pub fn sample_jump_statistic<C: Covariance + ?Sized>(k: &C, a: f64, b: f64, draws: usize, seed: u64) -> Result<f64> {
    let sampler = PriorSampler::new(k, &[a, b])?;
    let mut rng = crate::rng_from_seed(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let v = sampler.draw(&mut rng);
        acc += (v[1] - v[0]).powi(2);
    }
    Ok(acc / draws as f64)
}

/// Analytic jump statistic `K(a,a) + K(b,b) − 2K(a,b)`.
pub fn jump_statistic<C: Covariance + ?Sized>(k: &C, a: f64, b: f64) -> Result<f64> {
    Ok(k.cov(a, a)? + k.cov(b, b)? - 2.0 * k.cov(a, b)?)
}

/// MRL kernel of [`mrl_demo_model`].
pub fn mrl_demo_kernel() -> MrlKernel {
    MrlKernel::new(mrl_demo_model()).expect("valid model")
}
