//! The numbered acceptance checks for the library, each returning a verdict
//! and a one-line summary of the measured quantity.
#![allow(dead_code)]

use super::*;
use mrl_gp::faults::{remove_fault, FaultKind, FaultPriors, FaultSpec, RemovalConfig};
use mrl_gp::gp::{dual_posterior, log_evidence, posterior, posterior_full, sample_prior};
use mrl_gp::hyper::{mc_marginalize, Proposal};
use mrl_gp::kernels::SumCov;
use mrl_gp::mrl::{assemble_global, chain_regions};
use mrl_gp::separation::{separate, SeparationPriors};
use mrl_gp::simulate::{
    gen_separation, gen_tracking_with, gibbs_demo_kernel, jump_statistic, mrl_demo_kernel,
    sample_jump_statistic, SeparationConfig, TrackingConfig,
};
use mrl_gp::{Covariance, MrlKernel, Prior, PriorSet, TimeSeries};
use rand::Rng;
use rand_distr::Normal;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_train<R: Rng>(rng: &mut R, n: usize, span: f64) -> TimeSeries {
    let t = random_points(rng, n, span);
    let y = t.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    TimeSeries::new(t, y).unwrap()
}

/// Posterior mean and covariance against dense joint conditioning, 100
/// random instances with up to 8 training and 8 query points.
pub fn regression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = Kern::Se {
            mu: rng.random_range(0.5..2.0),
            l: rng.random_range(0.5..3.0),
        };
        let noise = rng.random_range(0.01..0.5);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let train = random_train(&mut rng, n, 5.0);
        let xs = random_points(&mut rng, m, 5.0);
        let g = |a: &[f64], b: &[f64]| DMatrix::from_fn(a.len(), b.len(), |i, j| k.k(a[i], b[j]));
        let (mean, cov) = dense_condition(&g(train.t(), train.t()), &g(&xs, train.t()), &g(&xs, &xs), train.y(), noise);
        let post = posterior_full(&train, &xs, &k.spec(), noise).unwrap();
        let pc = post.cov.as_ref().unwrap();
        worst = worst.max(max_abs_diff(&post.mean, mean.as_slice()));
        worst = worst.max(max_abs_diff(pc.as_slice(), cov.as_slice()));
        worst = worst.max(max_abs_diff(&post.variance, cov.diagonal().as_slice()));
    }
    Outcome::new(worst <= 1e-10, format!("max abs error {worst:.2e} (tol 1e-10, 100 instances)"))
}

pub const MRL_ORACLE_DRAWS: usize = 1_000_000;

/// MRL covariance against the graphical-model sampler, 5 fixed instances.
pub fn mrl_sampling() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, inst) in mrl_instances().iter().enumerate() {
        let model = inst.model();
        let exact = chain_regions(&model, &inst.points).unwrap().values;
        let emp = mrl_sampling_oracle(inst, MRL_ORACLE_DRAWS, 100 + i as u64);
        worst = worst.max(max_standardized_error(&exact, &emp, MRL_ORACLE_DRAWS));
        if inst.boundaries.len() == 1 {
            let b = inst.boundaries[0];
            let x1: Vec<f64> = inst.points.iter().cloned().filter(|&x| x < b).collect();
            let xb: Vec<f64> = inst.points.iter().cloned().filter(|&x| x == b).collect();
            let x2: Vec<f64> = inst.points.iter().cloned().filter(|&x| x > b).collect();
            let global = assemble_global(&model, &x1, &xb, &x2).unwrap().values;
            worst = worst.max(max_standardized_error(&global, &emp, MRL_ORACLE_DRAWS));
        }
    }
    Outcome::new(
        worst <= 3.0,
        format!("max |error| {worst:.2} standard errors (tol 3, 5 instances, 1e6 draws)"),
    )
}

/// A random chained model whose boundary covariances match the adjacent
/// region kernels, with query points inside every region and on every
/// linked boundary.
pub fn matching_model<R: Rng>(rng: &mut R) -> (MrlInstance, Vec<(f64, f64)>) {
    let nb = rng.random_range(1..=3);
    let mut boundaries: Vec<f64> = Vec::new();
    let mut x = 0.0;
    for _ in 0..nb {
        x += rng.random_range(1.5..4.0);
        boundaries.push(x);
    }
    let mut regions = Vec::new();
    let mut links = Vec::new();
    let mut mu = rng.random_range(0.2..3.0);
    for r in 0..=nb {
        // A constant region between two linked boundaries has a singular boundary block.
        let interior = r > 0 && r < nb;
        let k = if !interior && rng.random_bool(0.3) {
            Kern::Const { mu }
        } else {
            Kern::Se {
                mu,
                l: rng.random_range(0.5..5.0),
            }
        };
        regions.push(k);
        if r < nb {
            if rng.random_bool(0.25) {
                links.push(Link::Cut);
                mu = rng.random_range(0.2..3.0);
            } else {
                links.push(Link::Value { variance: mu });
            }
        }
    }
    // Slope links need both sides to share the derivative variance too.
    for i in 0..nb {
        if let (Kern::Se { mu, l }, Link::Value { .. }) = (regions[i], links[i]) {
            if rng.random_bool(0.3) {
                regions[i + 1] = Kern::Se { mu, l };
                links[i] = Link::Slope {
                    variance: mu,
                    slope_variance: 2.0 * mu / (l * l),
                };
            }
        }
    }
    let lo = -2.0;
    let hi = boundaries[nb - 1] + 2.0;
    let mut points = random_points(rng, 14, hi - lo);
    points.iter_mut().for_each(|p| *p += lo);
    for (b, l) in boundaries.iter().zip(&links) {
        points.retain(|p| (p - b).abs() > 1e-6);
        if *l != Link::Cut {
            points.push(*b);
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let edges: Vec<f64> = std::iter::once(f64::NEG_INFINITY)
        .chain(boundaries.iter().cloned())
        .chain(std::iter::once(f64::INFINITY))
        .collect();
    let spans = edges.windows(2).map(|w| (w[0], w[1])).collect();
    (
        MrlInstance {
            regions,
            boundaries,
            links,
            points,
        },
        spans,
    )
}

/// Global gram restricted to each region's closed span against the region
/// gram, 50 random matching models.
pub fn region_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (inst, spans) = matching_model(&mut rng);
        let global = chain_regions(&inst.model(), &inst.points).unwrap().values;
        for (r, &(lo, hi)) in spans.iter().enumerate() {
            let idx: Vec<usize> = (0..inst.points.len())
                .filter(|&i| inst.points[i] >= lo && inst.points[i] <= hi)
                .collect();
            let k = &inst.regions[r];
            let mut scale: f64 = 0.0;
            let mut err: f64 = 0.0;
            for &i in &idx {
                for &j in &idx {
                    let want = k.k(inst.points[i], inst.points[j]);
                    scale = scale.max(want.abs());
                    err = err.max((global[(i, j)] - want).abs());
                }
            }
            if scale > 0.0 {
                worst = worst.max(err / scale);
            }
        }
    }
    Outcome::new(worst <= 1e-12, format!("max relative error {worst:.2e} (tol 1e-12, 50 models)"))
}

pub const CHANGE_POINT: f64 = 130.0;

/// Analytic jump of the SE/SE MRL model at h = 1e-3, and sampled jumps of
/// plain Gibbs against MRL at h = 0.5.
pub fn continuity() -> Outcome {
    let mrl = mrl_demo_kernel();
    let h = 1e-3;
    let analytic = jump_statistic(&mrl, CHANGE_POINT - h / 2.0, CHANGE_POINT + h / 2.0).unwrap();
    let (a, b) = (CHANGE_POINT - 0.25, CHANGE_POINT + 0.25);
    let gibbs = sample_jump_statistic(&gibbs_demo_kernel(), a, b, 10_000, 4).unwrap();
    let linked = sample_jump_statistic(&mrl, a, b, 10_000, 4).unwrap();
    let ratio = gibbs / linked;
    Outcome::new(
        analytic <= 1e-4 && ratio >= 10.0,
        format!("MRL jump {analytic:.2e} (tol 1e-4); Gibbs/MRL sampled jump ratio {ratio:.1} (need >= 10)"),
    )
}

/// `Var[(f(b+h) − f(b))/h − (f(b) − f(b−h))/h]` from the covariance.
pub fn slope_jump<C: Covariance + ?Sized>(k: &C, b: f64, h: f64) -> f64 {
    let xs = [b - h, b, b + h];
    let w = [1.0, -2.0, 1.0];
    let mut v = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            v += w[i] * w[j] * k.cov(xs[i], xs[j]).unwrap();
        }
    }
    v / (h * h)
}

/// The SE/SE reference model with a slope link. The boundary slope variance
/// is the geometric mean of the two regions' derivative variances.
pub fn slope_linked_demo() -> MrlKernel {
    let spec = |l| mrl_gp::KernelSpec::squared_exponential(1.0, l).unwrap();
    let link = Link::Slope {
        variance: 1.0,
        slope_variance: 2.0 / (35.0 * 15.0),
    };
    MrlKernel::new(mrl_gp::RegionModel::two_region(spec(35.0), spec(15.0), CHANGE_POINT, link).unwrap()).unwrap()
}

pub fn derivative_continuity() -> Outcome {
    let h = 1e-2;
    let order0 = slope_jump(&mrl_demo_kernel(), CHANGE_POINT, h);
    let order1 = slope_jump(&slope_linked_demo(), CHANGE_POINT, h);
    let ratio = order1 / order0;
    Outcome::new(
        ratio <= 0.1,
        format!("slope jump order 1 {order1:.3e} vs order 0 {order0:.3e}, ratio {ratio:.2e} (tol 0.1)"),
    )
}

/// `f̂ + ê` against the posterior mean under `K_f + K_e`, 100 random instances.
pub fn dual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k_f = Kern::Se {
            mu: rng.random_range(0.5..2.0),
            l: rng.random_range(0.5..3.0),
        }
        .spec();
        let t0 = rng.random_range(0.0..2.0);
        let t1 = t0 + rng.random_range(0.5..3.0);
        let mu = rng.random_range(0.0..2.0);
        let fault = match rng.random_range(0..3) {
            0 => FaultSpec::bias(t0, t1, mu),
            1 => FaultSpec::drift(t0, t1, mu, rng.random_range(0.5..3.0)),
            _ => FaultSpec::drift_then_bias(t0, 0.5 * (t0 + t1), t1, mu, rng.random_range(0.5..3.0), mu),
        }
        .unwrap()
        .kernel()
        .unwrap();
        let noise = rng.random_range(0.01..0.5);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let train = random_train(&mut rng, n, 5.0);
        let xs = random_points(&mut rng, m, 5.0);
        let (f, e) = dual_posterior(&train, &xs, &k_f, &fault, noise, false).unwrap();
        let total = posterior(&train, &xs, &SumCov(&k_f, &fault), noise).unwrap();
        let sum: Vec<f64> = f.mean.iter().zip(&e.mean).map(|(a, b)| a + b).collect();
        worst = worst.max(max_abs_diff(&sum, &total.mean));
    }
    Outcome::new(worst <= 1e-10, format!("max |f + e - s| {worst:.2e} (tol 1e-10, 100 instances)"))
}

pub const FAULT_SEEDS: u64 = 20;
pub const FAULT_SAMPLES: usize = 4000;
pub const FAULT_ROUNDS: usize = 8;

/// Ratio of fault-aware to fault-ignorant RMSE of the real-process estimate
/// over the fault window, for one kind and seed.
pub fn fault_rmse_ratio(kind: FaultKind, seed: u64) -> f64 {
    let cfg = TrackingConfig::default_for(kind);
    let sc = gen_tracking_with(&cfg, seed).unwrap();
    let train = &sc.observed;
    let mut rc = RemovalConfig::new(cfg.real.clone(), FaultPriors::for_series(kind, train).unwrap());
    rc.n_samples = FAULT_SAMPLES;
    rc.seed = seed;
    rc.proposal = Proposal::Adaptive { rounds: FAULT_ROUNDS };
    let aware = remove_fault(train, &rc).unwrap();
    let ignorant = posterior(train, train.t(), &cfg.real, cfg.noise).unwrap();
    let rmse = |est: &[f64]| {
        let sq: Vec<f64> = (0..train.len())
            .filter(|&i| cfg.fault.in_window(train.t()[i]))
            .map(|i| (est[i] - sc.truth.y()[i]).powi(2))
            .collect();
        (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
    };
    rmse(&aware.clean.mean) / rmse(&ignorant.mean)
}

pub fn fault_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in FaultKind::ALL {
        let ratios: Vec<f64> = (0..FAULT_SEEDS).map(|s| fault_rmse_ratio(kind, s)).collect();
        let med = median(ratios);
        pass &= med <= 0.5;
        parts.push(format!("{kind} {med:.3}"));
    }
    Outcome::new(
        pass,
        format!("median RMSE ratio {} (tol 0.5, 20 seeds)", parts.join(", ")),
    )
}

pub const SEPARATION_SAMPLES: usize = 2000;

/// Closure on every run and the null-artifact coverage count over 20 seeds.
pub fn separation_null() -> Outcome {
    let mut good = 0;
    let mut closure: f64 = 0.0;
    for seed in 0..20u64 {
        let cfg = SeparationConfig {
            with_artifact: false,
            ..Default::default()
        };
        let sc = gen_separation(&cfg, seed).unwrap();
        let priors = SeparationPriors::for_series(&sc.observed).unwrap();
        let r = separate(&sc.observed, &priors, SEPARATION_SAMPLES, seed).unwrap();
        closure = closure.max(r.closure_error());
        let inside = r
            .art
            .mean
            .iter()
            .zip(&r.art.variance)
            .filter(|(m, v)| m.abs() <= 2.0 * v.sqrt())
            .count();
        if inside as f64 >= 0.95 * r.t.len() as f64 {
            good += 1;
        }
    }
    Outcome::new(
        closure <= 1e-10 && good >= 18,
        format!("closure {closure:.1e} (tol 1e-10); null coverage in {good}/20 seeds (need 18)"),
    )
}

/// Posterior-weighted median length scale of an SE fit to a draw from
/// SE(1, `l_star`) with noise variance 0.01 on 101 points.
pub fn calibration_median(l_star: f64, seed: u64) -> f64 {
    let t: Vec<f64> = (0..=100).map(f64::from).collect();
    let k = mrl_gp::KernelSpec::squared_exponential(1.0, l_star).unwrap();
    let f = sample_prior(&k, &t, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let y = f.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let train = TimeSeries::new(t, y).unwrap();
    let priors = PriorSet::new()
        .with("mu", Prior::log_uniform(1e-2, 1e2).unwrap())
        .with("length", Prior::log_uniform(1.0, 100.0).unwrap())
        .with("noise", Prior::log_uniform(1e-4, 1.0).unwrap());
    let hp = mc_marginalize(&priors, 2000, seed, |th| {
        log_evidence(&train, &mrl_gp::KernelSpec::squared_exponential(th[0], th[1])?, th[2])
    })
    .unwrap();
    hp.weighted_quantile("length", 0.5).unwrap()
}

pub fn calibration() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for l_star in [5.0, 10.0, 20.0] {
        let hits = (0..20u64)
            .filter(|&s| {
                let m = calibration_median(l_star, s);
                m >= l_star / 2.0 && m <= 2.0 * l_star
            })
            .count();
        pass &= hits >= 16;
        parts.push(format!("L*={l_star}: {hits}/20"));
    }
    Outcome::new(pass, format!("{} (need 16/20 each, n=2000)", parts.join(", ")))
}
