//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export returns one flat `Float64Array` holding equal-length columns
//! back to back; the column order is listed on each function.

use mrl_gp::faults::{remove_fault, FaultKind, FaultPriors, RemovalConfig};
use mrl_gp::gp::PriorSampler;
use mrl_gp::hyper::Proposal;
use mrl_gp::separation::{separate, SeparationPriors};
use mrl_gp::simulate::{gen_separation, gen_tracking, gibbs_demo_kernel, grid, mrl_demo_kernel, SeparationConfig, TrackingConfig};
use rand::SeedableRng;
use wasm_bindgen::prelude::*;

/// Proposal used by the in-browser fault removal.
const DEMO_PROPOSAL: Proposal = Proposal::Adaptive { rounds: 4 };

fn flatten(columns: &[&[f64]]) -> Vec<f64> {
    columns.iter().flat_map(|c| c.iter().cloned()).collect()
}

/// Columns: `t`, then `count` Gibbs draws, then `count` MRL draws, all on
/// the grid `0, 1, …, 260`.
pub fn prior_draws_columns(seed: u64, count: usize) -> Result<Vec<f64>, String> {
    let t = grid(0.0, 260.0, 1.0).map_err(|e| e.to_string())?;
    let gibbs = PriorSampler::new(&gibbs_demo_kernel(), &t).map_err(|e| e.to_string())?;
    let mrl = PriorSampler::new(&mrl_demo_kernel(), &t).map_err(|e| e.to_string())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for sampler in [&gibbs, &mrl] {
        for _ in 0..count {
            out.extend(sampler.draw(&mut rng));
        }
    }
    Ok(out)
}

/// Columns: `t, y, f_true, e_true, f_mean, f_std, e_mean, e_std`.
pub fn fault_removal_columns(kind: &str, seed: u64, samples: usize) -> Result<Vec<f64>, String> {
    let kind: FaultKind = kind.parse().map_err(|e: mrl_gp::Error| e.to_string())?;
    let sc = gen_tracking(kind, seed).map_err(|e| e.to_string())?;
    let train = &sc.observed;
    let priors = FaultPriors::for_series(kind, train).map_err(|e| e.to_string())?;
    let mut cfg = RemovalConfig::new(TrackingConfig::default_for(kind).real, priors);
    cfg.n_samples = samples;
    cfg.seed = seed;
    cfg.proposal = DEMO_PROPOSAL;
    let r = remove_fault(train, &cfg).map_err(|e| e.to_string())?;
    Ok(flatten(&[
        train.t(),
        train.y(),
        sc.truth.y(),
        sc.fault.y(),
        &r.clean.mean,
        &r.clean.std(),
        &r.fault.mean,
        &r.fault.std(),
    ]))
}

/// Columns: `t, y, sig_true, art_true, sig_mean, sig_std, art_mean, art_std`.
pub fn separation_columns(seed: u64, samples: usize, with_artifact: bool) -> Result<Vec<f64>, String> {
    let cfg = SeparationConfig {
        with_artifact,
        ..Default::default()
    };
    let sc = gen_separation(&cfg, seed).map_err(|e| e.to_string())?;
    let train = &sc.observed;
    let priors = SeparationPriors::for_series(train).map_err(|e| e.to_string())?;
    let r = separate(train, &priors, samples, seed).map_err(|e| e.to_string())?;
    Ok(flatten(&[
        train.t(),
        train.y(),
        sc.truth.y(),
        sc.fault.y(),
        &r.sig.mean,
        &r.sig.std(),
        &r.art.mean,
        &r.art.std(),
    ]))
}

#[wasm_bindgen]
pub fn prior_draws(seed: u32, count: u32) -> Result<Vec<f64>, JsError> {
    prior_draws_columns(seed.into(), count as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fault_removal(kind: &str, seed: u32, samples: u32) -> Result<Vec<f64>, JsError> {
    fault_removal_columns(kind, seed.into(), samples as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn separation(seed: u32, samples: u32, with_artifact: bool) -> Result<Vec<f64>, JsError> {
    separation_columns(seed.into(), samples as usize, with_artifact).map_err(|e| JsError::new(&e))
}
