//! The four workflows. Each writes `<command>.config` (the resolved
//! configuration) next to its outputs and returns the paths written.

use std::path::{Path, PathBuf};

use mrl_gp::faults::{remove_fault, FaultPriors, RemovalConfig};
use mrl_gp::gp::{log_evidence, posterior};
use mrl_gp::hyper::{importance_sample, marginal_predict, HyperPosterior};
use mrl_gp::separation::{separate_with, SeparationPriors, SeparationResult};
use mrl_gp::simulate::{
    gen_gibbs_demo, gen_separation, gen_tracking_with, gen_wedge, SeparationConfig, Snr, TrackingConfig,
};
use mrl_gp::{KernelSpec, Link, MrlKernel, Prior, PriorSet, RegionModel, Scenario, SeparationModel, TimeSeries};

use crate::config::{Command, RunConfig};
use crate::data::{read_series, write_rows, write_table};
use crate::error::CliError;
use crate::svg::Plot;

/// Largest tolerated `|ŝ_sig + ŝ_art − y|`.
pub const CLOSURE_TOL: f64 = 1e-10;

pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", out.display())))?;
    let mut written = match cfg.command {
        Command::Simulate => simulate(cfg, &out)?,
        Command::Fit => fit(cfg, &out)?,
        Command::Remove => remove(cfg, &out)?,
        Command::Separate => separate(cfg, &out)?,
    };
    let echo = out.join(format!("{}.config", cfg.command));
    std::fs::write(&echo, cfg.echo())?;
    written.push(echo);
    Ok(written)
}

fn write_plot(path: PathBuf, plot: Plot, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::write(&path, plot.render())?;
    written.push(path);
    Ok(())
}

fn std_of(variance: &[f64]) -> Vec<f64> {
    variance.iter().map(|v| v.max(0.0).sqrt()).collect()
}

fn scenario(cfg: &RunConfig) -> Result<Scenario, CliError> {
    let seed: u64 = cfg.parse("seed")?;
    let scenario = match cfg.raw("scenario") {
        "tracking" => {
            let tc = TrackingConfig {
                t_lo: cfg.f64("t_lo")?,
                t_hi: cfg.f64("t_hi")?,
                step: cfg.f64("step")?,
                real: KernelSpec::squared_exponential(cfg.f64("real_mu")?, cfg.f64("real_length")?)?,
                fault: cfg.fault_spec()?,
                noise: cfg.f64("noise")?,
            };
            gen_tracking_with(&tc, seed)?
        }
        "gibbs_demo" => gen_gibbs_demo(seed)?,
        "wedge" => gen_wedge(cfg.parse::<Snr>("snr")?, seed)?,
        "separation" => {
            let sc = SeparationConfig {
                t_lo: cfg.f64("t_lo")?,
                t_hi: cfg.f64("t_hi")?,
                step: cfg.f64("step")?,
                model: SeparationModel {
                    mu_sig: cfg.f64("mu_sig")?,
                    l_sig: cfg.f64("l_sig")?,
                    mu_art: cfg.f64("mu_art")?,
                    l_art: cfg.f64("l_art")?,
                    t_s: cfg.f64("t_s")?,
                    t_e: cfg.f64("t_e")?,
                    r_sig: cfg.f64("r_sig")?,
                    r_art: cfg.f64("r_art")?,
                    k_mid: None,
                },
                with_artifact: cfg.bool("with_artifact")?,
            };
            gen_separation(&sc, seed)?
        }
        other => {
            return Err(CliError::Input(format!(
                "config key 'scenario': unknown scenario '{other}' (expected tracking, gibbs_demo, wedge or separation)"
            )))
        }
    };
    Ok(scenario)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sc = scenario(cfg)?;
    let t = sc.observed.t();
    let path = out.join("simulate.csv");
    write_table(
        &path,
        "simulate",
        &["t", "y", "f_true", "e_true"],
        &[t, sc.observed.y(), sc.truth.y(), sc.fault.y()],
    )?;
    let mut written = vec![path];
    if cfg.bool("plot")? {
        let plot = Plot::new(format!("{} (seed {})", sc.name, sc.seed))
            .points("y", "gray", t, sc.observed.y())
            .line("f_true", "black", t, sc.truth.y())
            .line("e_true", "firebrick", t, sc.fault.y());
        write_plot(out.join("simulate.svg"), plot, &mut written)?;
    }
    Ok(written)
}

fn remove(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let train = read_series(&cfg.input()?)?;
    let kind = cfg.fault_kind()?;
    let mut priors = FaultPriors::for_series(kind, &train)?;
    let slots: [(&str, &mut Prior); 7] = [
        ("t0", &mut priors.t0),
        ("t_m", &mut priors.t_m),
        ("t1", &mut priors.t1),
        ("mu", &mut priors.mu),
        ("length", &mut priors.length),
        ("k_b_link", &mut priors.k_b_link),
        ("noise", &mut priors.noise),
    ];
    for (key, slot) in slots {
        if let Some(p) = cfg.prior(key)? {
            *slot = p;
        }
    }
    let real = KernelSpec::squared_exponential(cfg.f64("real_mu")?, cfg.f64("real_length")?)?;
    let mut rc = RemovalConfig::new(real, priors);
    rc.n_samples = cfg.parse("n")?;
    rc.seed = cfg.parse("seed")?;
    rc.proposal = cfg.proposal()?;
    let r = remove_fault(&train, &rc)?;
    let (f_std, e_std) = (std_of(&r.clean.variance), std_of(&r.fault.variance));
    let t = train.t();
    let path = out.join("remove.csv");
    write_table(
        &path,
        "remove",
        &["t", "y", "f_mean", "f_std", "e_mean", "e_std"],
        &[t, train.y(), &r.clean.mean, &f_std, &r.fault.mean, &e_std],
    )?;
    let mut written = vec![path];
    if cfg.bool("plot")? {
        let plot = Plot::new(format!("fault removal ({kind})"))
            .band("f ± 1 std", "steelblue", t, &r.clean.mean, &f_std)
            .band("e ± 1 std", "firebrick", t, &r.fault.mean, &e_std)
            .points("y", "gray", t, train.y())
            .line("f mean", "steelblue", t, &r.clean.mean)
            .line("e mean", "firebrick", t, &r.fault.mean);
        write_plot(out.join("remove.svg"), plot, &mut written)?;
    }
    Ok(written)
}

/// Fails when the two apportioned components do not add back to the data.
pub fn check_closure(r: &SeparationResult) -> Result<(), CliError> {
    let err = r.closure_error();
    if err <= CLOSURE_TOL {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "sig_mean + art_mean differs from y by {err:e} (tolerance {CLOSURE_TOL:e})"
        )))
    }
}

fn separate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let train = read_series(&cfg.input()?)?;
    let mut priors = SeparationPriors::for_series(&train)?;
    let slots: [(&str, &mut Prior); 8] = [
        ("mu_sig", &mut priors.mu_sig),
        ("l_sig", &mut priors.l_sig),
        ("mu_art", &mut priors.mu_art),
        ("l_art", &mut priors.l_art),
        ("t_s", &mut priors.t_s),
        ("t_e", &mut priors.t_e),
        ("r_sig", &mut priors.r_sig),
        ("r_art", &mut priors.r_art),
    ];
    for (key, slot) in slots {
        if let Some(p) = cfg.prior(key)? {
            *slot = p;
        }
    }
    let r = separate_with(&train, &priors, cfg.parse("n")?, cfg.parse("seed")?, cfg.proposal()?)?;
    check_closure(&r)?;
    let (sig_std, art_std) = (std_of(&r.sig.variance), std_of(&r.art.variance));
    let diff: Vec<f64> = r.y.iter().zip(&r.sig.mean).map(|(y, s)| y - s).collect();
    let path = out.join("separate.csv");
    write_table(
        &path,
        "separate",
        &["t", "y", "sig_mean", "sig_std", "art_mean", "art_std", "diff"],
        &[&r.t, &r.y, &r.sig.mean, &sig_std, &r.art.mean, &art_std, &diff],
    )?;
    let mut written = vec![path];
    if cfg.bool("plot")? {
        let plot = Plot::new("signal / artifact separation")
            .band("signal ± 1 std", "steelblue", &r.t, &r.sig.mean, &sig_std)
            .band("artifact ± 1 std", "firebrick", &r.t, &r.art.mean, &art_std)
            .points("y", "gray", &r.t, &r.y)
            .line("signal mean", "steelblue", &r.t, &r.sig.mean)
            .line("y − signal", "black", &r.t, &diff);
        write_plot(out.join("separate.svg"), plot, &mut written)?;
    }
    Ok(written)
}

/// Data-scaled default priors for `fit`.
struct FitDefaults {
    scale: Prior,
    length: Prior,
    noise: Prior,
}

impl FitDefaults {
    fn for_series(train: &TimeSeries) -> Result<Self, CliError> {
        let y = train.y();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let var = if var > 0.0 { var } else { 1.0 };
        let span = train.span();
        let spacing = train
            .t()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let length = if train.len() >= 2 && span > spacing {
            Prior::log_uniform(spacing, span)?
        } else {
            Prior::fixed(1.0)?
        };
        Ok(Self {
            scale: Prior::log_uniform(1e-2 * var, 1e2 * var)?,
            length,
            noise: Prior::log_uniform(1e-4 * var, var)?,
        })
    }
}

enum FitKernel {
    Se,
    Mrl { boundary: f64 },
}

impl FitKernel {
    fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        match cfg.raw("kernel") {
            "se" => Ok(Self::Se),
            "mrl" => {
                if cfg.raw("boundary") == "none" {
                    return Err(CliError::Input("kernel = mrl needs a numeric 'boundary'".into()));
                }
                Ok(Self::Mrl {
                    boundary: cfg.f64("boundary")?,
                })
            }
            other => Err(CliError::Input(format!(
                "config key 'kernel': unknown kernel '{other}' (expected se or mrl)"
            ))),
        }
    }

    fn params(&self) -> &'static [&'static str] {
        match self {
            Self::Se => &["mu", "length", "noise"],
            Self::Mrl { .. } => &["mu_left", "length_left", "mu_right", "length_right", "k_b", "noise"],
        }
    }

    /// Covariance and noise variance for one hyperparameter vector.
    fn build(&self, th: &[f64]) -> mrl_gp::Result<(Box<dyn mrl_gp::Covariance>, f64)> {
        Ok(match *self {
            Self::Se => (Box::new(KernelSpec::squared_exponential(th[0], th[1])?), th[2]),
            Self::Mrl { boundary } => {
                let model = RegionModel::two_region(
                    KernelSpec::squared_exponential(th[0], th[1])?,
                    KernelSpec::squared_exponential(th[2], th[3])?,
                    boundary,
                    Link::Value { variance: th[4] },
                )?;
                (Box::new(MrlKernel::new(model)?), th[5])
            }
        })
    }
}

const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

fn summary_rows(hp: &HyperPosterior) -> Vec<Vec<String>> {
    hp.names
        .iter()
        .map(|name| {
            let mut row = vec![name.clone(), hp.weighted_mean(name).unwrap_or(f64::NAN).to_string()];
            for q in QUANTILES {
                row.push(hp.weighted_quantile(name, q).unwrap_or(f64::NAN).to_string());
            }
            row
        })
        .collect()
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let train = read_series(&cfg.input()?)?;
    let kernel = FitKernel::from_config(cfg)?;
    let defaults = FitDefaults::for_series(&train)?;
    let mut priors = PriorSet::new();
    for &name in kernel.params() {
        let default = match name {
            "noise" => defaults.noise,
            n if n.starts_with("length") => defaults.length,
            _ => defaults.scale,
        };
        priors = priors.with(name, cfg.prior(name)?.unwrap_or(default));
    }
    let n: usize = cfg.parse("n")?;
    let seed: u64 = cfg.parse("seed")?;
    let (hp, _) = importance_sample(&priors, n, seed, cfg.proposal()?, |th| {
        let (k, noise) = kernel.build(th)?;
        Ok((log_evidence(&train, k.as_ref(), noise)?, ()))
    })?;

    let samples_path = out.join("fit_samples.csv");
    let mut header: Vec<&str> = kernel.params().to_vec();
    header.push("log_weight");
    let rows: Vec<Vec<String>> = hp
        .samples
        .iter()
        .zip(&hp.log_weights)
        .map(|(s, w)| s.iter().chain(std::iter::once(w)).map(f64::to_string).collect())
        .collect();
    write_rows(&samples_path, "fit", &header, &rows)?;

    let summary_path = out.join("fit_summary.csv");
    let mut rows = summary_rows(&hp);
    rows.push(vec![
        "effective_sample_size".into(),
        hp.effective_sample_size().to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    write_rows(
        &summary_path,
        "fit",
        &["param", "mean", "q05", "q25", "q50", "q75", "q95"],
        &rows,
    )?;
    let mut written = vec![samples_path, summary_path];
    if cfg.bool("plot")? {
        let t = train.t();
        let pred = marginal_predict(&hp, |th| {
            let (k, noise) = kernel.build(th)?;
            posterior(&train, t, k.as_ref(), noise)
        })?;
        let std = std_of(&pred.variance);
        let plot = Plot::new("hyperparameter-marginalized posterior")
            .band("f ± 1 std", "steelblue", t, &pred.mean, &std)
            .points("y", "gray", t, train.y())
            .line("f mean", "steelblue", t, &pred.mean);
        write_plot(out.join("fit.svg"), plot, &mut written)?;
    }
    Ok(written)
}
