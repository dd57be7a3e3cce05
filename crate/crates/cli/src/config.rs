//! `key = value` run configuration with per-command schemas.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mrl_gp::faults::{FaultKind, FaultSpec};
use mrl_gp::hyper::{Prior, Proposal};
use mrl_gp::simulate::{SeparationConfig, TrackingConfig, TRACKING_NOISE};

use crate::error::CliError;

/// Value for prior keys meaning "derive from the data".
pub const AUTO: &str = "auto";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Remove,
    Separate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Fit => "fit",
            Self::Remove => "remove",
            Self::Separate => "separate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every key the command accepts, with its default.
pub fn schema(cmd: Command) -> Vec<(&'static str, String)> {
    let mut keys: Vec<(&'static str, String)> = vec![
        ("seed", "0".into()),
        ("out", ".".into()),
        ("plot", "false".into()),
    ];
    let s = |v: f64| v.to_string();
    match cmd {
        Command::Simulate => {
            let track = TrackingConfig::default_for(FaultKind::DriftThenBias);
            let sep = SeparationConfig::default();
            let m = &sep.model;
            let (real_mu, real_length) = match track.real {
                mrl_gp::KernelSpec::SquaredExponential { mu, length } => (mu, length),
                _ => unreachable!("tracking trajectories are squared exponential"),
            };
            let f = &track.fault;
            keys.extend([
                ("scenario", "tracking".into()),
                ("fault_kind", FaultKind::Bias.as_str().into()),
                ("t_lo", s(track.t_lo)),
                ("t_hi", s(track.t_hi)),
                ("step", s(track.step)),
                ("real_mu", s(real_mu)),
                ("real_length", s(real_length)),
                ("noise", s(TRACKING_NOISE)),
                ("fault_t0", s(f.t0)),
                ("fault_t_m", s(f.t_m)),
                ("fault_t1", s(f.t1)),
                ("fault_mu", s(f.mu)),
                ("fault_length", s(f.length)),
                ("fault_k_b_link", s(f.k_b_link)),
                ("snr", "low".into()),
                ("with_artifact", sep.with_artifact.to_string()),
                ("mu_sig", s(m.mu_sig)),
                ("l_sig", s(m.l_sig)),
                ("mu_art", s(m.mu_art)),
                ("l_art", s(m.l_art)),
                ("t_s", s(m.t_s)),
                ("t_e", s(m.t_e)),
                ("r_sig", s(m.r_sig)),
                ("r_art", s(m.r_art)),
            ]);
        }
        Command::Fit => {
            keys.extend(inference_keys());
            keys.extend([("kernel", "se".into()), ("boundary", "none".into())]);
            for k in [
                "mu",
                "length",
                "mu_left",
                "length_left",
                "mu_right",
                "length_right",
                "k_b",
                "noise",
            ] {
                keys.push((k, AUTO.into()));
            }
        }
        Command::Remove => {
            keys.extend(inference_keys());
            keys.extend([
                ("fault_kind", FaultKind::Bias.as_str().into()),
                ("real_mu", "1".into()),
                ("real_length", "15".into()),
            ]);
            for k in ["t0", "t_m", "t1", "mu", "length", "k_b_link", "noise"] {
                keys.push((k, AUTO.into()));
            }
        }
        Command::Separate => {
            keys.extend(inference_keys());
            for k in mrl_gp::separation::SEPARATION_PARAMS {
                keys.push((k, AUTO.into()));
            }
        }
    }
    keys
}

fn inference_keys() -> [(&'static str, String); 3] {
    [
        ("input", String::new()),
        ("n", mrl_gp::hyper::DEFAULT_SAMPLES.to_string()),
        ("proposal", Proposal::Prior.to_string()),
    ]
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            values: schema(command).into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Override one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Input(format!(
                "{origin}: unknown key '{key}' for {}",
                self.command
            ))),
        }
    }

    /// Apply a `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<(), CliError> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{name}:{line_no}");
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("{origin}: expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), line_no) {
                return Err(CliError::Input(format!("{origin}: key '{key}' already set on line {first}")));
            }
            self.set(key, value.trim(), &origin)?;
        }
        Ok(())
    }

    /// Apply a `KEY=VALUE` command-line override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
        self.set(key.trim(), value.trim(), "--set")
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from the {} schema", self.command))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Input(format!("config key '{key}': cannot parse '{raw}': {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::Input(format!("config key '{key}' must be finite")))
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        self.parse(key)
    }

    /// `None` when the key is `auto`.
    pub fn prior(&self, key: &str) -> Result<Option<Prior>, CliError> {
        if self.raw(key) == AUTO {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn fault_kind(&self) -> Result<FaultKind, CliError> {
        self.parse("fault_kind")
    }

    pub fn proposal(&self) -> Result<Proposal, CliError> {
        self.parse("proposal")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn input(&self) -> Result<PathBuf, CliError> {
        match self.raw("input") {
            "" => Err(CliError::Input(format!("{} needs an input CSV", self.command))),
            p => Ok(PathBuf::from(p)),
        }
    }

    /// Fault specification from the `fault_*` keys of `simulate`.
    pub fn fault_spec(&self) -> Result<FaultSpec, CliError> {
        let (t0, t1, mu) = (self.f64("fault_t0")?, self.f64("fault_t1")?, self.f64("fault_mu")?);
        let spec = match self.fault_kind()? {
            FaultKind::Bias => FaultSpec::bias(t0, t1, mu),
            FaultKind::Drift => FaultSpec::drift(t0, t1, mu, self.f64("fault_length")?),
            FaultKind::DriftThenBias => FaultSpec::drift_then_bias(
                t0,
                self.f64("fault_t_m")?,
                t1,
                mu,
                self.f64("fault_length")?,
                self.f64("fault_k_b_link")?,
            ),
        };
        spec.map_err(|e| CliError::Input(e.to_string()))
    }

    /// The resolved configuration in the input file format; feeding it back
    /// with `--config` reproduces the run.
    pub fn echo(&self) -> String {
        let mut s = format!("# mrl-gp v1 {} resolved configuration\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
