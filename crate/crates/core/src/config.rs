//! Experiment configuration from flat dotted keys.
//!
//! A configuration document is TOML; nested tables and dotted keys are
//! equivalent (`gen.k_max = 15` and `[gen]\nk_max = 15`). Every key is
//! optional and defaults to the reference experiment (K_max = 15, M_max = 8,
//! D_max = 15, p_a = 0.25, B = 30).

use std::fmt;
use std::str::FromStr;

use toml::Value;

use crate::channel::ChannelParams;
use crate::dynamics::{Capacity, GenParams};
use crate::error::{Error, Result};
use crate::fdm::FdmConfig;
use crate::mdp::DEFAULT_MAX_STATES;
use crate::policy::Scheme;

/// Generation and cache settings before they are turned into [`GenParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenSettings {
    pub k_max: u32,
    /// Explicit lifetime support; overrides the `{5, 10, ..., k_max}` grid.
    pub lifetimes: Option<Vec<u32>>,
    pub m_min: u32,
    pub m_max: u32,
    pub d_max: u32,
    pub p_a: f64,
    pub capacity: Capacity,
    pub truncate_access: bool,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            k_max: 15,
            lifetimes: None,
            m_min: 1,
            m_max: 8,
            d_max: 15,
            p_a: 0.25,
            capacity: Capacity::Finite(30),
            truncate_access: true,
        }
    }
}

impl GenSettings {
    pub fn params(&self) -> Result<GenParams> {
        let lifetimes = match &self.lifetimes {
            Some(l) => l.clone(),
            None => (1..=self.k_max / 5).map(|i| 5 * i).collect(),
        };
        let mut gen = GenParams::with_support(
            self.m_min,
            self.m_max,
            lifetimes,
            self.p_a,
            self.d_max,
            self.capacity,
        )?;
        gen.truncate_access = self.truncate_access;
        Ok(gen)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    CacheCapacity,
    KMax,
    Q,
    PA,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::CacheCapacity => "cache_capacity",
            SweepVar::KMax => "k_max",
            SweepVar::Q => "q",
            SweepVar::PA => "p_a",
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [SweepVar::CacheCapacity, SweepVar::KMax, SweepVar::Q, SweepVar::PA]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown sweep variable `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub gen: GenSettings,
    pub chan: ChannelParams,
    pub fdm: FdmConfig,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    /// Caching probability of the random scheme when `q` is not swept.
    pub random_q: f64,
    pub n_test: usize,
    pub test_horizon: usize,
    pub seed: u64,
    /// Samples in the empirical cost distribution used by the bounds, the
    /// LISO initialization and the exact solver's channel levels.
    pub dist_samples: usize,
    /// Channel levels of the exact solver; also the cost model of every
    /// scheme when `discrete_channel` is set.
    pub exact_levels: usize,
    pub exact_max_states: usize,
    /// Replace the continuous channel by its `exact_levels` quantile levels.
    pub discrete_channel: bool,
    /// Use the elapsed-time-aware LB-UC recursion when accesses are
    /// truncated at `d_max`.
    pub lbuc_truncated: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gen: GenSettings::default(),
            chan: ChannelParams::default(),
            fdm: FdmConfig::default(),
            sweep: Sweep {
                var: SweepVar::CacheCapacity,
                values: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            },
            schemes: vec![Scheme::Liso, Scheme::Reactive, Scheme::LbUc, Scheme::LbNck],
            random_q: 0.5,
            n_test: 100,
            test_horizon: 5000,
            seed: 1,
            dist_samples: 100_000,
            exact_levels: 8,
            exact_max_states: DEFAULT_MAX_STATES,
            discrete_channel: false,
            lbuc_truncated: true,
        }
    }
}

fn type_err(key: &str, want: &str, v: &Value) -> Error {
    Error::config(key, format!("expected {want}, got {}", v.type_str()))
}

fn get_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_err(key, "a number", v)),
    }
}

fn get_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(_) => Err(Error::config(key, "must be non-negative")),
        _ => Err(type_err(key, "an integer", v)),
    }
}

fn get_u32(key: &str, v: &Value) -> Result<u32> {
    u32::try_from(get_u64(key, v)?).map_err(|_| Error::config(key, "out of range"))
}

fn get_usize(key: &str, v: &Value) -> Result<usize> {
    usize::try_from(get_u64(key, v)?).map_err(|_| Error::config(key, "out of range"))
}

fn get_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_err(key, "a boolean", v))
}

fn get_array<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| type_err(key, "an array", v))
}

fn get_capacity(key: &str, v: &Value) -> Result<Capacity> {
    match v {
        Value::String(s) if s == "inf" => Ok(Capacity::Unlimited),
        Value::Integer(_) => Ok(Capacity::Finite(get_usize(key, v)?)),
        _ => Err(type_err(key, "a non-negative integer or \"inf\"", v)),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl ExperimentConfig {
    /// Sets one dotted key. Values are checked for type here and for
    /// consistency in [`ExperimentConfig::validate`].
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let g = &mut self.gen;
        let c = &mut self.chan;
        let f = &mut self.fdm;
        match key {
            "gen.k_max" => g.k_max = get_u32(key, v)?,
            "gen.lifetimes" => {
                let l = get_array(key, v)?
                    .iter()
                    .map(|x| get_u32(key, x))
                    .collect::<Result<Vec<_>>>()?;
                g.lifetimes = Some(l);
            }
            "gen.m_min" => g.m_min = get_u32(key, v)?,
            "gen.m_max" => g.m_max = get_u32(key, v)?,
            "gen.d_max" => g.d_max = get_u32(key, v)?,
            "gen.p_a" => g.p_a = get_f64(key, v)?,
            "gen.cache_capacity" => g.capacity = get_capacity(key, v)?,
            "gen.truncate_access" => g.truncate_access = get_bool(key, v)?,
            "chan.fc_ghz" => c.fc_ghz = get_f64(key, v)?,
            "chan.d_min_m" => c.d_min_m = get_f64(key, v)?,
            "chan.d_max_m" => c.d_max_m = get_f64(key, v)?,
            "chan.sigma_db" => c.sigma_db = get_f64(key, v)?,
            "chan.bandwidth_hz" => c.bandwidth_hz = get_f64(key, v)?,
            "chan.noise_psd_dbm_hz" => c.noise_psd_dbm_hz = get_f64(key, v)?,
            "chan.noise_figure_db" => c.noise_figure_db = get_f64(key, v)?,
            "chan.g_tx_dbi" => c.g_tx_dbi = get_f64(key, v)?,
            "chan.g_rx_dbi" => c.g_rx_dbi = get_f64(key, v)?,
            "chan.spectral_eff" => c.spectral_eff = get_f64(key, v)?,
            "chan.shadow_clip_sigmas" => c.shadow_clip_sigmas = get_f64(key, v)?,
            "chan.c_max_mw" => c.c_max_mw = Some(get_f64(key, v)?),
            "chan.dist_samples" => self.dist_samples = get_usize(key, v)?,
            "chan.discrete" => self.discrete_channel = get_bool(key, v)?,
            "fdm.r" => f.r = get_f64(key, v)?,
            "fdm.step" => f.step = get_f64(key, v)?,
            "fdm.n_perturbations" => f.n_perturbations = get_usize(key, v)?,
            "fdm.n_estimates" => f.n_estimates = get_usize(key, v)?,
            "fdm.horizon" => f.horizon = get_usize(key, v)?,
            "fdm.n_updates" => f.n_updates = get_usize(key, v)?,
            "fdm.ridge" => f.ridge = Some(get_f64(key, v)?),
            "sweep.var" => {
                let s = v.as_str().ok_or_else(|| type_err(key, "a string", v))?;
                self.sweep.var = s.parse().map_err(|m: String| Error::config(key, m))?;
            }
            "sweep.values" => {
                self.sweep.values = get_array(key, v)?
                    .iter()
                    .map(|x| get_f64(key, x))
                    .collect::<Result<_>>()?;
            }
            "schemes" => {
                self.schemes = get_array(key, v)?
                    .iter()
                    .map(|x| {
                        x.as_str()
                            .ok_or_else(|| type_err(key, "a scheme name", x))?
                            .parse()
                            .map_err(|m: String| Error::config(key, m))
                    })
                    .collect::<Result<_>>()?;
            }
            "random.q" => self.random_q = get_f64(key, v)?,
            "n_test" => self.n_test = get_usize(key, v)?,
            "test_horizon" => self.test_horizon = get_usize(key, v)?,
            "seed" => self.seed = get_u64(key, v)?,
            "exact.levels" => self.exact_levels = get_usize(key, v)?,
            "exact.max_states" => self.exact_max_states = get_usize(key, v)?,
            "bounds.lbuc_truncated" => self.lbuc_truncated = get_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order, then validates. Values use
    /// TOML syntax; bare words are read as strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        let mut next = self.clone();
        for a in assignments {
            next.apply_override(a.as_ref())?;
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(raw.to_string()),
        };
        self.set(key, &value)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &'static str| move |e: Error| Error::config(key, e.to_string());
        if self.gen.lifetimes.is_none() && (self.gen.k_max < 5 || self.gen.k_max % 5 != 0) {
            return Err(Error::config(
                "gen.k_max",
                format!("must be a positive multiple of 5, got {}", self.gen.k_max),
            ));
        }
        self.gen.params().map_err(wrap("gen"))?;
        self.chan.validate().map_err(wrap("chan"))?;
        self.fdm.validate().map_err(wrap("fdm"))?;
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must not be empty"));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return Err(Error::config("schemes", format!("`{}` listed twice", s.name())));
            }
        }
        if !(0.0..=1.0).contains(&self.random_q) {
            return Err(Error::config("random.q", "must lie in [0, 1]"));
        }
        if self.n_test < 2 {
            return Err(Error::config("n_test", "need at least 2 trajectories"));
        }
        if self.test_horizon == 0 {
            return Err(Error::config("test_horizon", "must be at least 1"));
        }
        if self.dist_samples == 0 {
            return Err(Error::config("chan.dist_samples", "must be at least 1"));
        }
        if self.exact_levels == 0 || self.exact_levels > self.dist_samples {
            return Err(Error::config(
                "exact.levels",
                "must be at least 1 and at most chan.dist_samples",
            ));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        for &x in &self.sweep.values {
            self.at(x).map_err(|e| match e {
                Error::Config { msg, .. } => Error::config("sweep.values", msg),
                other => other,
            })?;
        }
        Ok(())
    }

    /// The configuration with the swept variable set to `x`.
    pub fn at(&self, x: f64) -> Result<ExperimentConfig> {
        let key = "sweep.values";
        let integral = || -> Result<u64> {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u64)
            } else {
                Err(Error::config(
                    key,
                    format!("{} needs non-negative integers, got {x}", self.sweep.var),
                ))
            }
        };
        let mut cfg = self.clone();
        match self.sweep.var {
            SweepVar::CacheCapacity => {
                cfg.gen.capacity = if x.is_infinite() && x > 0.0 {
                    Capacity::Unlimited
                } else {
                    Capacity::Finite(integral()? as usize)
                }
            }
            SweepVar::KMax => {
                if self.gen.lifetimes.is_some() {
                    return Err(Error::config(key, "cannot sweep k_max with gen.lifetimes set"));
                }
                let k = integral()? as u32;
                if k < 5 || k % 5 != 0 {
                    return Err(Error::config(key, format!("k_max must be a positive multiple of 5, got {k}")));
                }
                cfg.gen.k_max = k;
            }
            SweepVar::Q => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::config(key, format!("q must lie in [0, 1], got {x}")));
                }
                cfg.random_q = x;
            }
            SweepVar::PA => {
                if !(x > 0.0 && x <= 1.0) {
                    return Err(Error::config(key, format!("p_a must lie in (0, 1], got {x}")));
                }
                cfg.gen.p_a = x;
            }
        }
        cfg.gen.params().map_err(|e| Error::config(key, e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);
    let mut cfg = ExperimentConfig::default();
    for (key, value) in &entries {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
