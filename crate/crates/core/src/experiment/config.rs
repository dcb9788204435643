//! Flat `key = value` experiment configuration with dotted keys.
//!
//! The file is valid TOML, but only the flat dotted form is written and
//! every key is listed in [`KEYS`]. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::Value;

use crate::error::{Error, Result};
use crate::features::FeatureFamily;
use crate::learn::{Algorithm, LearnerConfig, LogGrid, RgExtension, TdVariant};
use crate::observe::{CountSchedule, ObservationMode, Schedule, StationarySampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    ParamMse,
    EllLoss,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::ParamMse => "param_mse",
            MetricKind::EllLoss => "ell_loss",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "param_mse" => Ok(MetricKind::ParamMse),
            "ell_loss" => Ok(MetricKind::EllLoss),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub rho: f64,
    pub sigma2: f64,
    pub features: FeatureFamily,
    pub mode: ObservationMode,
    pub sampler: StationarySampler,
    pub dt: Schedule,
    pub learner: LearnerConfig,
    pub metric: MetricKind,
    pub k_max: u64,
    pub seeds: usize,
    /// Master seed.
    pub seed: u64,
    pub log_every: LogGrid,
    pub fit_window: Option<(u64, u64)>,
    /// Sample count for oracle quantities (reference parameters, ell matrix).
    pub oracle_n: usize,
    pub output: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rho: 1.0,
            sigma2: 0.1,
            features: FeatureFamily::Fourier3,
            mode: ObservationMode::Simulator,
            sampler: StationarySampler::BenchmarkInverseCdf,
            dt: Schedule::Power { c: 2f64.sqrt(), a: 0.5 },
            learner: LearnerConfig::default(),
            metric: MetricKind::ParamMse,
            k_max: 100_000,
            seeds: 100,
            seed: 0,
            log_every: LogGrid::PerDecade(8),
            fit_window: None,
            oracle_n: 1_000_000,
            output: OutputPaths::default(),
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "rho",
    "sigma2",
    "features",
    "mode",
    "n_sub",
    "sampler",
    "chain.burn_in",
    "chain.dt",
    "chain.thin",
    "dt.family",
    "dt.c",
    "dt.a",
    "lr.family",
    "lr.c",
    "lr.a",
    "algorithm",
    "variant",
    "mu",
    "M",
    "averaging",
    "metric",
    "rg.extension",
    "rg.c",
    "rg.a",
    "k_max",
    "seeds",
    "seed",
    "log_every",
    "fit.k_lo",
    "fit.k_hi",
    "oracle.n",
    "output.csv",
    "output.fit",
    "output.plot",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Fields(BTreeMap<String, Value>);

impl Fields {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(other) => Err(bad(key, "a number", &other)),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(other) => Err(bad(key, "a non-negative integer", &other)),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(other) => Err(bad(key, "true or false", &other)),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(bad(key, "a string", &other)),
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, key: &str) -> Result<Option<T>> {
        self.string(key)?.map(|s| s.parse()).transpose()
    }

    fn schedule(&mut self, prefix: &str, default: Schedule) -> Result<Schedule> {
        let family = self.string(&format!("{prefix}.family"))?;
        let c = self.f64(&format!("{prefix}.c"))?;
        let a = self.f64(&format!("{prefix}.a"))?;
        let (dc, da) = match default {
            Schedule::Power { c, a } => (c, a),
            Schedule::Constant { c } => (c, 0.0),
        };
        let family = family.unwrap_or_else(|| default.family().to_string());
        let s = match family.as_str() {
            "power" => Schedule::Power {
                c: c.unwrap_or(dc),
                a: a.unwrap_or(da),
            },
            "constant" => {
                if a.is_some() {
                    return Err(Error::Config(format!("{prefix}.a is not used by a constant schedule")));
                }
                Schedule::Constant { c: c.unwrap_or(dc) }
            }
            other => return Err(Error::Config(format!("unknown schedule family `{other}` for {prefix}"))),
        };
        s.validate()?;
        Ok(s)
    }
}

fn bad(key: &str, expected: &str, got: &Value) -> Error {
    Error::Config(format!("{key}: expected {expected}, got {got}"))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        self.features.build()?;
        self.sampler.validate()?;
        self.dt.validate()?;
        self.learner.validate()?;
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if let ObservationMode::RealWorld { n_sub: 0 } = self.mode {
            return Err(Error::Config("n_sub must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.fit_window {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("invalid fit window [{lo}, {hi}]")));
            }
        }
        if self.oracle_n < crate::oracle::MIN_SAMPLES {
            return Err(Error::Config(format!(
                "oracle.n must be at least {}",
                crate::oracle::MIN_SAMPLES
            )));
        }
        Ok(())
    }

    /// Flat `key = value` text that parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = Vec::<(String, Value)>::new();
        let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
        put("rho", Value::Float(self.rho));
        put("sigma2", Value::Float(self.sigma2));
        put("features", Value::String(self.features.to_string()));
        put("mode", Value::String(mode_name(self.mode).into()));
        if let ObservationMode::RealWorld { n_sub } = self.mode {
            put("n_sub", Value::Integer(n_sub as i64));
        }
        match self.sampler {
            StationarySampler::BenchmarkInverseCdf => put("sampler", Value::String("inverse_cdf".into())),
            StationarySampler::EulerChain { burn_in, dt, thin } => {
                put("sampler", Value::String("chain".into()));
                put("chain.burn_in", Value::Integer(burn_in as i64));
                put("chain.dt", Value::Float(dt));
                put("chain.thin", Value::Integer(thin as i64));
            }
        }
        put_schedule(&mut put, "dt", &self.dt);
        put_schedule(&mut put, "lr", &self.learner.lr);
        put("algorithm", Value::String(self.learner.algorithm.to_string()));
        put("variant", Value::String(self.learner.variant.to_string()));
        put("mu", Value::Float(self.learner.mu));
        if let Some(m) = self.learner.ball_radius {
            put("M", Value::Float(m));
        }
        put("averaging", Value::Boolean(self.learner.averaging));
        put("metric", Value::String(self.metric.to_string()));
        put("rg.extension", Value::String(self.learner.rg_extension.name().into()));
        match &self.learner.rg_extension {
            RgExtension::Multistep(n) | RgExtension::Minibatch(n) => {
                put("rg.c", Value::Float(n.c));
                put("rg.a", Value::Float(n.a));
            }
            RgExtension::SigmaSchedule(s) => {
                if let Schedule::Power { c, a } = s {
                    put("rg.c", Value::Float(*c));
                    put("rg.a", Value::Float(*a));
                }
            }
            RgExtension::None | RgExtension::Rademacher => {}
        }
        put("k_max", Value::Integer(self.k_max as i64));
        put("seeds", Value::Integer(self.seeds as i64));
        put("seed", Value::Integer(self.seed as i64));
        put("log_every", Value::String(self.log_every.to_string()));
        if let Some((lo, hi)) = self.fit_window {
            put("fit.k_lo", Value::Integer(lo as i64));
            put("fit.k_hi", Value::Integer(hi as i64));
        }
        put("oracle.n", Value::Integer(self.oracle_n as i64));
        for (key, path) in [("output.csv", &self.output.csv), ("output.fit", &self.output.fit), ("output.plot", &self.output.plot)] {
            if let Some(p) = path {
                put(key, Value::String(p.display().to_string()));
            }
        }
        out.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn mode_name(mode: ObservationMode) -> &'static str {
    match mode {
        ObservationMode::Simulator => "simulator",
        ObservationMode::RealWorld { .. } => "realworld",
    }
}

fn put_schedule(put: &mut impl FnMut(&str, Value), prefix: &str, s: &Schedule) {
    put(&format!("{prefix}.family"), Value::String(s.family().into()));
    match *s {
        Schedule::Power { c, a } => {
            put(&format!("{prefix}.c"), Value::Float(c));
            put(&format!("{prefix}.a"), Value::Float(a));
        }
        Schedule::Constant { c } => put(&format!("{prefix}.c"), Value::Float(c)),
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        if let Some(unknown) = flat.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{unknown}`")));
        }
        let mut f = Fields(flat);
        let d = ExperimentConfig::default();

        let mode = match f.string("mode")?.as_deref() {
            None | Some("simulator") => ObservationMode::Simulator,
            Some("realworld") => ObservationMode::RealWorld {
                n_sub: f.u64("n_sub")?.unwrap_or(ObservationMode::DEFAULT_SUBSTEPS as u64) as usize,
            },
            Some(other) => return Err(Error::Config(format!("unknown observation mode `{other}`"))),
        };
        if mode == ObservationMode::Simulator && f.take("n_sub").is_some() {
            return Err(Error::Config("n_sub requires mode = \"realworld\"".into()));
        }
        let sampler = match f.string("sampler")?.as_deref() {
            None | Some("inverse_cdf") => StationarySampler::BenchmarkInverseCdf,
            Some("chain") => StationarySampler::EulerChain {
                burn_in: f.u64("chain.burn_in")?.unwrap_or(10_000),
                dt: f.f64("chain.dt")?.unwrap_or(1e-3),
                thin: f.u64("chain.thin")?.unwrap_or(10),
            },
            Some(other) => return Err(Error::Config(format!("unknown sampler `{other}`"))),
        };
        let dt = f.schedule("dt", d.dt)?;
        let lr = f.schedule("lr", d.learner.lr)?;
        let rg_c = f.f64("rg.c")?;
        let rg_a = f.f64("rg.a")?;
        let rg_extension = match f.string("rg.extension")?.as_deref() {
            None | Some("none") => RgExtension::None,
            Some("rademacher") => RgExtension::Rademacher,
            Some("multistep") => RgExtension::Multistep(CountSchedule::new(rg_c.unwrap_or(1.0), rg_a.unwrap_or(0.0))?),
            Some("minibatch") => RgExtension::Minibatch(CountSchedule::new(rg_c.unwrap_or(1.0), rg_a.unwrap_or(0.0))?),
            Some("sigma") => RgExtension::SigmaSchedule(Schedule::power(rg_c.unwrap_or(1.0), rg_a.unwrap_or(0.125))?),
            Some(other) => return Err(Error::Config(format!("unknown rg.extension `{other}`"))),
        };
        let learner = LearnerConfig {
            algorithm: f.parsed::<Algorithm>("algorithm")?.unwrap_or(d.learner.algorithm),
            variant: f.parsed::<TdVariant>("variant")?.unwrap_or(d.learner.variant),
            mu: f.f64("mu")?.unwrap_or(d.learner.mu),
            ball_radius: f.f64("M")?,
            averaging: f.bool("averaging")?.unwrap_or(d.learner.averaging),
            lr,
            rg_extension,
        };
        let fit_window = match (f.u64("fit.k_lo")?, f.u64("fit.k_hi")?) {
            (None, None) => None,
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => return Err(Error::Config("fit.k_lo and fit.k_hi must be given together".into())),
        };
        let cfg = ExperimentConfig {
            rho: f.f64("rho")?.unwrap_or(d.rho),
            sigma2: f.f64("sigma2")?.unwrap_or(d.sigma2),
            features: f.parsed::<FeatureFamily>("features")?.unwrap_or(d.features),
            mode,
            sampler,
            dt,
            learner,
            metric: f.parsed::<MetricKind>("metric")?.unwrap_or(d.metric),
            k_max: f.u64("k_max")?.unwrap_or(d.k_max),
            seeds: f.u64("seeds")?.map(|s| s as usize).unwrap_or(d.seeds),
            seed: f.u64("seed")?.unwrap_or(d.seed),
            log_every: f.parsed::<LogGrid>("log_every")?.unwrap_or(d.log_every),
            fit_window,
            oracle_n: f.u64("oracle.n")?.map(|n| n as usize).unwrap_or(d.oracle_n),
            output: OutputPaths {
                csv: f.string("output.csv")?.map(PathBuf::from),
                fit: f.string("output.fit")?.map(PathBuf::from),
                plot: f.string("output.plot")?.map(PathBuf::from),
            },
        };
        if let Some(k) = f.0.keys().next() {
            return Err(Error::Config(format!("key `{k}` does not apply to this configuration")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
