//! Plain-text `key = value` experiment configuration.
//!
//! Unset keys fall back to the five-asset benchmark defaults
//! (d=5, r=0.05, delta=0.1, sigma=0.2, x0=100, kappa=100, T=3, J=3).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::cv::BetaMode;
use crate::error::Error;
use crate::estimators::{EstimatorKind, EstimatorProfile};
use crate::model::{ModelParams, TimeGrid};
use crate::scheduler::ScheduleConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mesh,
    Local,
    Global,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "mesh" => Ok(Method::Mesh),
            "local" => Ok(Method::Local),
            "global" => Ok(Method::Global),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn profile(&self) -> EstimatorProfile {
        match self {
            Method::Mesh => EstimatorProfile::mesh(),
            Method::Local => EstimatorProfile::local(),
            Method::Global => EstimatorProfile::global(0.5),
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            Method::Mesh => EstimatorKind::Mesh,
            Method::Local => EstimatorKind::Local { bandwidth_const: 100.0 },
            Method::Global => EstimatorKind::Global { degree: 2 },
        }
    }

    pub fn constants(&self) -> ScheduleConstants {
        match self {
            Method::Mesh => ScheduleConstants::mesh(),
            Method::Local => ScheduleConstants::local(),
            Method::Global => ScheduleConstants::generic(100),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mesh => "mesh",
            Method::Local => "local",
            Method::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Multilevel,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "single" => Ok(Mode::Single),
            "ml" | "multilevel" => Ok(Mode::Multilevel),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvMode {
    Off,
    /// outer control variate, fixed beta = 1
    Outer,
    /// outer control variate, regression-estimated beta
    OuterBeta,
    /// also subtract the European price process from the training targets
    /// (mesh only); the outer adjustment then uses a regression beta
    Inner,
}

impl CvMode {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "off" => Ok(CvMode::Off),
            "outer" => Ok(CvMode::Outer),
            "outer-beta" => Ok(CvMode::OuterBeta),
            "inner" => Ok(CvMode::Inner),
            other => Err(Error::Config(format!("unknown cv mode '{other}'"))),
        }
    }

    pub fn beta_mode(&self) -> Option<BetaMode> {
        match self {
            CvMode::Off => None,
            CvMode::Outer => Some(BetaMode::Fixed(1.0)),
            CvMode::OuterBeta | CvMode::Inner => Some(BetaMode::Auto),
        }
    }
}

/// Everything an experiment run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub mode: Mode,
    pub epsilons: Vec<f64>,
    pub repetitions: usize,
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub kappa: f64,
    pub constants: ScheduleConstants,
    pub cv: CvMode,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
}

impl ExperimentConfig {
    /// Benchmark defaults: mesh, single level, desk-scale repetitions.
    pub fn benchmark() -> Self {
        let method = Method::Mesh;
        ExperimentConfig {
            method,
            mode: Mode::Single,
            epsilons: vec![4.0, 2.0, 1.0, 0.5],
            repetitions: 20,
            params: ModelParams::benchmark(),
            grid: TimeGrid::equidistant(3.0, 3).expect("benchmark grid"),
            kappa: 100.0,
            constants: method.constants(),
            cv: CvMode::OuterBeta,
            seed: 20260826,
            out: None,
            paper_scale: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let map = parse_file(path)?;
        Self::from_map(&map)
    }

    pub fn from_map(map: &HashMap<String, String>) -> Result<Self, Error> {
        let mut cfg = Self::benchmark();
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
        }
        if let Some(v) = map.get("method") {
            cfg.method = Method::parse(v)?;
            cfg.constants = cfg.method.constants();
        }
        if let Some(v) = map.get("mode") {
            cfg.mode = Mode::parse(v)?;
        }
        if let Some(v) = map.get("cv") {
            cfg.cv = CvMode::parse(v)?;
        }
        if let Some(v) = map.get("epsilon") {
            cfg.epsilons = parse_list(v, "epsilon")?;
        }
        if let Some(v) = map.get("repetitions") {
            cfg.repetitions = parse_num::<usize>(v, "repetitions")?;
        }
        if let Some(v) = map.get("seed") {
            cfg.seed = parse_num::<u64>(v, "seed")?;
        }
        if let Some(v) = map.get("k0") {
            cfg.constants.k0 = parse_num::<usize>(v, "k0")?;
        }
        if let Some(v) = map.get("theta") {
            cfg.constants.theta = parse_num::<f64>(v, "theta")?;
        }
        if let Some(v) = map.get("paper_scale") {
            cfg.paper_scale = parse_bool(v, "paper_scale")?;
        }
        if let Some(v) = map.get("out") {
            cfg.out = Some(PathBuf::from(v));
        }
        if let Some(v) = map.get("kappa") {
            cfg.kappa = parse_num::<f64>(v, "kappa")?;
        }

        // model block: rebuild only when any model key appears
        let model_keys = ["d", "r", "delta", "sigma", "x0", "T", "J"];
        if model_keys.iter().any(|k| map.contains_key(*k)) {
            let d = map.get("d").map(|v| parse_num::<usize>(v, "d")).transpose()?.unwrap_or(5);
            let r = map.get("r").map(|v| parse_num::<f64>(v, "r")).transpose()?.unwrap_or(0.05);
            let delta =
                map.get("delta").map(|v| parse_num::<f64>(v, "delta")).transpose()?.unwrap_or(0.1);
            let sigma =
                map.get("sigma").map(|v| parse_num::<f64>(v, "sigma")).transpose()?.unwrap_or(0.2);
            let x0 = match map.get("x0") {
                Some(v) => {
                    let xs = parse_list(v, "x0")?;
                    if xs.len() == 1 {
                        vec![xs[0]; d]
                    } else {
                        xs
                    }
                }
                None => vec![100.0; d],
            };
            let maturity =
                map.get("T").map(|v| parse_num::<f64>(v, "T")).transpose()?.unwrap_or(3.0);
            let dates = map.get("J").map(|v| parse_num::<usize>(v, "J")).transpose()?.unwrap_or(3);
            cfg.params = ModelParams::new(d, r, delta, sigma, x0)
                .map_err(|e| Error::Config(e.to_string()))?;
            cfg.grid = TimeGrid::equidistant(maturity, dates)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon grid is empty".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("epsilon grid must be positive".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilon grid must be strictly decreasing".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config("kappa must be positive".into()));
        }
        Ok(())
    }
}

const KNOWN_KEYS: &[&str] = &[
    "method", "mode", "cv", "epsilon", "repetitions", "seed", "k0", "theta", "paper_scale",
    "out", "kappa", "d", "r", "delta", "sigma", "x0", "T", "J",
];

/// `key = value` lines; `#` starts a comment; blank lines ignored.
pub fn parse_str(text: &str) -> Result<HashMap<String, String>, Error> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

pub fn parse_file(path: &Path) -> Result<HashMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_str(&text)
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, Error> {
    v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'")))
}

fn parse_bool(v: &str, key: &str) -> Result<bool, Error> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{v}' for key '{key}'"))),
    }
}

fn parse_list(v: &str, key: &str) -> Result<Vec<f64>, Error> {
    v.split(',').map(|s| parse_num::<f64>(s.trim(), key)).collect()
}
