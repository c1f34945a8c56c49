//! Run configuration: flat `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use spiked_landscape::ModelParams;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Options shared by every subcommand. Each one can also come from the
/// config file under the same name (dashes or underscores).
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key=value config file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SPIKED_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Tensor order p.
    #[arg(short, long, global = true)]
    pub p: Option<u32>,
    /// Spike order k.
    #[arg(short, long, global = true)]
    pub k: Option<u32>,
    /// Signal strength, one value or a comma separated list.
    #[arg(short, long, global = true)]
    pub lambda: Option<String>,
    /// Log-spaced lambda sweep LO:HI:COUNT.
    #[arg(long, global = true)]
    pub sweep: Option<String>,
    /// Dimension N.
    #[arg(short, long, global = true)]
    pub n: Option<u32>,
    /// Monte Carlo sample count.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Descent restarts per instance.
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Disorder instances.
    #[arg(long, global = true)]
    pub instances: Option<usize>,
    /// Counting window M_LO,M_HI,E_LO,E_HI.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Latitude grid size for surfaces.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Standard errors allowed in Monte Carlo comparisons.
    #[arg(long, global = true)]
    pub sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaSpec {
    Single { value: f64 },
    List { values: Vec<f64> },
    Sweep { lo: f64, hi: f64, count: usize },
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Single { value } => vec![*value],
            Self::List { values } => values.clone(),
            Self::Sweep { lo, hi, count } => log_space(*lo, *hi, *count),
        }
    }
}

pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Fully resolved configuration, echoed into every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub p: Option<u32>,
    pub k: Option<u32>,
    pub lambda: Option<LambdaSpec>,
    pub n: Option<u32>,
    pub seed: u64,
    pub samples: Option<usize>,
    pub restarts: Option<usize>,
    pub instances: Option<usize>,
    pub window: Option<[f64; 4]>,
    pub grid: usize,
    pub sigmas: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

const KEYS: [&str; 15] = [
    "seed", "workers", "format", "output", "p", "k", "lambda", "sweep", "n", "samples", "restarts",
    "instances", "window", "grid", "sigmas",
];

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key '{key}'", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse {key} = '{v}'")))
}

fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key).map(|v| parse(key, v)).transpose(),
    }
}

fn parse_floats(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|s| parse::<f64>(key, s)).collect()
}

fn parse_sweep(v: &str) -> Result<LambdaSpec, CliError> {
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("sweep '{v}' must be LO:HI:COUNT")));
    }
    let (lo, hi, count) = (parse::<f64>("sweep", parts[0])?, parse::<f64>("sweep", parts[1])?, parse::<usize>("sweep", parts[2])?);
    if !(lo > 0.0 && hi >= lo && hi.is_finite() && count >= 1) {
        return Err(CliError::Usage(format!("sweep '{v}' needs 0 < LO <= HI and COUNT >= 1")));
    }
    Ok(LambdaSpec::Sweep { lo, hi, count })
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let file = match &o.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let lambda_raw = o.lambda.clone().or_else(|| file.get("lambda").cloned());
        let sweep_raw = o.sweep.clone().or_else(|| file.get("sweep").cloned());
        let lambda = match (lambda_raw, sweep_raw) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage("give either lambda or sweep, not both".into()))
            }
            (Some(l), None) => {
                let v = parse_floats("lambda", &l)?;
                Some(if v.len() == 1 { LambdaSpec::Single { value: v[0] } } else { LambdaSpec::List { values: v } })
            }
            (None, Some(s)) => Some(parse_sweep(&s)?),
            (None, None) => None,
        };
        let window = match o.window.clone().or_else(|| file.get("window").cloned()) {
            Some(w) => {
                let v = parse_floats("window", &w)?;
                let arr: [f64; 4] = v
                    .try_into()
                    .map_err(|_| CliError::Usage(format!("window '{w}' needs four numbers")))?;
                Some(arr)
            }
            None => None,
        };
        let format = match o.format {
            Some(f) => f,
            None => match file.get("format").map(String::as_str) {
                None | Some("json") => Format::Json,
                Some("csv") => Format::Csv,
                Some(other) => return Err(CliError::Usage(format!("unknown format '{other}'"))),
            },
        };
        let cfg = Self {
            p: pick(o.p, &file, "p")?,
            k: pick(o.k, &file, "k")?,
            lambda,
            n: pick(o.n, &file, "n")?,
            seed: pick(o.seed, &file, "seed")?.unwrap_or(1),
            samples: pick(o.samples, &file, "samples")?,
            restarts: pick(o.restarts, &file, "restarts")?,
            instances: pick(o.instances, &file, "instances")?,
            window,
            grid: pick(o.grid, &file, "grid")?.unwrap_or(201),
            sigmas: pick(o.sigmas, &file, "sigmas")?.unwrap_or(3.0),
            format,
            output: o.output.clone().or_else(|| file.get("output").map(PathBuf::from)),
            workers: pick(o.workers, &file, "workers")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let (Some(p), Some(k)) = (self.p, self.k) {
            for lam in self.lambda.as_ref().map(LambdaSpec::values).unwrap_or_else(|| vec![0.0]) {
                ModelParams::new(p, k, lam)?;
            }
        }
        if self.n.is_some_and(|n| n < 2) {
            return Err(CliError::Usage("n must be at least 2".into()));
        }
        for (key, v) in [("samples", self.samples), ("restarts", self.restarts), ("instances", self.instances)] {
            if v == Some(0) {
                return Err(CliError::Usage(format!("{key} must be positive")));
            }
        }
        if self.grid < 2 {
            return Err(CliError::Usage("grid must be at least 2".into()));
        }
        if !(self.sigmas > 0.0 && self.sigmas.is_finite()) {
            return Err(CliError::Usage("sigmas must be positive".into()));
        }
        if let Some(w) = self.window {
            if !(w[0] < w[1] && w[2] < w[3]) {
                return Err(CliError::Usage("window needs M_LO < M_HI and E_LO < E_HI".into()));
            }
        }
        Ok(())
    }

    pub fn p_k(&self) -> Result<(u32, u32), CliError> {
        match (self.p, self.k) {
            (Some(p), Some(k)) => Ok((p, k)),
            _ => Err(CliError::Usage("this command needs --p and --k".into())),
        }
    }

    pub fn lambdas(&self) -> Result<Vec<f64>, CliError> {
        self.lambda
            .as_ref()
            .map(LambdaSpec::values)
            .ok_or_else(|| CliError::Usage("this command needs --lambda or --sweep".into()))
    }

    /// Model for commands that take exactly one lambda.
    pub fn single(&self) -> Result<ModelParams, CliError> {
        let (p, k) = self.p_k()?;
        match &self.lambda {
            Some(LambdaSpec::Single { value }) => Ok(ModelParams::new(p, k, *value)?),
            Some(_) => Err(CliError::Usage("this command takes a single lambda".into())),
            None => Err(CliError::Usage("this command needs --lambda".into())),
        }
    }

    pub fn model(&self) -> Option<Result<ModelParams, CliError>> {
        self.p.map(|_| self.single())
    }
}
