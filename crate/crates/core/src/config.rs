//! Run configuration: flat `key=value` files plus per-field overrides.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Length of every prediction list.
    pub top_k: usize,
    /// Neighbour count as a fraction of the training set.
    pub knn_fraction: f64,
    /// Fraction of training points that feature selection must cover.
    pub rho: f64,
    /// Chains whose accumulated transition probability drops below this are cut.
    pub min_tp: f64,
    /// Maximum number of predecessors considered for implicit features.
    pub max_lookback: usize,
    /// Iterations of the test-time implicit feature refinement.
    pub refine_iters: usize,
    /// Cumulative histogram mass an interval fit must cover.
    pub coverage_threshold: f64,
    pub rng_seed: u64,
    /// Chronological fraction of each user's trace used for training.
    pub train_fraction: f64,
    /// Upper edges of the installed-app cohorts in evaluation reports.
    pub cohort_app_edges: Vec<usize>,
    /// Width, in bits, of the usage-entropy cohorts.
    pub cohort_entropy_step: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            top_k: 4,
            knn_fraction: 0.40,
            rho: 0.70,
            min_tp: 0.001,
            max_lookback: 5,
            refine_iters: 3,
            coverage_threshold: 0.75,
            rng_seed: 42,
            train_fraction: 2.0 / 3.0,
            cohort_app_edges: vec![5, 10, 20, 30],
            cohort_entropy_step: 0.5,
        }
    }
}

pub const FIELDS: [&str; 11] = [
    "top_k",
    "knn_fraction",
    "rho",
    "min_tp",
    "max_lookback",
    "refine_iters",
    "coverage_threshold",
    "rng_seed",
    "train_fraction",
    "cohort_app_edges",
    "cohort_entropy_step",
];

fn parse_value<T: FromStr>(field: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::config(field, format!("cannot parse `{}`", raw.trim())))
}

impl Config {
    /// Sets one field from its textual value, without range validation.
    pub fn set(&mut self, field: &str, raw: &str) -> Result<()> {
        match field {
            "top_k" => self.top_k = parse_value(field, raw)?,
            "knn_fraction" => self.knn_fraction = parse_value(field, raw)?,
            "rho" => self.rho = parse_value(field, raw)?,
            "min_tp" => self.min_tp = parse_value(field, raw)?,
            "max_lookback" => self.max_lookback = parse_value(field, raw)?,
            "refine_iters" => self.refine_iters = parse_value(field, raw)?,
            "coverage_threshold" => self.coverage_threshold = parse_value(field, raw)?,
            "rng_seed" => self.rng_seed = parse_value(field, raw)?,
            "train_fraction" => self.train_fraction = parse_value(field, raw)?,
            "cohort_app_edges" => {
                self.cohort_app_edges = raw
                    .split(',')
                    .filter(|v| !v.trim().is_empty())
                    .map(|v| parse_value(field, v))
                    .collect::<Result<_>>()?
            }
            "cohort_entropy_step" => self.cohort_entropy_step = parse_value(field, raw)?,
            other => return Err(Error::config(other, "unknown config key")),
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key=value, got `{line}`") })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "top_k={}\nknn_fraction={}\nrho={}\nmin_tp={}\nmax_lookback={}\nrefine_iters={}\ncoverage_threshold={}\nrng_seed={}\ntrain_fraction={}\ncohort_app_edges={}\ncohort_entropy_step={}\n",
            self.top_k,
            self.knn_fraction,
            self.rho,
            self.min_tp,
            self.max_lookback,
            self.refine_iters,
            self.coverage_threshold,
            self.rng_seed,
            self.train_fraction,
            self.cohort_app_edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
            self.cohort_entropy_step
        )
    }

    pub fn validate(&self) -> Result<()> {
        fn unit_open_closed(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is outside (0, 1]")))
            }
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be positive"));
        }
        unit_open_closed("knn_fraction", self.knn_fraction)?;
        unit_open_closed("rho", self.rho)?;
        unit_open_closed("coverage_threshold", self.coverage_threshold)?;
        if !(self.min_tp >= 0.0 && self.min_tp < 1.0) {
            return Err(Error::config("min_tp", format!("{} is outside [0, 1)", self.min_tp)));
        }
        if self.max_lookback == 0 {
            return Err(Error::config("max_lookback", "must be positive"));
        }
        if self.refine_iters == 0 {
            return Err(Error::config("refine_iters", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", format!("{} is outside (0, 1)", self.train_fraction)));
        }
        if self.cohort_app_edges.is_empty() || self.cohort_app_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("cohort_app_edges", "must be a non-empty increasing list"));
        }
        if !(self.cohort_entropy_step > 0.0) {
            return Err(Error::config("cohort_entropy_step", "must be positive"));
        }
        Ok(())
    }
}
