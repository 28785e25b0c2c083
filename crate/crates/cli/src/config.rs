//! Plain key/value run-config files with CLI flag overrides.
//!
//! Format: one `key = value` pair per line, `#` comments, blank lines
//! ignored. Unknown keys are rejected so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use stressgrid::stress::StressLimits;
use stressgrid::Head;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

const KNOWN_KEYS: &[&str] = &[
    "case",
    "days",
    "slots_per_day",
    "load_min",
    "load_max",
    "sigma_frac",
    "seed",
    "limits",
    "alarm_frac",
    "stress_frac",
    "n_exponent",
    "train_frac",
    "threads",
    "preset",
    "head",
    "epochs",
    "batch_size",
    "eta",
    "eta_decay",
    "target_metric",
    "paper_exact_adam",
    "mnsn",
    "out",
];

/// Everything a run needs; file values first, flags override.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub days: u32,
    pub slots_per_day: u32,
    pub load_min: f64,
    pub load_max: f64,
    pub sigma_frac: f64,
    pub seed: u64,
    pub limits_name: String,
    pub alarm_frac: f64,
    pub stress_frac: f64,
    pub n_exponent: u32,
    pub train_frac: f64,
    pub threads: usize,
    pub preset: String,
    pub head: Head,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub eta_decay: f64,
    pub target_metric: Option<f64>,
    pub paper_exact_adam: bool,
    /// Minimum node size for the tree baseline; 0 selects by sweep.
    pub mnsn: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: None,
            days: 1,
            slots_per_day: 96,
            load_min: 0.7,
            load_max: 1.2,
            sigma_frac: 0.02,
            seed: 1,
            limits_name: "p90-110".into(),
            alarm_frac: 0.9,
            stress_frac: 1.1,
            n_exponent: 1,
            train_frac: 0.7,
            threads: 1,
            preset: "paper-cnn-118".into(),
            head: Head::Classification,
            epochs: 200,
            batch_size: 64,
            eta: 1e-3,
            eta_decay: 1.0,
            target_metric: None,
            paper_exact_adam: false,
            mnsn: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        message: format!("{e}"),
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { line: i + 1 });
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: i + 1,
                    key: key.into(),
                });
            }
            pairs.insert(key.to_string(), value.trim().to_string());
        }
        // presets first so explicit fraction keys in the same file win
        if let Some(name) = pairs.remove("limits") {
            self.set_limits(&name)?;
        }
        for (key, value) in &pairs {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "case" => self.case = Some(PathBuf::from(value)),
            "days" => self.days = parse(key, value)?,
            "slots_per_day" => self.slots_per_day = parse(key, value)?,
            "load_min" => self.load_min = parse(key, value)?,
            "load_max" => self.load_max = parse(key, value)?,
            "sigma_frac" => self.sigma_frac = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "limits" => self.set_limits(value)?,
            "alarm_frac" => self.alarm_frac = parse(key, value)?,
            "stress_frac" => self.stress_frac = parse(key, value)?,
            "n_exponent" => self.n_exponent = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "preset" => self.preset = value.into(),
            "head" => self.set_head(value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "eta_decay" => self.eta_decay = parse(key, value)?,
            "target_metric" => self.target_metric = Some(parse(key, value)?),
            "paper_exact_adam" => self.paper_exact_adam = parse(key, value)?,
            "mnsn" => self.mnsn = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: other.into(),
                })
            }
        }
        Ok(())
    }

    pub fn set_limits(&mut self, name: &str) -> Result<(), ConfigError> {
        match name {
            "p90-110" => {
                self.alarm_frac = 0.9;
                self.stress_frac = 1.1;
            }
            "p95-97" => {
                self.alarm_frac = 0.95;
                self.stress_frac = 0.97;
            }
            "custom" => {} // alarm_frac / stress_frac keys apply
            other => {
                return Err(ConfigError::BadValue {
                    key: "limits".into(),
                    message: format!("unknown profile `{other}` (p90-110 | p95-97 | custom)"),
                })
            }
        }
        self.limits_name = name.into();
        Ok(())
    }

    pub fn set_head(&mut self, name: &str) -> Result<(), ConfigError> {
        self.head = match name {
            "class" => Head::Classification,
            "si" => Head::Regression,
            other => {
                return Err(ConfigError::BadValue {
                    key: "head".into(),
                    message: format!("unknown head `{other}` (class | si)"),
                })
            }
        };
        Ok(())
    }

    /// Validation that must pass before any expensive work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stress_frac <= self.alarm_frac {
            return Err(ConfigError::Invalid(format!(
                "stress_frac ({}) must exceed alarm_frac ({})",
                self.stress_frac, self.alarm_frac
            )));
        }
        if !(0.0 < self.alarm_frac) {
            return Err(ConfigError::Invalid("alarm_frac must be positive".into()));
        }
        if self.load_min > self.load_max {
            return Err(ConfigError::Invalid(format!(
                "load_min ({}) exceeds load_max ({})",
                self.load_min, self.load_max
            )));
        }
        if !(0.0..1.0).contains(&self.train_frac) || self.train_frac == 0.0 {
            return Err(ConfigError::Invalid("train_frac must be in (0, 1)".into()));
        }
        if self.days == 0 || self.slots_per_day == 0 {
            return Err(ConfigError::Invalid(
                "days and slots_per_day must be positive".into(),
            ));
        }
        if self.n_exponent == 0 {
            return Err(ConfigError::Invalid("n_exponent must be >= 1".into()));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return Err(ConfigError::Invalid("eta_decay must be in (0, 1]".into()));
        }
        if let Some(case) = &self.case {
            if !case.exists() {
                return Err(ConfigError::Invalid(format!(
                    "case path {} does not exist",
                    case.display()
                )));
            }
        }
        Ok(())
    }

    pub fn limits(&self) -> Result<StressLimits, ConfigError> {
        StressLimits::new(self.alarm_frac, self.stress_frac)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Canonical byte string of the generation-relevant settings; hashed
    /// into dataset fingerprints.
    pub fn generation_bytes(&self) -> Vec<u8> {
        format!(
            "days={};slots_per_day={};load_min={};load_max={};sigma_frac={};seed={};\
             alarm_frac={};stress_frac={};n_exponent={};train_frac={}",
            self.days,
            self.slots_per_day,
            self.load_min,
            self.load_max,
            self.sigma_frac,
            self.seed,
            self.alarm_frac,
            self.stress_frac,
            self.n_exponent,
            self.train_frac,
        )
        .into_bytes()
    }
}
