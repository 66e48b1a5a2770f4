//! Training configuration and its flat `key = value` file format.
//!
//! Keys are the [`TrainConfig`] field names; `-` and `_` are interchangeable
//! (`lambda-e` and `lambda_e` name the same key). Blank lines and lines
//! starting with `#` are ignored.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Quaternion dimension `d` (each embedding holds `4d` reals).
    pub dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Weight of the embedding regularizer.
    pub lambda_e: f64,
    /// Weight of the periodic temporal regularizer.
    pub lambda_t: f64,
    /// Norm order of both regularizers.
    pub p: f64,
    pub periodic_enabled: bool,
    pub seed: u64,
    /// Validate every this many epochs (and after the last); `0` disables.
    pub eval_every: usize,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
    /// Worker threads; `0` = all cores, `1` = strict sequential mode.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 2000,
            batch_size: 1000,
            max_epochs: 200,
            learning_rate: 0.1,
            lambda_e: 0.0025,
            lambda_t: 0.1,
            p: 4.0,
            periodic_enabled: true,
            seed: 0,
            eval_every: 5,
            dataset: None,
            checkpoint: None,
            metrics_log: None,
            threads: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dim",
    "batch_size",
    "max_epochs",
    "learning_rate",
    "lambda_e",
    "lambda_t",
    "p",
    "periodic_enabled",
    "seed",
    "eval_every",
    "dataset",
    "checkpoint",
    "metrics_log",
    "threads",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl TrainConfig {
    /// ICEWS14 / ICEWS05-15 hyperparameters.
    pub fn icews() -> Self {
        Self::default()
    }

    /// GDELT hyperparameters.
    pub fn gdelt() -> Self {
        Self {
            lambda_e: 0.0001,
            lambda_t: 0.1,
            ..Self::default()
        }
    }

    /// Canonical key name: lowercase with underscores.
    pub fn canonical_key(key: &str) -> String {
        key.trim().to_ascii_lowercase().replace('-', "_")
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match Self::canonical_key(key).as_str() {
            "dim" => self.dim = parse("dim", value)?,
            "batch_size" => self.batch_size = parse("batch_size", value)?,
            "max_epochs" => self.max_epochs = parse("max_epochs", value)?,
            "learning_rate" => self.learning_rate = parse("learning_rate", value)?,
            "lambda_e" => self.lambda_e = parse("lambda_e", value)?,
            "lambda_t" => self.lambda_t = parse("lambda_t", value)?,
            "p" => self.p = parse("p", value)?,
            "periodic_enabled" => self.periodic_enabled = parse_bool("periodic_enabled", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "eval_every" => self.eval_every = parse("eval_every", value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "metrics_log" => self.metrics_log = Some(PathBuf::from(value)),
            "threads" => self.threads = parse("threads", value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines into `(canonical key, value)` pairs.
    pub fn parse_overrides(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = Self::canonical_key(k);
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            out.push((key, v.trim().to_owned()));
        }
        Ok(out)
    }

    /// Applies a config file on top of `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in Self::parse_overrides(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Renders every field as a config file that [`TrainConfig::apply_file`]
    /// reads back.
    pub fn to_kv_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines = vec![
            format!("dim = {}", self.dim),
            format!("batch_size = {}", self.batch_size),
            format!("max_epochs = {}", self.max_epochs),
            format!("learning_rate = {}", self.learning_rate),
            format!("lambda_e = {}", self.lambda_e),
            format!("lambda_t = {}", self.lambda_t),
            format!("p = {}", self.p),
            format!("periodic_enabled = {}", self.periodic_enabled),
            format!("seed = {}", self.seed),
            format!("eval_every = {}", self.eval_every),
            format!("threads = {}", self.threads),
        ];
        for (k, v) in [
            ("dataset", path(&self.dataset)),
            ("checkpoint", path(&self.checkpoint)),
            ("metrics_log", path(&self.metrics_log)),
        ] {
            if let Some(v) = v {
                lines.push(format!("{k} = {v}"));
            }
        }
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Config("p must be at least 1".into()));
        }
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_t", self.lambda_t)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_presets() {
        let c = TrainConfig::icews();
        assert_eq!((c.dim, c.max_epochs, c.learning_rate, c.p), (2000, 200, 0.1, 4.0));
        assert_eq!((c.lambda_e, c.lambda_t), (0.0025, 0.1));
        let g = TrainConfig::gdelt();
        assert_eq!((g.lambda_e, g.lambda_t), (0.0001, 0.1));
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig {
            dim: 16,
            periodic_enabled: false,
            dataset: Some("data/x".into()),
            ..TrainConfig::default()
        };
        c.lambda_e = 0.125;
        let text = c.to_kv_text();
        let mut d = TrainConfig::default();
        for (k, v) in TrainConfig::parse_overrides(&text).unwrap() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn hyphenated_keys_and_comments() {
        let pairs = TrainConfig::parse_overrides("# comment\n\nlambda-e = 0.5\nmax_epochs=3\n").unwrap();
        assert_eq!(
            pairs,
            [("lambda_e".to_owned(), "0.5".to_owned()), ("max_epochs".to_owned(), "3".to_owned())]
        );
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainConfig::parse_overrides("learning_rat = 0.1\n").is_err());
        assert!(TrainConfig::parse_overrides("just text\n").is_err());
        assert!(TrainConfig::default().set("bogus", "1").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { p: 0.5, ..Default::default() },
            TrainConfig { lambda_t: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
