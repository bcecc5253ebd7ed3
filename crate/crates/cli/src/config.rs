//! Flat `key = value` run configuration and artifact provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every key any subcommand reads. Keys a subcommand does not use are ignored
/// by it, so one file can drive a whole pipeline.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    // simulate
    "duration_s",
    "n_per_class",
    "separation",
    "style_offset",
    "jitter",
    "prompt_min_s",
    "prompt_max_s",
    "rate_hz",
    "road_contexts",
    // label / train / compare
    "pre",
    "post",
    "bandwidth",
    "grid_points",
    "grid_margin",
    "density_floor",
    // filter / evaluate
    "policy",
    "threshold",
    "prior",
    // profile
    "length",
    "split",
    "features",
    "train_fraction",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", n + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                bail!("line {}: unknown key {k:?}", n + 1);
            }
            if values.insert(k.to_owned(), v.to_owned()).is_some() {
                bail!("line {}: key {k:?} given twice", n + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: invalid value {v:?}: {e}")))
            .transpose()
    }

    /// Command-line value, else config value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

/// Seed and digest of the effective parameters, stamped on every artifact.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub seed: u64,
    pub digest: String,
}

impl Provenance {
    /// Digest over the command name and its resolved `key=value` pairs.
    /// Input and output paths are left out so moved data reproduces.
    pub fn new(command: &str, seed: u64, params: &[(&str, String)]) -> Self {
        let mut text = format!("command={command}\nseed={seed}\n");
        let mut sorted: Vec<_> = params.iter().collect();
        sorted.sort_by_key(|(k, _)| *k);
        for (k, v) in sorted {
            let _ = writeln!(text, "{k}={v}");
        }
        Self { seed, digest: hex::encode(Sha256::digest(text.as_bytes())) }
    }

    pub fn header(&self) -> String {
        format!("# workload {VERSION} seed={} config={}", self.seed, self.digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let c = RunConfig::parse("# toy\nduration_s = 60\n\nn_per_class=2\n").unwrap();
        assert_eq!(c.get::<f64>("duration_s").unwrap(), Some(60.0));
        assert_eq!(c.resolve(None, "n_per_class", 1usize).unwrap(), 2);
        assert_eq!(c.resolve(Some(5), "n_per_class", 1usize).unwrap(), 5);
        assert_eq!(c.resolve(None, "jitter", 0.3).unwrap(), 0.3);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunConfig::parse("duration_s 60").is_err());
        assert!(RunConfig::parse("durations = 60").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed = x").unwrap().get::<u64>("seed").is_err());
    }

    #[test]
    fn digest_ignores_parameter_order() {
        let a = Provenance::new("x", 1, &[("a", "1".into()), ("b", "2".into())]);
        let b = Provenance::new("x", 1, &[("b", "2".into()), ("a", "1".into())]);
        let c = Provenance::new("x", 2, &[("a", "1".into()), ("b", "2".into())]);
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, c.digest);
        assert_eq!(a.digest.len(), 64);
        assert!(a.header().starts_with("# workload "));
    }
}
