//! Flat key=value run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Keys outside the known set are rejected so typos fail loudly.
//! Every value a command reads (including applied defaults) is recorded,
//! and the full resolved set is echoed into the run manifest.

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const KNOWN_KEYS: &[&str] = &[
    // general
    "seed",
    "out_dir",
    "dataset",
    "checkpoint",
    "checkpoints",
    // backbone
    "image_size",
    "patch_size",
    "depth",
    "heads",
    "embed_dim",
    "insert_at",
    "num_classes",
    "layer_kind",
    // layer
    "focal",
    "coord_mode",
    "fusion_mode",
    "video_strategy",
    "stem_hidden",
    // optimizer
    "lr",
    "momentum",
    "steps",
    "epochs",
    "batch",
    // tcn loss
    "tcn_positive_window",
    "tcn_margin",
    "tcn_negatives",
    // data generation
    "data_kind",
    "classes",
    "scenes_per_class",
    "test_scenes_per_class",
    "views_per_scene",
    "cameras_train",
    "cameras_unseen",
    "train_pairs",
    "test_pairs",
    "frames",
    "static_camera_pool",
    "trajectory_pool",
    "radius_min",
    "radius_max",
    // ablation sweep
    "ablate_seeds",
    // gradient check
    "gradcheck_directions",
];

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got '{raw}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
        }
        Ok(RunConfig {
            values,
            resolved: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Override a value (CLI flags); the key must be known.
    pub fn set(&mut self, key: &str, value: String) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    fn record(&self, key: &str, value: &str) {
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        let v = self
            .values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    pub fn require_str(&self, key: &str) -> Result<String> {
        match self.values.get(key) {
            Some(v) => {
                self.record(key, v);
                Ok(v.clone())
            }
            None => Err(Error::Config(format!("missing required key '{key}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.get_parsed(key, default, "integer")
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.get_parsed(key, default, "integer")
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.get_parsed(key, default, "number")
    }

    fn get_parsed<T: std::str::FromStr + ToString>(
        &self,
        key: &str,
        default: T,
        kind: &str,
    ) -> Result<T> {
        match self.values.get(key) {
            None => {
                self.record(key, &default.to_string());
                Ok(default)
            }
            Some(v) => {
                self.record(key, v);
                v.parse().map_err(|_| {
                    Error::Config(format!("key '{key}': expected {kind}, got '{v}'"))
                })
            }
        }
    }

    /// Comma-separated list of indices; an empty value is an empty list.
    pub fn get_usize_list(&self, key: &str, default: &str) -> Result<Vec<usize>> {
        let v = self.get_str(key, default);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("key '{key}': bad index '{s}'")))
            })
            .collect()
    }

    /// All provided and resolved values, sorted by key. This is the
    /// manifest echo.
    pub fn resolved_dump(&self) -> String {
        let mut merged = self.values.clone();
        for (k, v) in self.resolved.borrow().iter() {
            merged.entry(k.clone()).or_insert_with(|| v.clone());
        }
        let mut out = String::new();
        for (k, v) in merged {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_blanks() {
        let cfg = RunConfig::parse("seed = 7\n\n# a comment\nlr = 0.5 # inline\n").unwrap();
        assert_eq!(cfg.get_u64("seed", 0).unwrap(), 7);
        assert_eq!(cfg.get_f64("lr", 0.0).unwrap(), 0.5);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::parse("bogus = 1\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("just a line\n").is_err());
    }

    #[test]
    fn defaults_are_recorded_in_the_dump() {
        let cfg = RunConfig::parse("seed = 3\n").unwrap();
        let _ = cfg.get_usize("batch", 8).unwrap();
        let dump = cfg.resolved_dump();
        assert!(dump.contains("seed = 3"));
        assert!(dump.contains("batch = 8"));
    }

    #[test]
    fn insert_at_lists() {
        let cfg = RunConfig::parse("insert_at = 2,4, 6\n").unwrap();
        assert_eq!(cfg.get_usize_list("insert_at", "").unwrap(), vec![2, 4, 6]);
        let cfg = RunConfig::parse("insert_at =\n").unwrap();
        assert!(cfg.get_usize_list("insert_at", "1").unwrap().is_empty());
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.get_usize_list("insert_at", "2").unwrap(), vec![2]);
    }

    #[test]
    fn missing_required_key_is_an_error() {
        let cfg = RunConfig::parse("").unwrap();
        assert!(cfg.require_str("dataset").is_err());
    }
}
