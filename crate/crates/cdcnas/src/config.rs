//! Flat key=value run configuration.
//!
//! Values come from an optional config file, overridden by `--key value`
//! command-line flags (flag wins). Unknown keys are rejected. Every getter
//! records the default it fell back to, so after a command has read its
//! settings the fully-resolved configuration (file + flags + defaults) can
//! be written next to the run outputs; re-running from that file reproduces
//! the run exactly.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable naming the root under which relative `out` paths
/// are created.
pub const RUN_ROOT_ENV: &str = "CDCNAS_RUN_ROOT";

pub const CONFIG_RESOLVED: &str = "config.resolved";
pub const GENOTYPE_FILE: &str = "genotype.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.csv";
pub const TRACE_FILE: &str = "alpha_trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Every key any command understands, with a one-line meaning.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("command", "record of the command that produced this config"),
    ("seed", "global rng seed"),
    ("out", "run directory (relative paths resolve under CDCNAS_RUN_ROOT)"),
    ("data", "dataset directory (manifest.tsv + clips)"),
    // synth
    ("classes", "number of motion classes (2..=7)"),
    ("clips_per_class", "clips generated per class"),
    ("frames", "source frames per clip"),
    ("height", "clip height in pixels"),
    ("width", "clip width in pixels"),
    ("blob_radius", "moving blob radius in pixels"),
    ("blob_contrast", "rgb blob brightness vs background (1.0 = salient)"),
    ("motion_amplitude", "trajectory spatial extent scale"),
    ("rgb_noise", "rgb chroma noise amplitude"),
    ("depth_noise", "depth noise amplitude"),
    ("texture_amp", "rgb background texture amplitude"),
    ("train_frac", "fraction of clips in the train split"),
    ("val_frac", "fraction of clips in the val split"),
    // model / search space
    ("modality", "single modality for backbone search: rgb | depth"),
    ("registry", "operation space: cdc | vanilla"),
    ("theta_t", "theta for temporal CDC ops"),
    ("theta_tr", "theta for temporal-robust CDC ops"),
    ("rates", "frame counts of the multi-rate branches, ascending"),
    ("channels", "initial channels per branch, same order as rates"),
    ("cells", "cells per branch during search"),
    ("derived_cells", "cells per branch in derived networks"),
    ("channel_multiplier", "channel growth factor after derivation"),
    ("k_partial", "partial-channel divisor for mixed edges"),
    ("stem_stride", "spatial stride of the stem convolution"),
    ("shared_cells", "share cell alphas across branches: true | false"),
    ("shared_levels", "share lateral alphas across levels: true | false"),
    // schedules
    ("epochs", "search epochs"),
    ("freeze_epochs", "epochs with architecture parameters frozen"),
    ("batch_size", "clips per batch"),
    ("weight_lr", "sgd learning rate for network weights"),
    ("weight_momentum", "sgd momentum"),
    ("weight_decay", "l2 decay for network weights"),
    ("arch_lr", "adam learning rate for architecture parameters"),
    ("arch_weight_decay", "l2 decay for architecture parameters"),
    ("lr_decay_epoch", "epoch at which the search weight lr decays"),
    ("lr_decay_factor", "multiplicative search lr decay"),
    ("train_epochs", "training epochs for derived networks"),
    ("train_lr", "sgd learning rate for training"),
    ("plateau_factor", "lr factor on validation plateau"),
    ("plateau_patience", "epochs without improvement before decay"),
    ("flip_prob", "horizontal flip probability during training"),
    ("crop", "spatial crop size (train: random, eval: center)"),
    // inputs / eval
    ("genotype", "genotype file for train"),
    ("rgb_genotype", "stage-1 genotype for the rgb modality"),
    ("depth_genotype", "stage-1 genotype for the depth modality"),
    ("run", "search run directory for derive"),
    ("models", "comma-separated train run directories for eval"),
    ("fusion", "eval fusion: none | mean-softmax"),
    ("split", "eval split: train | val | test"),
    // bench
    ("bench_repeats", "timed repetitions per benchmark entry"),
];

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig {
            values: BTreeMap::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "config file {} not found",
                path.display()
            )));
        }
        let mut cfg = RunConfig::new();
        let text = std::fs::read_to_string(path)?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    ln + 1
                )));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply `--key value` style overrides (flag wins over file).
    pub fn apply_overrides(&mut self, tokens: &[String]) -> Result<()> {
        let mut it = tokens.iter();
        while let Some(tok) = it.next() {
            let Some(key) = tok.strip_prefix("--") else {
                return Err(Error::config(format!(
                    "expected a --key flag, got '{tok}'"
                )));
            };
            // Accept both --key value and --key=value.
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
            } else {
                let v = it.next().ok_or_else(|| {
                    Error::config(format!("flag --{key} is missing a value"))
                })?;
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    fn fetch(&mut self, key: &str, default: &str) -> String {
        if let Some(v) = self.values.get(key) {
            return v.clone();
        }
        self.values.insert(key.to_string(), default.to_string());
        default.to_string()
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        self.fetch(key, default)
    }

    pub fn get_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.fetch(key, &default.to_string());
        v.parse()
            .map_err(|_| Error::config(format!("key '{key}': '{v}' is not an integer")))
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64> {
        let v = self.fetch(key, &default.to_string());
        v.parse()
            .map_err(|_| Error::config(format!("key '{key}': '{v}' is not an integer")))
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.fetch(key, &format!("{default}"));
        v.parse()
            .map_err(|_| Error::config(format!("key '{key}': '{v}' is not a number")))
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = self.fetch(key, if default { "true" } else { "false" });
        match v.as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(Error::config(format!(
                "key '{key}': '{other}' is not a boolean"
            ))),
        }
    }

    pub fn get_usize_list(&mut self, key: &str, default: &str) -> Result<Vec<usize>> {
        let v = self.fetch(key, default);
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("key '{key}': '{s}' is not an integer")))
            })
            .collect()
    }

    pub fn get_str_list(&mut self, key: &str, default: &str) -> Vec<String> {
        let v = self.fetch(key, default);
        if v.is_empty() {
            Vec::new()
        } else {
            v.split(',').map(|s| s.trim().to_string()).collect()
        }
    }

    /// Required key with no default.
    pub fn require(&self, key: &str) -> Result<String> {
        self.values
            .get(key)
            .cloned()
            .ok_or_else(|| Error::config(format!("required key '{key}' is missing")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// `out` resolved against the run-root environment variable.
    pub fn out_dir(&mut self, default: &str) -> PathBuf {
        let out = PathBuf::from(self.fetch("out", default));
        if out.is_absolute() {
            return out;
        }
        match std::env::var(RUN_ROOT_ENV) {
            Ok(root) if !root.is_empty() => PathBuf::from(root).join(out),
            _ => out,
        }
    }

    /// Sorted `key = value` lines; identical configs produce identical bytes.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_RESOLVED), self.resolved_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags_flag_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nseed = 3\nepochs = 10\n").unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        cfg.apply_overrides(&["--seed".into(), "7".into()]).unwrap();
        assert_eq!(cfg.get_u64("seed", 0).unwrap(), 7);
        assert_eq!(cfg.get_usize("epochs", 1).unwrap(), 10);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = RunConfig::new();
        assert!(cfg.set("seed", "1").is_ok());
        let err = cfg.set("sneed", "1").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn resolved_text_includes_defaults_and_sorts() {
        let mut cfg = RunConfig::new();
        cfg.set("seed", "5").unwrap();
        let _ = cfg.get_usize("epochs", 12).unwrap();
        let _ = cfg.get_str("registry", "cdc");
        let text = cfg.resolved_text();
        assert_eq!(text, "epochs = 12\nregistry = cdc\nseed = 5\n");
    }

    #[test]
    fn key_equals_value_override_form() {
        let mut cfg = RunConfig::new();
        cfg.apply_overrides(&["--crop=32".into()]).unwrap();
        assert_eq!(cfg.get_usize("crop", 0).unwrap(), 32);
    }
}
