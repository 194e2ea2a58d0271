//! Flat key=value configuration shared by the CLI subcommands. File values
//! override defaults; command-line overrides beat the file.

use std::path::Path;

use crate::corpus::{SplitParams, TokenizePolicy};
use crate::error::{CoreError, Result};
use crate::model::HyperParams;

/// Full pipeline configuration with the documented defaults.
#[derive(Debug, Clone)]
pub struct Config {
    pub hyper: HyperParams,
    pub split: SplitParams,
    pub min_token_len: usize,
    pub stopwords_enabled: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config::new()
    }
}

impl Config {
    pub fn new() -> Self {
        Config {
            hyper: HyperParams::default(),
            split: SplitParams::default(),
            min_token_len: 2,
            stopwords_enabled: true,
        }
    }

    pub fn tokenize_policy(&self) -> TokenizePolicy {
        TokenizePolicy {
            min_token_len: self.min_token_len,
            stopwords: if self.stopwords_enabled {
                crate::corpus::builtin_stopwords()
            } else {
                Default::default()
            },
        }
    }

    /// Applies one key=value setting; unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| CoreError::Config(format!("key `{key}`: invalid {what} `{value}`"));
        match key {
            "e_levels" => self.hyper.e_levels = value.parse().map_err(|_| bad("integer"))?,
            "facets" => self.hyper.facets = value.parse().map_err(|_| bad("integer"))?,
            "delta" => self.hyper.delta = value.parse().map_err(|_| bad("number"))?,
            "mu" => self.hyper.mu = value.parse().map_err(|_| bad("number"))?,
            "iterations" => self.hyper.outer_iterations = value.parse().map_err(|_| bad("integer"))?,
            "seed" => self.hyper.seed = value.parse().map_err(|_| bad("integer"))?,
            "timeliness_scale_days" => {
                let days: f64 = value.parse().map_err(|_| bad("number"))?;
                self.hyper.timeliness_scale = days * 86_400.0;
            }
            "sweeps_per_iter" => self.hyper.sweeps_per_iter = value.parse().map_err(|_| bad("integer"))?,
            "convergence_tol" => self.hyper.convergence_tol = value.parse().map_err(|_| bad("number"))?,
            "convergence_patience" => {
                self.hyper.convergence_patience = value.parse().map_err(|_| bad("integer"))?
            }
            "min_df" => self.split.min_df = value.parse().map_err(|_| bad("integer"))?,
            "max_vocab" => self.split.max_vocab = value.parse().map_err(|_| bad("integer"))?,
            "train_min_votes" => self.split.train_min_votes = value.parse().map_err(|_| bad("integer"))?,
            "test_min_votes" => self.split.test_min_votes = value.parse().map_err(|_| bad("integer"))?,
            "test_per_user" => self.split.test_per_user = value.parse().map_err(|_| bad("integer"))?,
            "longtail_threshold" => {
                self.split.longtail_threshold = value.parse().map_err(|_| bad("integer"))?
            }
            "min_token_len" => self.min_token_len = value.parse().map_err(|_| bad("integer"))?,
            "stopwords" => {
                self.stopwords_enabled = match value {
                    "builtin" => true,
                    "none" => false,
                    _ => return Err(bad("choice (builtin|none)")),
                }
            }
            _ => return Err(CoreError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Loads `# `-commented KEY=VALUE lines on top of the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let body = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        for (i, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("{} line {}: expected KEY=VALUE", path.display(), i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_documentation() {
        let config = Config::new();
        assert_eq!(config.hyper.e_levels, 5);
        assert_eq!(config.hyper.facets, 50);
        assert_eq!(config.split.train_min_votes, 20);
        assert_eq!(config.split.test_min_votes, 5);
        assert_eq!(config.split.test_per_user, 3);
        assert_eq!(config.split.longtail_threshold, 10);
        assert_eq!(config.split.min_df, 5);
        assert_eq!(config.split.max_vocab, 50_000);
    }

    #[test]
    fn file_and_override_precedence() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# toy settings\ne_levels=3\nfacets = 7\ntimeliness_scale_days=30").unwrap();
        let mut config = Config::new();
        config.load_file(file.path()).unwrap();
        assert_eq!(config.hyper.e_levels, 3);
        assert_eq!(config.hyper.facets, 7);
        assert_eq!(config.hyper.timeliness_scale, 30.0 * 86_400.0);
        config.set("facets", "9").unwrap();
        assert_eq!(config.hyper.facets, 9);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut config = Config::new();
        assert!(config.set("facetz", "9").is_err());
        assert!(config.set("stopwords", "maybe").is_err());
    }
}
