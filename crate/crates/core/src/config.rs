//! Pipeline configuration read from TOML.
//!
//! ```toml
//! seed = 13
//! workers = 4
//!
//! [masking]
//! p_umls = 0.7
//! p_sentence = 0.15
//!
//! [filter]
//! keep_fraction = 0.15
//! embedder = "hashed-random(7)"
//!
//! [paths]
//! umls_dict = "dicts/umls.txt"
//! i2b2_source = "dicts/i2b2.tsv"
//! ```
//!
//! The top-level `seed` is copied into every stage; each stage then derives
//! its own streams from it (see [`crate::rng`]).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotatorConfig;
use crate::augmentation::GenerationConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::masking::MaskPolicyConfig;
use crate::similarity::FilterConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub umls_dict: Option<PathBuf>,
    /// A dictionary file or a standoff `.tsv`.
    pub i2b2_source: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub masking: MaskPolicyConfig,
    pub annotation: AnnotatorConfig,
    pub generation: GenerationConfig,
    pub filter: FilterConfig,
    pub dataset: DatasetConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 1,
            masking: MaskPolicyConfig::default(),
            annotation: AnnotatorConfig::default(),
            generation: GenerationConfig::default(),
            filter: FilterConfig::default(),
            dataset: DatasetConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML. When `[masking]` sets only one of `p_umls` / `p_i2b2`
    /// the other becomes its complement.
    pub fn from_toml(src: &str) -> Result<Self> {
        let mut value: toml::Table = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(toml::Value::Table(masking)) = value.get_mut("masking") {
            let float = |v: &toml::Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
            match (masking.get("p_umls").and_then(float), masking.get("p_i2b2").and_then(float)) {
                (Some(u), None) => {
                    masking.insert("p_i2b2".into(), toml::Value::Float(1.0 - u));
                }
                (None, Some(i)) => {
                    masking.insert("p_umls".into(), toml::Value::Float(1.0 - i));
                }
                _ => {}
            }
        }
        let mut cfg: PipelineConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.masking.seed = seed;
        self.generation.seed = seed;
    }

    /// Sets UMLS-channel probability and its complement.
    pub fn set_p_umls(&mut self, p: f64) {
        self.masking.p_umls = p;
        self.masking.p_i2b2 = 1.0 - p;
    }

    /// Every problem, prefixed with its field path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut section = |name: &str, problems: Vec<String>| {
            out.extend(problems.into_iter().map(|p| format!("{name}.{p}")));
        };
        section("masking", self.masking.problems());
        section("generation", self.generation.problems());
        section("filter", self.filter.problems());
        section("dataset", self.dataset.problems());
        if let Err(e) = self.annotation.validate() {
            section("annotation", vec![e.to_string()]);
        }
        if self.masking.seed != self.seed || self.generation.seed != self.seed {
            out.push("seed: stage seeds must equal the top-level seed".to_string());
        }
        if self.workers == 0 {
            out.push("workers: must be at least 1".to_string());
        }
        let p = &self.paths;
        for (name, path) in [
            ("umls_dict", &p.umls_dict),
            ("i2b2_source", &p.i2b2_source),
            ("templates", &p.templates),
            ("notes", &p.notes),
            ("embeddings", &p.embeddings),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    out.push(format!("paths.{name}: {} does not exist", path.display()));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.masking.p_umls, 0.7);
        assert_eq!(cfg.masking.p_sentence, 0.15);
        assert_eq!(cfg.filter.keep_fraction, 0.15);
        assert_eq!(cfg.generation.max_output_tokens, 40);
        assert!(cfg.validate().is_ok());
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn file_values_and_complement() {
        let cfg = PipelineConfig::from_toml("seed = 5\n[masking]\np_umls = 0.6\n[dataset]\nmode = \"a\"\n").unwrap();
        assert_eq!(cfg.masking.seed, 5);
        assert_eq!(cfg.generation.seed, 5);
        assert!((cfg.masking.p_i2b2 - 0.4).abs() < 1e-12);
        assert_eq!(cfg.dataset.mode, crate::dataset::CompositionMode::A);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn problems_are_reported_together() {
        let mut cfg = PipelineConfig::from_toml("[filter]\nkeep_fraction = 0\n").unwrap();
        cfg.set_p_umls(1.1);
        cfg.paths.umls_dict = Some("/no/such/file".into());
        let problems = cfg.problems();
        assert!(problems.iter().any(|p| p.starts_with("masking.p_umls")));
        assert!(problems.iter().any(|p| p.starts_with("filter.keep_fraction")));
        assert!(problems.iter().any(|p| p.starts_with("paths.umls_dict")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[masking]\np_umsl = 0.5\n").is_err());
        assert!(PipelineConfig::from_toml("sede = 1\n").is_err());
    }
}
