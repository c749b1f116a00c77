//! Experiment configuration: one JSON file describing the full
//! poison → mix → evaluate → defend pipeline. Defaults mirror the
//! standard protocol (budget 5, 5 shots, 5 runs); relative paths resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::Strategy;
use crate::error::{Error, Result};
use crate::template::Template;

fn default_strategies() -> Vec<Strategy> {
    vec![
        Strategy::RandomLabel,
        Strategy::Synonym,
        Strategy::Character,
        Strategy::Suffix,
    ]
}

fn default_budgets() -> Vec<usize> {
    vec![5]
}

fn default_synonym_m() -> usize {
    10
}

fn default_shots() -> Vec<usize> {
    vec![5]
}

fn default_runs() -> usize {
    5
}

fn default_rates() -> Vec<f64> {
    vec![1.0]
}

fn default_templates() -> Vec<Template> {
    vec![Template::arrow()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train_pool: PathBuf,
    pub test_set: PathBuf,
    pub surrogate: PathBuf,
    /// Evaluation targets; the surrogate itself when empty.
    #[serde(default)]
    pub targets: Vec<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Perplexity scorer; the defense stage runs when present.
    #[serde(default)]
    pub scorer: Option<PathBuf>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_synonym_m")]
    pub synonym_m: usize,
    #[serde(default)]
    pub allow_noop_candidate: bool,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_templates")]
    pub templates: Vec<Template>,
    #[serde(default)]
    pub quantile: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parse a config file without resolving or checking paths.
    pub fn parse(content: &str) -> Result<Self> {
        serde_json::from_str(content).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Load, resolve paths against the config file's directory, and
    /// validate. Every referenced path must exist now.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&content)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.train_pool);
        fix(&mut self.test_set);
        fix(&mut self.surrogate);
        for t in &mut self.targets {
            fix(t);
        }
        if let Some(e) = &mut self.embeddings {
            fix(e);
        }
        if let Some(s) = &mut self.scorer {
            fix(s);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, path) in [("train_pool", &self.train_pool), ("test_set", &self.test_set), ("surrogate", &self.surrogate)] {
            if !path.exists() {
                return Err(Error::Config(format!("{what} path {} does not exist", path.display())));
            }
        }
        for t in &self.targets {
            if !t.exists() {
                return Err(Error::Config(format!("target path {} does not exist", t.display())));
            }
        }
        for opt in [&self.embeddings, &self.scorer] {
            if let Some(p) = opt {
                if !p.exists() {
                    return Err(Error::Config(format!("path {} does not exist", p.display())));
                }
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies list is empty".into()));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::Config("budgets must be non-empty and ≥ 1".into()));
        }
        if self.synonym_m == 0 {
            return Err(Error::Config("synonym_m must be ≥ 1".into()));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::Config("shots must be non-empty and ≥ 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be ≥ 1".into()));
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("rates must be non-empty fractions in [0, 1]".into()));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("templates list is empty".into()));
        }
        for t in &self.templates {
            Template::new(&t.name, &t.example_frame, &t.query_frame)?;
        }
        if self.strategies.contains(&Strategy::Synonym) && self.embeddings.is_none() {
            return Err(Error::Config("synonym strategy needs an embeddings path".into()));
        }
        if let Some(q) = self.quantile {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("quantile {q} outside (0, 1]")));
            }
            if self.scorer.is_none() {
                return Err(Error::Config("quantile filtering needs a scorer path".into()));
            }
        }
        Ok(())
    }

    /// Name the dataset by the pool file's stem; used in report rows.
    pub fn dataset_name(&self) -> String {
        self.train_pool
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    /// The full configuration echoed with every default made explicit,
    /// so a report alone reconstructs the run.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
