//! Engine configuration: one flat key/value file (`etymo.toml`) holding every
//! tunable, with command-line `key=value` overrides layered on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::LayoutConfig;
use crate::rank::RankParams;
use crate::search::SearchConfig;
use crate::simnet::GraphConfig;

pub const CONFIG_FILE: &str = "etymo.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("override `{0}` must look like key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    // vectorize
    pub dim: usize,
    pub embedding_seed: u64,
    // simnet
    pub alpha: f64,
    pub mu: f64,
    pub k: usize,
    pub gamma_star: f64,
    pub delta_lib: f64,
    pub ctr_threshold: f64,
    pub top_r: usize,
    pub demote_factor: f64,
    pub prune_floor: f64,
    pub min_impressions: u64,
    // rank
    pub damping: f64,
    pub iterations: usize,
    pub beta: f64,
    pub tolerance: Option<f64>,
    // layout
    pub perplexity: f64,
    pub learning_rate: f64,
    pub layout_iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub layout_seed: u64,
    // search
    pub lambda: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let g = GraphConfig::default();
        let r = RankParams::default();
        let l = LayoutConfig::default();
        Self {
            dim: 256,
            embedding_seed: 0,
            alpha: g.alpha,
            mu: g.mu,
            k: g.k,
            gamma_star: g.gamma_star,
            delta_lib: g.delta_lib,
            ctr_threshold: g.ctr_threshold,
            top_r: g.top_r,
            demote_factor: g.demote_factor,
            prune_floor: g.prune_floor,
            min_impressions: g.min_impressions,
            damping: r.damping,
            iterations: r.iterations,
            beta: r.beta,
            tolerance: r.tolerance,
            perplexity: l.perplexity,
            learning_rate: l.learning_rate,
            layout_iterations: l.iterations,
            early_exaggeration: l.early_exaggeration,
            exaggeration_iterations: l.exaggeration_iterations,
            layout_seed: l.seed,
            lambda: SearchConfig::default().lambda,
        }
    }
}

impl EngineConfig {
    /// Reads `path` if it exists (defaults otherwise) and applies overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match std::fs::read_to_string(path) {
            Ok(text) => text
                .parse::<toml::Table>()
                .map_err(|e| ConfigError::Parse(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => toml::Table::new(),
            Err(source) => {
                return Err(ConfigError::Read {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        for raw in overrides {
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(raw.clone()))?;
            let parsed = format!("v = {}", value.trim())
                .parse::<toml::Table>()
                .map_err(|e| ConfigError::Parse(format!("{raw}: {e}")))?;
            table.insert(key.trim().to_string(), parsed["v"].clone());
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.graph()
            .validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        if self.dim == 0 {
            return Err(ConfigError::Parse("dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) || !(0.0..=1.0).contains(&self.beta) {
            return Err(ConfigError::Parse("damping and beta must lie in [0, 1]".into()));
        }
        if self.iterations == 0 || self.layout_iterations == 0 {
            return Err(ConfigError::Parse("iteration counts must be positive".into()));
        }
        if !(self.perplexity > 1.0 && self.learning_rate > 0.0) {
            return Err(ConfigError::Parse("perplexity must exceed 1 and learning_rate be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(ConfigError::Parse("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            alpha: self.alpha,
            mu: self.mu,
            k: self.k,
            gamma_star: self.gamma_star,
            delta_lib: self.delta_lib,
            ctr_threshold: self.ctr_threshold,
            top_r: self.top_r,
            demote_factor: self.demote_factor,
            prune_floor: self.prune_floor,
            min_impressions: self.min_impressions,
            ..GraphConfig::default()
        }
    }

    pub fn rank(&self) -> RankParams {
        RankParams {
            damping: self.damping,
            iterations: self.iterations,
            beta: self.beta,
            tolerance: self.tolerance,
        }
    }

    pub fn layout(&self) -> LayoutConfig {
        LayoutConfig {
            perplexity: self.perplexity,
            learning_rate: self.learning_rate,
            iterations: self.layout_iterations,
            early_exaggeration: self.early_exaggeration,
            exaggeration_iterations: self.exaggeration_iterations,
            seed: self.layout_seed,
            ..LayoutConfig::default()
        }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig { lambda: self.lambda }
    }
}
