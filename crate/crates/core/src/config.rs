//! Flat JSON run configuration shared by the CLI subcommands. Every field
//! has a default, unknown keys are rejected, and validation errors name
//! the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PolicyConfig;
use crate::tree::TreeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tau: f64,
    pub rho_ema: f64,
    pub delta_depth: usize,
    pub window_k: usize,
    pub lambda_gate: f64,
    pub beam_k: usize,
    pub beta: f64,
    pub seed: u64,
    pub d: usize,
    pub embedder: EmbedderKind,
    pub judge: JudgeKind,
    pub hints: bool,
    pub oracle_q: f64,
    pub alpha_emit: f64,
    pub endpoint: String,
    pub model: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tree = TreeConfig::default();
        let policy = PolicyConfig::default();
        RunConfig {
            tau: tree.tau,
            rho_ema: tree.rho_ema,
            delta_depth: tree.delta_depth,
            window_k: policy.window_k,
            lambda_gate: policy.lambda_gate,
            beam_k: policy.beam_k,
            beta: 1.0,
            seed: 0,
            d: crate::embed::DEFAULT_DIMENSION,
            embedder: EmbedderKind::Hashing,
            judge: JudgeKind::Oracle,
            hints: true,
            oracle_q: 0.9,
            alpha_emit: 0.9,
            endpoint: String::new(),
            model: String::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.to_string(),
                    reason: reason.to_string(),
                })
            }
        };
        check("tau", self.tau.is_finite(), "must be finite")?;
        check(
            "rho_ema",
            self.rho_ema > 0.0 && self.rho_ema <= 1.0,
            "must lie in (0,1]",
        )?;
        check(
            "lambda_gate",
            (0.0..=1.0).contains(&self.lambda_gate),
            "must lie in [0,1]",
        )?;
        check("beam_k", self.beam_k >= 1, "must be at least 1")?;
        check("window_k", self.window_k >= 1, "must be at least 1")?;
        check("beta", self.beta.is_finite() && self.beta > 0.0, "must be positive")?;
        check("d", self.d >= 8, "must be at least 8")?;
        check(
            "oracle_q",
            (0.0..=1.0).contains(&self.oracle_q),
            "must lie in [0,1]",
        )?;
        check(
            "alpha_emit",
            (0.0..=1.0).contains(&self.alpha_emit),
            "must lie in [0,1]",
        )?;
        if self.embedder == EmbedderKind::Remote || self.judge == JudgeKind::Remote {
            check("endpoint", !self.endpoint.is_empty(), "required for remote backends")?;
            check("model", !self.model.is_empty(), "required for remote backends")?;
        }
        Ok(())
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            tau: self.tau,
            rho_ema: self.rho_ema,
            delta_depth: self.delta_depth,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            lambda_gate: self.lambda_gate,
            beam_k: self.beam_k,
            window_k: self.window_k,
            delta_depth: self.delta_depth,
            hints: self.hints,
            seed: self.seed,
        }
    }
}
