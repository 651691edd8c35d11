//! TOML run configuration with defaults matching the reference training
//! setup.

use serde::{Deserialize, Serialize};
use std::path::Path;
use toolrl_core::optimizer::OptimizerConfig;
use toolrl_core::rollout::RolloutLimits;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub limits: LimitsSection,
    pub optimizer: OptimizerSection,
    pub rollout: RolloutSection,
    pub eval: EvalSection,
    pub retrieval: RetrievalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    pub max_turns: u32,
    pub max_tokens_per_turn: u64,
    pub max_tokens_total: u64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self { max_turns: 10, max_tokens_per_turn: 8192, max_tokens_total: 32768 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub degenerate_std_epsilon: f64,
    pub batch_norm_enabled: bool,
    pub objective: String,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 1e-4,
            degenerate_std_epsilon: 1e-8,
            batch_norm_enabled: true,
            objective: "bn-gspo".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub group_size: u32,
    pub workflow: String,
    pub base_seed: u64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { group_size: 8, workflow: "agentic".to_string(), base_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Samples per item for avg@k, difficulty classification, and SFT
    /// filtering.
    pub k: usize,
    pub base_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { k: 8, base_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub top_k: usize,
    pub page_truncation_chars: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { top_k: 5, page_truncation_chars: 30000 }
    }
}

impl KernelConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let config: KernelConfig =
            toml::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.rollout_limits().validate().map_err(|e| e.to_string())?;
        if self.optimizer.eps_low <= 0.0 || self.optimizer.eps_low >= 1.0 {
            return Err("eps_low must be in (0, 1)".to_string());
        }
        if self.optimizer.eps_high <= 0.0 {
            return Err("eps_high must be positive".to_string());
        }
        if self.optimizer.beta < 0.0 {
            return Err("beta must be non-negative".to_string());
        }
        if !matches!(self.optimizer.objective.as_str(), "bn-gspo" | "gspo" | "grpo") {
            return Err(format!("unknown objective `{}`", self.optimizer.objective));
        }
        if !matches!(self.rollout.workflow.as_str(), "agentic" | "rag" | "direct") {
            return Err(format!("unknown workflow `{}`", self.rollout.workflow));
        }
        if self.rollout.group_size == 0 || self.eval.k == 0 {
            return Err("group_size and eval.k must be positive".to_string());
        }
        if self.retrieval.top_k != toolrl_core::toolbox::text_search::TOP_K_RESULTS {
            return Err("retrieval.top_k is fixed at 5".to_string());
        }
        if self.retrieval.page_truncation_chars
            != toolrl_core::toolbox::text_search::PAGE_TRUNCATION_CHARS
        {
            return Err("retrieval.page_truncation_chars is fixed at 30000".to_string());
        }
        Ok(())
    }

    pub fn rollout_limits(&self) -> RolloutLimits {
        RolloutLimits {
            max_turns: self.limits.max_turns,
            max_tokens_per_turn: self.limits.max_tokens_per_turn,
            max_tokens_total: self.limits.max_tokens_total,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            eps_low: self.optimizer.eps_low,
            eps_high: self.optimizer.eps_high,
            beta: self.optimizer.beta,
            degenerate_std_epsilon: self.optimizer.degenerate_std_epsilon,
            batch_norm_enabled: self.optimizer.batch_norm_enabled,
        }
    }

    /// Hash of the canonicalized config for run manifests.
    pub fn content_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        toolrl_core::canonical::hash_value(&value)
    }
}
