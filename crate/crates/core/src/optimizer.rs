//! Sequence-level policy-gradient objectives over grouped rollouts.
//!
//! Three clipped surrogate objectives share one entry point:
//!
//! * `BnGspo` — length-normalized sequence importance ratios with
//!   group-standardized advantages that are additionally standardized
//!   across the whole minibatch.
//! * `Gspo` — the same sequence-level ratio with group-standardized
//!   advantages only.
//! * `Grpo` — token-level ratios with group-standardized advantages,
//!   averaged over masked tokens per sequence.
//!
//! All objectives return the scalar surrogate value together with its
//! exact analytic gradient with respect to every new-policy token
//! log-probability, plus clip/ratio/KL diagnostics. Advantages are treated
//! as constants (no gradient flows through the normalization), and an
//! optional per-token KL penalty against a frozen reference policy uses
//! the non-negative `exp(d) - d - 1` estimator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("log-prob and mask vectors must share one nonzero length")]
    LengthMismatch,
    #[error("sequence mask selects no tokens")]
    EmptyMask,
    #[error("log-probabilities must be non-positive")]
    PositiveLogProb,
    #[error("group has {size} members; at least 2 are required")]
    GroupTooSmall { size: usize },
    #[error("minibatch contains no groups")]
    EmptyBatch,
    #[error("group rewards and sequences disagree in length")]
    IncompleteBatch,
    #[error("KL penalty requested but a sequence has no reference log-probs")]
    MissingRefLogProbs,
}

/// Per-token log-probabilities for one rolled-out sequence, under the
/// current policy, the behavior policy that sampled it, and optionally a
/// frozen reference policy. The mask selects model-generated tokens;
/// unmasked positions never contribute to ratios, KL, or gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLogProbs {
    pub new_lp: Vec<f64>,
    pub old_lp: Vec<f64>,
    #[serde(default)]
    pub ref_lp: Option<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl SequenceLogProbs {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let n = self.new_lp.len();
        if n == 0 || self.old_lp.len() != n || self.mask.len() != n {
            return Err(OptimizerError::LengthMismatch);
        }
        if let Some(ref_lp) = &self.ref_lp {
            if ref_lp.len() != n {
                return Err(OptimizerError::LengthMismatch);
            }
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(OptimizerError::EmptyMask);
        }
        let all = self
            .new_lp
            .iter()
            .chain(&self.old_lp)
            .chain(self.ref_lp.iter().flatten());
        for &lp in all {
            if lp > 0.0 || lp.is_nan() {
                return Err(OptimizerError::PositiveLogProb);
            }
        }
        Ok(())
    }

    pub fn masked_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One group of rollouts for a single task item and the scalar rewards
/// they earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub rewards: Vec<f64>,
    pub sequences: Vec<SequenceLogProbs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minibatch {
    pub groups: Vec<Group>,
}

impl Minibatch {
    fn validate(&self) -> Result<(), OptimizerError> {
        if self.groups.is_empty() {
            return Err(OptimizerError::EmptyBatch);
        }
        for group in &self.groups {
            if group.rewards.len() != group.sequences.len() {
                return Err(OptimizerError::IncompleteBatch);
            }
            if group.rewards.len() < 2 {
                return Err(OptimizerError::GroupTooSmall { size: group.rewards.len() });
            }
            for seq in &group.sequences {
                seq.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Lower clip offset; ratios below `1 - eps_low` are clamped.
    pub eps_low: f64,
    /// Upper clip offset; ratios above `1 + eps_high` are clamped.
    pub eps_high: f64,
    /// KL penalty coefficient. Zero disables the penalty and the need for
    /// reference log-probs.
    pub beta: f64,
    /// Standard deviations below this are treated as degenerate and the
    /// corresponding advantages set to zero.
    pub degenerate_std_epsilon: f64,
    /// Disabling this makes the `BnGspo` objective skip the batch-level
    /// standardization, reducing it to `Gspo`.
    pub batch_norm_enabled: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 1e-4,
            degenerate_std_epsilon: 1e-8,
            batch_norm_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    BnGspo,
    Gspo,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Fraction of sequences (tokens, for `Grpo`) where the clipped branch
    /// strictly undercuts the unclipped one.
    pub clip_fraction: f64,
    /// Mean sequence-level importance ratio across the batch.
    pub mean_ratio: f64,
    /// Mean per-sequence KL estimate; zero when the penalty is disabled.
    pub kl_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveResult {
    pub value: f64,
    /// Gradient of `value` with respect to `new_lp`, mirroring the batch
    /// shape `[group][sequence][token]`. Unmasked positions hold zero.
    pub grad: Vec<Vec<Vec<f64>>>,
    pub diagnostics: Diagnostics,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Standardizes rewards within one group using the population standard
/// deviation. A degenerate spread maps every reward to zero.
pub fn group_normalize(rewards: &[f64], config: &OptimizerConfig) -> Result<Vec<f64>, OptimizerError> {
    if rewards.len() < 2 {
        return Err(OptimizerError::GroupTooSmall { size: rewards.len() });
    }
    let m = mean(rewards);
    let s = population_std(rewards, m);
    if s < config.degenerate_std_epsilon {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / s).collect())
}

/// Re-standardizes group-normalized advantages across the flattened
/// minibatch, preserving the group structure of the output.
pub fn batch_normalize(
    advantages: &[Vec<f64>],
    config: &OptimizerConfig,
) -> Result<Vec<Vec<f64>>, OptimizerError> {
    let flat: Vec<f64> = advantages.iter().flatten().copied().collect();
    if flat.len() < 2 {
        return Err(OptimizerError::GroupTooSmall { size: flat.len() });
    }
    let m = mean(&flat);
    let s = population_std(&flat, m);
    if s < config.degenerate_std_epsilon {
        return Ok(advantages.iter().map(|g| vec![0.0; g.len()]).collect());
    }
    Ok(advantages.iter().map(|g| g.iter().map(|a| (a - m) / s).collect()).collect())
}

/// Length-normalized sequence importance ratio
/// `exp(mean over masked tokens of new_lp - old_lp)`.
pub fn sequence_ratio(seq: &SequenceLogProbs) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&n, &o), &m) in seq.new_lp.iter().zip(&seq.old_lp).zip(&seq.mask) {
        if m {
            sum += n - o;
            count += 1;
        }
    }
    (sum / count as f64).exp()
}

/// Per-sequence KL estimate against the reference policy: the mean over
/// masked tokens of `exp(d) - d - 1` with `d = ref_lp - new_lp`. The
/// estimator is non-negative and zero iff the policies agree on every
/// masked token.
pub fn kl_penalty(seq: &SequenceLogProbs) -> Result<f64, OptimizerError> {
    let ref_lp = seq.ref_lp.as_ref().ok_or(OptimizerError::MissingRefLogProbs)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&r, &n), &m) in ref_lp.iter().zip(&seq.new_lp).zip(&seq.mask) {
        if m {
            let d = r - n;
            sum += d.exp() - d - 1.0;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Computes the chosen surrogate objective and its analytic gradient over
/// one minibatch of reward-labelled groups.
pub fn compute_objective(
    batch: &Minibatch,
    config: &OptimizerConfig,
    kind: ObjectiveKind,
) -> Result<ObjectiveResult, OptimizerError> {
    batch.validate()?;
    let group_advantages: Vec<Vec<f64>> = batch
        .groups
        .iter()
        .map(|g| group_normalize(&g.rewards, config))
        .collect::<Result<_, _>>()?;
    let advantages = match kind {
        ObjectiveKind::BnGspo if config.batch_norm_enabled => {
            batch_normalize(&group_advantages, config)?
        }
        _ => group_advantages,
    };

    let total_seqs: usize = batch.groups.iter().map(|g| g.sequences.len()).sum();
    let lo = 1.0 - config.eps_low;
    let hi = 1.0 + config.eps_high;

    let mut value = 0.0;
    let mut grad: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.groups.len());
    let mut clipped = 0usize;
    let mut clip_denominator = 0usize;
    let mut ratio_sum = 0.0;
    let mut kl_sum = 0.0;

    for (group, advs) in batch.groups.iter().zip(&advantages) {
        let group_size = group.sequences.len() as f64;
        let mut group_grad = Vec::with_capacity(group.sequences.len());
        for (seq, &adv) in group.sequences.iter().zip(advs) {
            // Each sequence's surrogate contributes with weight
            // 1 / (B * G): the batch mean of group means.
            let weight = 1.0 / (batch.groups.len() as f64 * group_size);
            let masked_len = seq.masked_len() as f64;
            let mut seq_grad = vec![0.0; seq.new_lp.len()];

            let s = sequence_ratio(seq);
            ratio_sum += s;

            match kind {
                ObjectiveKind::BnGspo | ObjectiveKind::Gspo => {
                    let unclipped = s * adv;
                    let clamped = s.clamp(lo, hi) * adv;
                    clip_denominator += 1;
                    if clamped < unclipped {
                        clipped += 1;
                        value += weight * clamped;
                        // Clamped ratio: zero gradient through this branch.
                    } else {
                        value += weight * unclipped;
                        let coeff = weight * s * adv / masked_len;
                        for (g, &m) in seq_grad.iter_mut().zip(&seq.mask) {
                            if m {
                                *g = coeff;
                            }
                        }
                    }
                }
                ObjectiveKind::Grpo => {
                    let token_weight = weight / masked_len;
                    for (t, &m) in seq.mask.iter().enumerate() {
                        if !m {
                            continue;
                        }
                        clip_denominator += 1;
                        let rho = (seq.new_lp[t] - seq.old_lp[t]).exp();
                        let unclipped = rho * adv;
                        let clamped = rho.clamp(lo, hi) * adv;
                        if clamped < unclipped {
                            clipped += 1;
                            value += token_weight * clamped;
                        } else {
                            value += token_weight * unclipped;
                            seq_grad[t] = token_weight * rho * adv;
                        }
                    }
                }
            }

            if config.beta > 0.0 {
                let kl = kl_penalty(seq)?;
                kl_sum += kl;
                value -= config.beta * weight * kl;
                let ref_lp = seq.ref_lp.as_ref().expect("checked by kl_penalty");
                for (t, &m) in seq.mask.iter().enumerate() {
                    if m {
                        let d = ref_lp[t] - seq.new_lp[t];
                        seq_grad[t] -= config.beta * weight * (1.0 - d.exp()) / masked_len;
                    }
                }
            }
            group_grad.push(seq_grad);
        }
        grad.push(group_grad);
    }

    Ok(ObjectiveResult {
        value,
        grad,
        diagnostics: Diagnostics {
            clip_fraction: clipped as f64 / clip_denominator as f64,
            mean_ratio: ratio_sum / total_seqs as f64,
            kl_value: if config.beta > 0.0 { kl_sum / total_seqs as f64 } else { 0.0 },
        },
    })
}
