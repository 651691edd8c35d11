//! Kernel for multi-turn, tool-augmented agent rollouts and sequence-level
//! RL optimization.
//!
//! The crate is organized around the episode lifecycle:
//!
//! 1. [`transcript`] — the interaction history, the strict tag-based output
//!    protocol, and rendering for a policy client.
//! 2. [`toolbox`] — image crop, text search, and reverse image search behind
//!    cached/offline and live backends.
//! 3. [`rollout`] — the multi-turn episode loop with turn and token budgets.
//! 4. [`reward`] — format compliance and accuracy scoring (judge or exact
//!    match), assembling the per-trajectory reward.
//! 5. [`optimizer`] — length-normalized sequence ratios, two-stage advantage
//!    normalization, and the clipped objectives (BN-GSPO, GSPO, GRPO) with
//!    analytic gradients with respect to per-token log-probabilities.
//! 6. [`evalbench`] — benchmark workflows, Pass@1 / Avg@k / exact-match
//!    metrics, difficulty classification, and hard-sample filtering.
//!
//! No tokenization or neural-network updates happen here: token counts and
//! log-probabilities come from the policy client, and the optimizer stops at
//! the objective value and its gradient.

pub mod canonical;
pub mod client;
pub mod evalbench;
pub mod optimizer;
pub mod prompts;
pub mod reward;
pub mod rollout;
pub mod schema;
pub mod store;
pub mod test_support;
pub mod toolbox;
pub mod transcript;
