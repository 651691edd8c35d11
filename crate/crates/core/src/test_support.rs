//! Shared fixtures for unit and integration tests.

use crate::client::EchoChatClient;
use crate::toolbox::image_search::ImageSearchBackend;
use crate::toolbox::text_search::LocalCorpusBackend;
use crate::toolbox::{BackendError, SearchResult, Toolbox};
use crate::transcript::{ImagePayload, PromptItem};

/// Image backend that always returns the same results.
pub struct StaticImageSearch(pub Vec<SearchResult>);

impl ImageSearchBackend for StaticImageSearch {
    fn search(&self, _image: &ImagePayload) -> Result<Vec<SearchResult>, BackendError> {
        Ok(self.0.clone())
    }
}

/// Deterministic non-uniform test image.
pub fn gradient_image(width: u32, height: u32) -> ImagePayload {
    let mut pixels = Vec::with_capacity((width * height) as usize * 3);
    for y in 0..height {
        for x in 0..width {
            pixels.push((x % 251) as u8);
            pixels.push((y % 251) as u8);
            pixels.push(((x * 7 + y * 13) % 256) as u8);
        }
    }
    ImagePayload::new(width, height, pixels)
}

pub fn fixture_item(id: &str) -> PromptItem {
    PromptItem {
        id: id.to_string(),
        question: "What city is shown?".into(),
        images: vec![gradient_image(16, 12)],
        ground_truth: "Paris".into(),
        candidates: vec![],
        domain_tag: None,
    }
}

/// Toolbox with an empty local corpus, a no-result image backend, and an
/// echo summarizer. Crop works normally.
pub fn empty_toolbox() -> Toolbox {
    Toolbox::new(
        Box::new(LocalCorpusBackend::new(vec![])),
        Box::new(StaticImageSearch(vec![])),
        Box::new(EchoChatClient),
    )
}

use crate::optimizer::{
    compute_objective, Group, Minibatch, ObjectiveKind, OptimizerConfig, SequenceLogProbs,
};
use rand::Rng;

/// Draws a random minibatch whose ratios sit safely away from the clip
/// boundaries and whose reward spreads are non-degenerate, so the
/// objective is differentiable everywhere finite differences probe it.
pub fn random_smooth_batch<R: Rng>(rng: &mut R) -> Minibatch {
    let config = OptimizerConfig::default();
    'outer: loop {
        let num_groups = rng.gen_range(1..=4);
        let mut groups = Vec::with_capacity(num_groups);
        for _ in 0..num_groups {
            let group_size = rng.gen_range(2..=4);
            let mut rewards: Vec<f64> =
                (0..group_size).map(|_| rng.gen_range(0.0..1.5)).collect();
            // Force a visible spread so standardization is well-behaved.
            rewards[0] = 1.5;
            rewards[1] = 0.0;
            let mut sequences = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let len = rng.gen_range(1..=16);
                let old_lp: Vec<f64> =
                    (0..len).map(|_| rng.gen_range(-5.0..-0.05)).collect();
                let new_lp: Vec<f64> = old_lp
                    .iter()
                    .map(|&o| (o + rng.gen_range(-0.3..0.3)).clamp(-5.0, -0.01))
                    .collect();
                let ref_lp: Vec<f64> = new_lp
                    .iter()
                    .map(|&n| (n + rng.gen_range(-0.2..0.2)).clamp(-5.0, -0.01))
                    .collect();
                let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.8)).collect();
                if !mask.iter().any(|&m| m) {
                    mask[0] = true;
                }
                sequences.push(SequenceLogProbs {
                    new_lp,
                    old_lp,
                    ref_lp: Some(ref_lp),
                    mask,
                });
            }
            groups.push(Group { rewards, sequences });
        }
        let batch = Minibatch { groups };
        // Reject batches with any ratio near a clip kink, where the
        // surrogate is non-differentiable.
        let margin = 1e-3;
        for group in &batch.groups {
            for seq in &group.sequences {
                let s = crate::optimizer::sequence_ratio(seq);
                let near = |x: f64| {
                    (x - (1.0 - config.eps_low)).abs() < margin
                        || (x - (1.0 + config.eps_high)).abs() < margin
                };
                if near(s) {
                    continue 'outer;
                }
                for ((&n, &o), &m) in seq.new_lp.iter().zip(&seq.old_lp).zip(&seq.mask) {
                    if m && near((n - o).exp()) {
                        continue 'outer;
                    }
                }
            }
        }
        return batch;
    }
}

/// Central-difference gradient of the objective value with respect to
/// every new-policy log-probability, in the same shape as the batch.
pub fn finite_difference_grad(
    batch: &Minibatch,
    config: &OptimizerConfig,
    kind: ObjectiveKind,
) -> Vec<Vec<Vec<f64>>> {
    let h = 1e-6;
    let mut grads = Vec::with_capacity(batch.groups.len());
    for (b, group) in batch.groups.iter().enumerate() {
        let mut group_grads = Vec::with_capacity(group.sequences.len());
        for (g, seq) in group.sequences.iter().enumerate() {
            let mut seq_grad = vec![0.0; seq.new_lp.len()];
            for (t, slot) in seq_grad.iter_mut().enumerate() {
                let mut plus = batch.clone();
                plus.groups[b].sequences[g].new_lp[t] += h;
                let mut minus = batch.clone();
                minus.groups[b].sequences[g].new_lp[t] -= h;
                let f_plus = compute_objective(&plus, config, kind).unwrap().value;
                let f_minus = compute_objective(&minus, config, kind).unwrap().value;
                *slot = (f_plus - f_minus) / (2.0 * h);
            }
            group_grads.push(seq_grad);
        }
        grads.push(group_grads);
    }
    grads
}
