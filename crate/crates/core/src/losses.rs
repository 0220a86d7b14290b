//! The five training losses, their gradients w.r.t. the classifier logits (or
//! similarity scores), and the weighted overall objective.
//!
//! Every loss is an arithmetic mean over the batch, entropies are in nats,
//! and probabilities are clamped to `[1e-12, 1]` before taking logarithms.
//! Gradient matrices are laid out like the logits: `(rows, 2K)`, MC columns
//! first, then the negative OVA columns.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, esl_branch, EslBranch, ProbabilityBundle};
use crate::entropy::{clamped_ln, entropy, entropy_grad_logits, is_clamped};
use crate::{Error, Result};

/// Trade-offs of the target losses and the ESL margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Feature clustering.
    pub alpha: f64,
    /// Target OVA entropy.
    pub beta: f64,
    /// Entropy-strengthened loss.
    pub gamma: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.1,
            gamma: 0.05,
            margin: 0.4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::InvalidConfig(format!(
                "margin must lie in [0, 1), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Unweighted loss values for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub sova: f64,
    pub esl: f64,
    pub sfc: f64,
    pub tova: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub sova: f64,
    pub esl: f64,
    pub sfc: f64,
    pub tova: f64,
    pub total: f64,
}

/// `(ce + sova) + α·sfc + β·tova + γ·esl`.
pub fn loss_total(terms: LossTerms, weights: &LossWeights) -> LossReport {
    let total = (terms.ce + terms.sova)
        + (weights.alpha * terms.sfc + weights.beta * terms.tova + weights.gamma * terms.esl);
    LossReport {
        ce: terms.ce,
        sova: terms.sova,
        esl: terms.esl,
        sfc: terms.sfc,
        tova: terms.tova,
        total,
    }
}

fn check_batch(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<usize> {
    if bundles.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if bundles.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bundles for {} labels",
            bundles.len(),
            labels.len()
        )));
    }
    let k = bundles[0].num_classes();
    if bundles.iter().any(|b| b.num_classes() != k) {
        return Err(Error::ShapeMismatch("bundles disagree on K".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: k,
        });
    }
    Ok(k)
}

/// Mean of `-ln p_mc[y]`.
pub fn loss_ce(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<f64> {
    check_batch(bundles, labels)?;
    let sum: f64 = bundles
        .iter()
        .zip(labels)
        .map(|(b, &y)| -clamped_ln(b.p_mc()[y]))
        .sum();
    Ok(sum / bundles.len() as f64)
}

pub fn loss_ce_grad(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<Array2<f64>> {
    let k = check_batch(bundles, labels)?;
    let scale = 1.0 / bundles.len() as f64;
    let mut grad = Array2::zeros((bundles.len(), 2 * k));
    for (row, (b, &y)) in bundles.iter().zip(labels).enumerate() {
        if is_clamped(b.p_mc()[y]) {
            continue;
        }
        for (c, &p) in b.p_mc().iter().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            grad[[row, c]] = scale * (p - target);
        }
    }
    Ok(grad)
}

/// The OVA predictor with the largest `p⁺` among the classes other than `y`.
fn hardest_negative(b: &ProbabilityBundle, y: usize) -> usize {
    let masked: Vec<f64> = b
        .ova()
        .iter()
        .enumerate()
        .map(|(j, pair)| if j == y { f64::NEG_INFINITY } else { pair.pos })
        .collect();
    argmax(&masked)
}

fn check_sova(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<usize> {
    let k = check_batch(bundles, labels)?;
    if k < 2 {
        return Err(Error::InvalidInput("source OVA loss needs K >= 2".into()));
    }
    Ok(k)
}

/// Mean of `-ln p⁺_y + max_{j≠y} ln p⁺_j`.
pub fn loss_sova(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<f64> {
    check_sova(bundles, labels)?;
    let sum: f64 = bundles
        .iter()
        .zip(labels)
        .map(|(b, &y)| {
            let j = hardest_negative(b, y);
            -clamped_ln(b.ova()[y].pos) + clamped_ln(b.ova()[j].pos)
        })
        .sum();
    Ok(sum / bundles.len() as f64)
}

/// Subgradient of the hard max: only the selected negative receives gradient.
pub fn loss_sova_grad(bundles: &[ProbabilityBundle], labels: &[usize]) -> Result<Array2<f64>> {
    let k = check_sova(bundles, labels)?;
    let scale = 1.0 / bundles.len() as f64;
    let mut grad = Array2::zeros((bundles.len(), 2 * k));
    for (row, (b, &y)) in bundles.iter().zip(labels).enumerate() {
        // ∂ ln p⁺_c / ∂(z_c − z_{K+c}) = p⁻_c.
        let pos = b.ova()[y];
        if !is_clamped(pos.pos) {
            grad[[row, y]] -= scale * pos.neg;
            grad[[row, k + y]] += scale * pos.neg;
        }
        let j = hardest_negative(b, y);
        let neg = b.ova()[j];
        if !is_clamped(neg.pos) {
            grad[[row, j]] += scale * neg.neg;
            grad[[row, k + j]] -= scale * neg.neg;
        }
    }
    Ok(grad)
}

/// Per-sample value: `+H(p_mc)` when sharpening, `-H(p_mc)` when flattening,
/// 0 inside the margin band.
pub fn esl_sample(bundle: &ProbabilityBundle, margin: f64) -> f64 {
    match esl_branch(bundle, margin) {
        EslBranch::Sharpen => entropy(bundle.p_mc()),
        EslBranch::Flatten => -entropy(bundle.p_mc()),
        EslBranch::Skip => 0.0,
    }
}

/// Batch mean of [`esl_sample`]; 0 for an empty batch.
pub fn loss_esl(bundles: &[ProbabilityBundle], margin: f64) -> f64 {
    if bundles.is_empty() {
        return 0.0;
    }
    bundles.iter().map(|b| esl_sample(b, margin)).sum::<f64>() / bundles.len() as f64
}

/// The branch is a piecewise-constant selector; only the MC logits receive
/// gradient, and samples in the band receive exactly zero.
pub fn loss_esl_grad(bundles: &[ProbabilityBundle], margin: f64) -> Array2<f64> {
    let k = bundles.first().map_or(0, |b| b.num_classes());
    let mut grad = Array2::zeros((bundles.len(), 2 * k));
    if bundles.is_empty() {
        return grad;
    }
    let scale = 1.0 / bundles.len() as f64;
    for (row, b) in bundles.iter().enumerate() {
        let sign = match esl_branch(b, margin) {
            EslBranch::Sharpen => 1.0,
            EslBranch::Flatten => -1.0,
            EslBranch::Skip => continue,
        };
        for (c, g) in entropy_grad_logits(b.p_mc()).into_iter().enumerate() {
            grad[[row, c]] = sign * scale * g;
        }
    }
    grad
}

/// Tolerance on the row-sum check of [`loss_sfc`].
pub const SFC_ROW_TOLERANCE: f64 = 1e-6;

fn check_similarities(similarities: ArrayView2<f64>) -> Result<()> {
    if similarities.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for (i, row) in similarities.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if !((sum - 1.0).abs() <= SFC_ROW_TOLERANCE) || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "similarity row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Mean entropy of the neighbor distributions (one row per target sample,
/// self column already zero).
pub fn loss_sfc(similarities: ArrayView2<f64>) -> Result<f64> {
    check_similarities(similarities)?;
    let sum: f64 = similarities
        .rows()
        .into_iter()
        .map(|row| entropy(row.as_slice().unwrap_or(&row.to_vec())))
        .sum();
    Ok(sum / similarities.nrows() as f64)
}

/// Gradient w.r.t. the similarity scores `s_ij = v_j·f_i/τ` (the softmax
/// logits of each row). Chain through
/// [`MemoryBank::query_gradient`](crate::memory_bank::MemoryBank::query_gradient)
/// to reach the features.
pub fn loss_sfc_grad(similarities: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_similarities(similarities)?;
    let scale = 1.0 / similarities.nrows() as f64;
    let mut grad = Array2::zeros(similarities.dim());
    for (i, row) in similarities.rows().into_iter().enumerate() {
        for (j, g) in entropy_grad_logits(&row.to_vec()).into_iter().enumerate() {
            grad[[i, j]] = scale * g;
        }
    }
    Ok(grad)
}

/// Mean over the batch of `Σ_k H(p⁺_k, p⁻_k)`; 0 for an empty batch.
pub fn loss_tova(bundles: &[ProbabilityBundle]) -> f64 {
    if bundles.is_empty() {
        return 0.0;
    }
    let sum: f64 = bundles
        .iter()
        .flat_map(|b| b.ova().iter())
        .map(|pair| entropy(&[pair.pos, pair.neg]))
        .sum();
    sum / bundles.len() as f64
}

pub fn loss_tova_grad(bundles: &[ProbabilityBundle]) -> Array2<f64> {
    let k = bundles.first().map_or(0, |b| b.num_classes());
    let mut grad = Array2::zeros((bundles.len(), 2 * k));
    if bundles.is_empty() {
        return grad;
    }
    let scale = 1.0 / bundles.len() as f64;
    for (row, b) in bundles.iter().enumerate() {
        for (c, pair) in b.ova().iter().enumerate() {
            let g = entropy_grad_logits(&[pair.pos, pair.neg]);
            grad[[row, c]] = scale * g[0];
            grad[[row, k + c]] = scale * g[1];
        }
    }
    grad
}
