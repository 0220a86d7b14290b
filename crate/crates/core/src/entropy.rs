//! Shannon entropy over softmax outputs and its gradient w.r.t. the logits.
//!
//! Probabilities are clamped to `[PROB_FLOOR, 1]` before the logarithm, so
//! `0 · log 0` evaluates to 0 and one-hot rows stay finite.

pub(crate) const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

#[inline]
pub(crate) fn is_clamped(p: f64) -> bool {
    p < PROB_FLOOR
}

/// `H(p) = -Σ p_k ln p_k` in nats.
pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pk| pk * clamped_ln(pk)).sum::<f64>()
}

/// Gradient of `H(softmax(z))` w.r.t. `z`, given `p = softmax(z)`.
///
/// With `S = Σ_j p_j ℓ_j` and `ℓ_j = ln max(p_j, floor)`:
/// `∂S/∂z_i = p_i ℓ_i - p_i S + p_i [i unclamped] - p_i Σ_{j unclamped} p_j`.
/// Entries with `p_i = 0` (masked columns) get a zero gradient.
pub(crate) fn entropy_grad_logits(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().map(|&pj| pj * clamped_ln(pj)).sum();
    let live_mass: f64 = p.iter().filter(|&&pj| !is_clamped(pj)).sum();
    p.iter()
        .map(|&pi| {
            let own = if is_clamped(pi) { 0.0 } else { pi };
            let ds = pi * clamped_ln(pi) - pi * s + own - pi * live_mass;
            -ds
        })
        .collect()
}

/// Numerically stable softmax of a slice.
pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&zi| (zi - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
