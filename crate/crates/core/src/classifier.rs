//! Probability bundles from the `2K` logits and the paradox decision rule.

use std::io::Write;

use ndarray::ArrayView2;

use crate::entropy::softmax;
use crate::{Error, Result};

/// Tolerance on the simplex invariants of a bundle.
pub const SIMPLEX_TOLERANCE: f64 = 1e-8;

/// Binary distribution of one OVA predictor: `pos` = in-class, `neg` = others.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvaPair {
    pub pos: f64,
    pub neg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityBundle {
    p_mc: Vec<f64>,
    ova: Vec<OvaPair>,
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ProbabilityBundle {
    /// Validates both simplex invariants.
    pub fn new(p_mc: Vec<f64>, ova: Vec<OvaPair>) -> Result<Self> {
        if p_mc.len() < 2 || p_mc.len() != ova.len() {
            return Err(Error::InvalidInput(format!(
                "bundle needs K >= 2 MC entries and K OVA pairs, got {} and {}",
                p_mc.len(),
                ova.len()
            )));
        }
        let sum: f64 = p_mc.iter().sum();
        if !p_mc.iter().all(|&p| is_probability(p)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "MC probabilities sum to {sum}"
            )));
        }
        for (k, pair) in ova.iter().enumerate() {
            if !is_probability(pair.pos)
                || !is_probability(pair.neg)
                || (pair.pos + pair.neg - 1.0).abs() > SIMPLEX_TOLERANCE
            {
                return Err(Error::InvalidInput(format!(
                    "OVA pair {k} = ({}, {}) is not a binary distribution",
                    pair.pos, pair.neg
                )));
            }
        }
        Ok(Self { p_mc, ova })
    }

    pub fn num_classes(&self) -> usize {
        self.p_mc.len()
    }

    pub fn p_mc(&self) -> &[f64] {
        &self.p_mc
    }

    pub fn ova(&self) -> &[OvaPair] {
        &self.ova
    }

    /// Argmax of the MC distribution, lowest index on ties.
    pub fn mc_argmax(&self) -> usize {
        argmax(&self.p_mc)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// MC softmax over columns `0..K`; OVA pair `k` is the softmax of
/// `(logit_k, logit_{K+k})`.
pub fn bundle_from_logits(logits: &[f64]) -> Result<ProbabilityBundle> {
    if !logits.len().is_multiple_of(2) || logits.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "expected an even number (>= 4) of logits, got {}",
            logits.len()
        )));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let k = logits.len() / 2;
    let p_mc = softmax(&logits[..k]);
    let ova = (0..k)
        .map(|c| {
            // Two-way softmax written as a pair of logistic terms so both
            // sides keep full relative precision.
            let u = logits[c] - logits[k + c];
            OvaPair {
                pos: logistic(u),
                neg: logistic(-u),
            }
        })
        .collect();
    Ok(ProbabilityBundle { p_mc, ova })
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Bundles for every row of a `(rows, 2K)` logit matrix.
pub fn bundles_from_logits(logits: ArrayView2<f64>) -> Result<Vec<ProbabilityBundle>> {
    logits
        .rows()
        .into_iter()
        .map(|row| bundle_from_logits(&row.to_vec()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prediction {
    Known(usize),
    Unknown,
}

impl Prediction {
    /// Encoding used in every evaluation output: unknown is class index `K`.
    pub fn encode(self, num_classes: usize) -> usize {
        match self {
            Prediction::Known(k) => k,
            Prediction::Unknown => num_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub predicted: Prediction,
    pub mc_argmax: usize,
    /// `p⁻` of the MC-argmax OVA predictor; higher means more likely unknown.
    pub paradox_score: f64,
}

/// Accept the MC argmax `k` when `p⁺_k ≥ p⁻_k`, otherwise reject as unknown.
pub fn decide(bundle: &ProbabilityBundle) -> Decision {
    let k = bundle.mc_argmax();
    let pair = bundle.ova[k];
    let predicted = if pair.pos >= pair.neg {
        Prediction::Known(k)
    } else {
        Prediction::Unknown
    };
    Decision {
        predicted,
        mc_argmax: k,
        paradox_score: pair.neg,
    }
}

/// Which case of the entropy-strengthened loss a target sample falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EslBranch {
    /// OVA confirms the MC prediction by more than the margin.
    Sharpen,
    /// OVA contradicts the MC prediction by more than the margin.
    Flatten,
    Skip,
}

/// Strict inequalities on both sides: the closed band `|p⁺ − p⁻| ≤ m` skips.
pub fn esl_branch(bundle: &ProbabilityBundle, margin: f64) -> EslBranch {
    let pair = bundle.ova[bundle.mc_argmax()];
    if pair.pos > pair.neg + margin {
        EslBranch::Sharpen
    } else if pair.pos < pair.neg - margin {
        EslBranch::Flatten
    } else {
        EslBranch::Skip
    }
}

/// Header of the prediction dump.
pub const PREDICTION_HEADER: &str = "sample_id,mc_argmax,p_neg_argmax,predicted_class";

/// One line per sample; unknown is written as class index `num_classes`.
pub fn write_predictions<W: Write>(
    w: &mut W,
    sample_ids: &[u64],
    decisions: &[Decision],
    num_classes: usize,
) -> Result<()> {
    if sample_ids.len() != decisions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sample ids for {} decisions",
            sample_ids.len(),
            decisions.len()
        )));
    }
    writeln!(w, "{PREDICTION_HEADER}")?;
    for (id, d) in sample_ids.iter().zip(decisions) {
        writeln!(
            w,
            "{},{},{},{}",
            id,
            d.mc_argmax,
            d.paradox_score,
            d.predicted.encode(num_classes)
        )?;
    }
    Ok(())
}
