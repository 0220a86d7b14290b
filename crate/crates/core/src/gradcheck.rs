//! Finite-difference verification of every loss gradient.
//!
//! Each draw builds a small random network, a labeled source batch, a target
//! batch and a fixed memory bank, then compares the analytic parameter
//! gradient of one loss against central differences over every parameter.
//! Losses with discrete selections (hardest negative, argmax, entropy branch)
//! are only differentiable away from selection boundaries, so a draw whose
//! selections change under a ±h perturbation is discarded and redrawn.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::classifier::{bundles_from_logits, esl_branch, EslBranch, ProbabilityBundle};
use crate::losses::{
    loss_ce, loss_ce_grad, loss_esl, loss_esl_grad, loss_sfc, loss_sfc_grad, loss_sova,
    loss_sova_grad, loss_tova, loss_tova_grad, LossWeights,
};
use crate::memory_bank::MemoryBank;
use crate::nn::{ForwardPass, GradientBundle, Network};
use crate::seed::{rng_for, SeedStream};
use crate::trainer::{batch_objective, LossToggles};
use crate::{Error, Result};

pub const CLASS_COUNTS: [usize; 4] = [2, 3, 5, 10];
/// Floor in the relative-error denominator, so that entries whose true
/// gradient is zero are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Ce,
    Sova,
    Esl,
    Sfc,
    Tova,
    Total,
}

impl CheckedLoss {
    pub const INDIVIDUAL: [CheckedLoss; 5] =
        [Self::Ce, Self::Sova, Self::Esl, Self::Sfc, Self::Tova];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::Sova => "sova",
            Self::Esl => "esl",
            Self::Sfc => "sfc",
            Self::Tova => "tova",
            Self::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub draws: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Scales every analytic gradient by this factor before comparison.
    /// Anything other than 1 must make the check fail.
    pub analytic_scale: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            draws: 100,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheck {
    pub name: &'static str,
    pub draws: usize,
    pub redraws: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub losses: Vec<LossCheck>,
    pub composite: LossCheck,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.losses.iter().all(|l| l.passed) && self.composite.passed
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

struct Draw {
    network: Network,
    source_x: Array2<f64>,
    source_labels: Vec<usize>,
    target_x: Array2<f64>,
    target_indices: Vec<usize>,
    bank: MemoryBank,
    weights: LossWeights,
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn random_draw(num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let input_dim = rng.random_range(2..=5);
    let hidden = rng.random_range(3..=6);
    let feature_dim = rng.random_range(2..=4);
    let mut network = Network::init(input_dim, &[hidden], feature_dim, num_classes, rng)?;
    // Default init keeps logits near zero; spread them so the
    // probabilities are away from uniform.
    let spread = rng.random_range(1.0..4.0);
    for s in network.param_slices_mut() {
        s.iter_mut().for_each(|p| *p *= spread);
    }
    let b_s = rng.random_range(2..=4);
    let b_t = rng.random_range(2..=4);
    let bank_len = b_t + rng.random_range(1..=4);
    let source_x = normal_matrix(b_s, input_dim, 1.0, rng);
    let source_labels = (0..b_s).map(|_| rng.random_range(0..num_classes)).collect();
    let target_x = normal_matrix(b_t, input_dim, 1.0, rng);
    let mut pool: Vec<usize> = (0..bank_len).collect();
    rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), rng);
    let target_indices = pool[..b_t].to_vec();

    let mut rows = normal_matrix(bank_len, feature_dim, 1.0, rng);
    for mut r in rows.rows_mut() {
        let n = r.dot(&r).sqrt().max(1e-3);
        r.mapv_inplace(|v| v / n);
    }
    let tau = [0.05, 0.1, 0.5][rng.random_range(0..3)];
    let bank = MemoryBank::new(rows, tau)?;
    let weights = LossWeights {
        alpha: rng.random_range(0.01..1.0),
        beta: rng.random_range(0.01..1.0),
        gamma: rng.random_range(0.01..1.0),
        margin: rng.random_range(0.0..0.6),
    };
    Ok(Draw {
        network,
        source_x,
        source_labels,
        target_x,
        target_indices,
        bank,
        weights,
    })
}

/// Hardest negative per source sample, argmax and entropy branch per target sample.
fn selections(
    source: &[ProbabilityBundle],
    labels: &[usize],
    target: &[ProbabilityBundle],
    margin: f64,
) -> Vec<usize> {
    let mut sig = Vec::with_capacity(source.len() + 2 * target.len());
    for (b, &y) in source.iter().zip(labels) {
        let neg = b.ova().iter().enumerate().filter(|(j, _)| *j != y).fold(
            (usize::MAX, f64::NEG_INFINITY),
            |acc, (j, p)| if p.pos > acc.1 { (j, p.pos) } else { acc },
        );
        sig.push(neg.0);
    }
    for b in target {
        sig.push(b.mc_argmax());
        sig.push(match esl_branch(b, margin) {
            EslBranch::Sharpen => 0,
            EslBranch::Flatten => 1,
            EslBranch::Skip => 2,
        });
    }
    sig
}

fn similarities(draw: &Draw, target: &ForwardPass) -> Result<Array2<f64>> {
    let mut sims = Array2::zeros((draw.target_indices.len(), draw.bank.len()));
    for (r, &i) in draw.target_indices.iter().enumerate() {
        let row = draw.bank.similarity_row(i, target.features.row(r))?;
        sims.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(sims)
}

/// Loss value, discrete selections, and (optionally) the analytic gradient.
fn evaluate(
    network: &Network,
    draw: &Draw,
    loss: CheckedLoss,
    with_grad: bool,
) -> Result<(f64, Vec<usize>, Option<GradientBundle>)> {
    let source = network.forward(draw.source_x.view())?;
    let target = network.forward(draw.target_x.view())?;
    let sb = bundles_from_logits(source.logits.view())?;
    let tb = bundles_from_logits(target.logits.view())?;
    let sig = selections(&sb, &draw.source_labels, &tb, draw.weights.margin);
    let labels = draw.source_labels.as_slice();
    let margin = draw.weights.margin;

    let (value, grad) = match loss {
        CheckedLoss::Ce | CheckedLoss::Sova => {
            let (v, g) = if loss == CheckedLoss::Ce {
                (
                    loss_ce(&sb, labels)?,
                    with_grad.then(|| loss_ce_grad(&sb, labels)).transpose()?,
                )
            } else {
                (
                    loss_sova(&sb, labels)?,
                    with_grad.then(|| loss_sova_grad(&sb, labels)).transpose()?,
                )
            };
            let grad = g
                .map(|g| network.backward(&source, g.view(), None))
                .transpose()?;
            (v, grad)
        }
        CheckedLoss::Esl | CheckedLoss::Tova => {
            let (v, g) = if loss == CheckedLoss::Esl {
                (
                    loss_esl(&tb, margin),
                    with_grad.then(|| loss_esl_grad(&tb, margin)),
                )
            } else {
                (loss_tova(&tb), with_grad.then(|| loss_tova_grad(&tb)))
            };
            let grad = g
                .map(|g| network.backward(&target, g.view(), None))
                .transpose()?;
            (v, grad)
        }
        CheckedLoss::Sfc => {
            let sims = similarities(draw, &target)?;
            let v = loss_sfc(sims.view())?;
            let grad = if with_grad {
                let gs = loss_sfc_grad(sims.view())?;
                let mut gf = Array2::zeros(target.features.dim());
                for (r, &i) in draw.target_indices.iter().enumerate() {
                    let g = draw
                        .bank
                        .query_gradient(i, gs.row(r).as_slice().expect("contiguous"))?;
                    gf.row_mut(r).assign(&ndarray::ArrayView1::from(&g));
                }
                let zero = Array2::zeros(target.logits.dim());
                Some(network.backward(&target, zero.view(), Some(gf.view()))?)
            } else {
                None
            };
            (v, grad)
        }
        CheckedLoss::Total => {
            let (report, g) = batch_objective(
                network,
                draw.source_x.view(),
                labels,
                draw.target_x.view(),
                &draw.target_indices,
                &draw.bank,
                &draw.weights,
                LossToggles::default(),
            )?;
            (report.total, with_grad.then_some(g))
        }
    };
    Ok((value, sig, grad))
}

/// Max relative error of one draw, or `None` if a selection flips within ±h.
fn check_draw(draw: &Draw, loss: CheckedLoss, options: &GradcheckOptions) -> Result<Option<f64>> {
    let (_, base_sig, grad) = evaluate(&draw.network, draw, loss, true)?;
    let analytic = grad.expect("requested").to_flat();
    let h = options.step;
    let mut net = draw.network.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let slice_count = net.param_slices().len();
    for s in 0..slice_count {
        let len = net.param_slices()[s].len();
        for e in 0..len {
            let orig = net.param_slices()[s][e];
            net.param_slices_mut()[s][e] = orig + h;
            let (plus, sig_p, _) = evaluate(&net, draw, loss, false)?;
            net.param_slices_mut()[s][e] = orig - h;
            let (minus, sig_m, _) = evaluate(&net, draw, loss, false)?;
            net.param_slices_mut()[s][e] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                return Ok(None);
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[flat] * options.analytic_scale;
            worst = worst.max(relative_error(a, numeric));
            flat += 1;
        }
    }
    Ok(Some(worst))
}

fn check_loss(
    loss: CheckedLoss,
    options: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<LossCheck> {
    const MAX_REDRAWS_PER_DRAW: usize = 50;
    let mut max_rel_err: f64 = 0.0;
    let mut redraws = 0;
    for d in 0..options.draws {
        let k = CLASS_COUNTS[d % CLASS_COUNTS.len()];
        let mut attempts = 0;
        loop {
            let draw = random_draw(k, rng)?;
            match check_draw(&draw, loss, options)? {
                Some(err) => {
                    max_rel_err = max_rel_err.max(err);
                    break;
                }
                None => {
                    redraws += 1;
                    attempts += 1;
                    if attempts > MAX_REDRAWS_PER_DRAW {
                        return Err(Error::Numerical(format!(
                            "{}: no draw away from selection boundaries after {attempts} attempts",
                            loss.name()
                        )));
                    }
                }
            }
        }
    }
    let passed = max_rel_err < options.tolerance;
    log::debug!(
        "{}: max rel err {max_rel_err:.3e} ({redraws} redraws)",
        loss.name()
    );
    Ok(LossCheck {
        name: loss.name(),
        draws: options.draws,
        redraws,
        max_rel_err,
        passed,
    })
}

/// Runs the whole suite: the five individual losses, then the weighted total.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    if options.draws == 0 || !(options.step > 0.0) || !(options.tolerance > 0.0) {
        return Err(Error::InvalidInput(
            "gradcheck needs draws > 0, step > 0, tolerance > 0".into(),
        ));
    }
    let mut rng = rng_for(options.seed, SeedStream::GradCheck);
    let losses = CheckedLoss::INDIVIDUAL
        .iter()
        .map(|&l| check_loss(l, options, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let composite = check_loss(CheckedLoss::Total, options, &mut rng)?;
    Ok(GradcheckReport {
        losses,
        composite,
        tolerance: options.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn few(draws: usize) -> GradcheckOptions {
        GradcheckOptions {
            draws,
            ..GradcheckOptions::default()
        }
    }

    #[test]
    fn small_suite_passes() {
        let report = run_gradcheck(&few(8)).unwrap();
        assert_eq!(report.losses.len(), 5);
        for l in report.losses.iter().chain([&report.composite]) {
            assert!(l.passed, "{} max rel err {}", l.name, l.max_rel_err);
        }
    }

    #[test]
    fn scaled_gradient_fails() {
        let report = run_gradcheck(&GradcheckOptions {
            analytic_scale: 1.01,
            ..few(4)
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
