//! The training loop.
//!
//! Each epoch refills the memory bank from a full pass over the target set,
//! then runs `T = ceil(max(N_s, N_t) / B)` iterations. An iteration samples a
//! source and a target batch, extracts features, writes the target features
//! into the bank, computes neighbor distributions against the bank, builds
//! probability bundles, evaluates the source and target losses, and takes one
//! SGD-with-momentum step. Target labels never enter the loop; they are only
//! seen by the optional [`Evaluator`] run after each epoch.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{bundles_from_logits, decide, Decision};
use crate::data::{ClassMap, LabeledDataset, Unlabeled};
use crate::losses::{
    loss_ce, loss_ce_grad, loss_esl, loss_esl_grad, loss_sfc, loss_sfc_grad, loss_sova,
    loss_sova_grad, loss_total, loss_tova, loss_tova_grad, LossReport, LossTerms, LossWeights,
};
use crate::memory_bank::MemoryBank;
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{extract_features, ForwardPass, GradientBundle, Network};
use crate::seed::{rng_for, SeedStream};
use crate::{Error, Result};

/// `η(t) = base · (1 + a·t/total)^(−b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSchedule {
    pub a: f64,
    pub b: f64,
}

impl Default for InverseSchedule {
    fn default() -> Self {
        Self { a: 10.0, b: 0.75 }
    }
}

pub fn lr_at(t: usize, total: usize, base: f64, schedule: InverseSchedule) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidInput("schedule length must be > 0".into()));
    }
    if t > total {
        return Err(Error::InvalidInput(format!(
            "iteration {t} past schedule end {total}"
        )));
    }
    Ok(base * (1.0 + schedule.a * t as f64 / total as f64).powf(-schedule.b))
}

/// Which target losses take part. A disabled loss is neither computed nor
/// logged (its column reads 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub esl: bool,
    pub sfc: bool,
    pub tova: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            esl: true,
            sfc: true,
            tova: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            feature_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub toggles: LossToggles,
    pub tau: f64,
    pub lr_head: f64,
    pub lr_extractor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: InverseSchedule,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 36,
            epochs: 30,
            weights: LossWeights::default(),
            toggles: LossToggles::default(),
            tau: 0.05,
            lr_head: 0.03,
            lr_extractor: 0.03,
            momentum: 0.9,
            weight_decay: 0.0005,
            schedule: InverseSchedule::default(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        self.weights.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        for (name, v) in [
            ("lr_head", self.lr_head),
            ("lr_extractor", self.lr_extractor),
            ("weight_decay", self.weight_decay),
            ("schedule.a", self.schedule.a),
            ("schedule.b", self.schedule.b),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.model.feature_dim == 0 || self.model.hidden.contains(&0) {
            return bad("model dimensions must be > 0".into());
        }
        Ok(())
    }

    /// Target-loss weights with disabled losses zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.toggles.esl {
            w.gamma = 0.0;
        }
        if !self.toggles.sfc {
            w.alpha = 0.0;
        }
        if !self.toggles.tova {
            w.beta = 0.0;
        }
        w
    }
}

/// Momentum buffers and step counter for SGD with momentum and weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
    extractor_slices: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_head: f64,
    pub lr_extractor: f64,
    pub schedule: InverseSchedule,
    pub total_iterations: usize,
    iteration: usize,
}

impl OptimizerState {
    pub fn new(network: &Network, config: &TrainConfig, total_iterations: usize) -> Self {
        Self {
            velocity: network
                .param_slices()
                .iter()
                .map(|s| vec![0.0; s.len()])
                .collect(),
            extractor_slices: network.extractor_slice_count(),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            lr_head: config.lr_head,
            lr_extractor: config.lr_extractor,
            schedule: config.schedule,
            total_iterations,
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − η·v`, with `η` from the inverse schedule
/// for the parameter's group (head or extractor).
pub fn step(network: &mut Network, grads: &GradientBundle, opt: &mut OptimizerState) -> Result<()> {
    if !grads.matches(network) {
        return Err(Error::ShapeMismatch(
            "gradients do not match the network".into(),
        ));
    }
    let total = opt.total_iterations.max(1);
    let t = opt.iteration.min(total);
    let lr_ext = lr_at(t, total, opt.lr_extractor, opt.schedule)?;
    let lr_head = lr_at(t, total, opt.lr_head, opt.schedule)?;
    let grad_slices = grads.slices();
    for (idx, (theta, (v, g))) in network
        .param_slices_mut()
        .into_iter()
        .zip(opt.velocity.iter_mut().zip(grad_slices))
        .enumerate()
    {
        let lr = if idx < opt.extractor_slices {
            lr_ext
        } else {
            lr_head
        };
        for ((p, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = opt.momentum * *vi + (gi + opt.weight_decay * *p);
            *p -= lr * *vi;
        }
    }
    opt.iteration += 1;
    Ok(())
}

/// Cycles over `0..n` in shuffled order; batches never repeat an index.
#[derive(Debug)]
struct CyclingSampler {
    order: Vec<usize>,
    pos: usize,
}

impl CyclingSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    /// Forces a fresh permutation before the next draw.
    fn restart(&mut self) {
        self.pos = self.order.len();
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                // Indices already in this batch go last so the batch stays distinct.
                let taken: BTreeSet<usize> = batch.iter().copied().collect();
                let (fresh, used): (Vec<usize>, Vec<usize>) =
                    self.order.iter().partition(|i| !taken.contains(i));
                self.order = fresh.into_iter().chain(used).collect();
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

fn select_rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// One iteration's inputs after the forward passes and bank update.
pub struct IterationInputs<'a> {
    pub source: &'a ForwardPass,
    pub source_labels: &'a [usize],
    pub target: &'a ForwardPass,
    pub target_indices: &'a [usize],
    pub bank: &'a MemoryBank,
}

/// Losses of one iteration and the gradient of the weighted total. Disabled
/// or zero-weighted target losses contribute no gradient.
pub fn iteration_objective(
    network: &Network,
    inputs: &IterationInputs<'_>,
    weights: &LossWeights,
    toggles: LossToggles,
) -> Result<(LossReport, GradientBundle)> {
    let source_bundles = bundles_from_logits(inputs.source.logits.view())?;
    let target_bundles = bundles_from_logits(inputs.target.logits.view())?;
    let k = network.num_classes();
    let rows_t = inputs.target.batch_size();

    let mut terms = LossTerms {
        ce: loss_ce(&source_bundles, inputs.source_labels)?,
        sova: loss_sova(&source_bundles, inputs.source_labels)?,
        ..LossTerms::default()
    };
    let mut grad_source = loss_ce_grad(&source_bundles, inputs.source_labels)?;
    grad_source += &loss_sova_grad(&source_bundles, inputs.source_labels)?;

    let mut grad_target = Array2::zeros((rows_t, 2 * k));
    let mut grad_features: Option<Array2<f64>> = None;

    if toggles.sfc {
        let mut sims = Array2::zeros((rows_t, inputs.bank.len()));
        for (r, &i) in inputs.target_indices.iter().enumerate() {
            let row = inputs
                .bank
                .similarity_row(i, inputs.target.features.row(r))?;
            sims.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        }
        terms.sfc = loss_sfc(sims.view())?;
        if weights.alpha != 0.0 {
            let g_scores = loss_sfc_grad(sims.view())?;
            let mut gf = Array2::zeros(inputs.target.features.dim());
            for (r, &i) in inputs.target_indices.iter().enumerate() {
                let g = inputs
                    .bank
                    .query_gradient(i, g_scores.row(r).as_slice().expect("contiguous"))?;
                for (o, v) in gf.row_mut(r).iter_mut().zip(g) {
                    *o = weights.alpha * v;
                }
            }
            grad_features = Some(gf);
        }
    }
    if toggles.tova {
        terms.tova = loss_tova(&target_bundles);
        if weights.beta != 0.0 {
            grad_target.scaled_add(weights.beta, &loss_tova_grad(&target_bundles));
        }
    }
    if toggles.esl {
        terms.esl = loss_esl(&target_bundles, weights.margin);
        if weights.gamma != 0.0 {
            grad_target.scaled_add(
                weights.gamma,
                &loss_esl_grad(&target_bundles, weights.margin),
            );
        }
    }

    let mut effective = *weights;
    if !toggles.esl {
        effective.gamma = 0.0;
    }
    if !toggles.sfc {
        effective.alpha = 0.0;
    }
    if !toggles.tova {
        effective.beta = 0.0;
    }
    let report = loss_total(terms, &effective);
    if !report.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {report:?}")));
    }

    let mut grads = network.backward(inputs.source, grad_source.view(), None)?;
    let target_grads = network.backward(
        inputs.target,
        grad_target.view(),
        grad_features.as_ref().map(|g| g.view()),
    )?;
    grads.add_assign(&target_grads)?;
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((report, grads))
}

/// Forward passes plus [`iteration_objective`] on a fixed batch and a fixed
/// bank. The bank is not modified.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    network: &Network,
    source_x: ArrayView2<f64>,
    source_labels: &[usize],
    target_x: ArrayView2<f64>,
    target_indices: &[usize],
    bank: &MemoryBank,
    weights: &LossWeights,
    toggles: LossToggles,
) -> Result<(LossReport, GradientBundle)> {
    let source = network.forward(source_x)?;
    let target = network.forward(target_x)?;
    iteration_objective(
        network,
        &IterationInputs {
            source: &source,
            source_labels,
            target: &target,
            target_indices,
            bank,
        },
        weights,
        toggles,
    )
}

/// Decisions for every row of `features`.
pub fn predict(network: &Network, features: ArrayView2<f64>) -> Result<Vec<Decision>> {
    let pass = network.forward(features)?;
    Ok(bundles_from_logits(pass.logits.view())?
        .iter()
        .map(decide)
        .collect())
}

/// Holds the target ground truth for per-epoch evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    truth: Vec<usize>,
    shared: BTreeSet<usize>,
    num_classes: usize,
}

impl Evaluator {
    pub fn new(class_map: &ClassMap, target: &LabeledDataset) -> Self {
        Self {
            truth: class_map.target_truth(target),
            shared: class_map.shared_classes(target),
            num_classes: class_map.num_classes(),
        }
    }

    pub fn evaluate(&self, decisions: &[Decision]) -> Result<MetricsReport> {
        evaluate(decisions, &self.truth, self.num_classes, &self.shared)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: LossReport,
}

pub const LOSS_LOG_HEADER: &str = "iteration,epoch,ce,sova,esl,sfc,tova,total";

pub fn write_loss_log<W: std::io::Write>(w: &mut W, log: &[IterationLog]) -> Result<()> {
    writeln!(w, "{LOSS_LOG_HEADER}")?;
    for row in log {
        let l = &row.loss;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.iteration, row.epoch, l.ce, l.sova, l.esl, l.sfc, l.tova, l.total
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub bank: MemoryBank,
    pub history: Vec<MetricsReport>,
    pub loss_log: Vec<IterationLog>,
}

pub fn iterations_per_epoch(n_source: usize, n_target: usize, batch_size: usize) -> usize {
    n_source.max(n_target).div_ceil(batch_size)
}

/// Trains from a seeded random initialization.
pub fn train(
    source: &LabeledDataset,
    target: Unlabeled<'_>,
    evaluator: Option<&Evaluator>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let class_map = ClassMap::from_source(source);
    if class_map.num_classes() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 source classes, found {}",
            class_map.num_classes()
        )));
    }
    config.validate()?;
    let mut rng = rng_for(config.seed, SeedStream::Init);
    let network = Network::init(
        source.input_dim(),
        &config.model.hidden,
        config.model.feature_dim,
        class_map.num_classes(),
        &mut rng,
    )?;
    train_from(network, source, target, evaluator, config)
}

/// Trains starting from `network` (e.g. a checkpoint).
pub fn train_from(
    mut network: Network,
    source: &LabeledDataset,
    target: Unlabeled<'_>,
    evaluator: Option<&Evaluator>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let class_map = ClassMap::from_source(source);
    let k = class_map.num_classes();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 source classes, found {k}"
        )));
    }
    if network.num_classes() != k {
        return Err(Error::ShapeMismatch(format!(
            "network has {} classes, source data has {k}",
            network.num_classes()
        )));
    }
    if source.is_empty() || target.features.nrows() == 0 {
        return Err(Error::InvalidInput(
            "both domains need at least one sample".into(),
        ));
    }
    if network.extractor.input_dim() != source.input_dim()
        || target.features.ncols() != source.input_dim()
    {
        return Err(Error::ShapeMismatch("input dimensions disagree".into()));
    }
    if target.features.nrows() < 2 {
        return Err(Error::InvalidInput(
            "target domain needs at least 2 samples".into(),
        ));
    }

    let source_labels = class_map.source_indices(source);
    let n_s = source.len();
    let n_t = target.features.nrows();
    let per_epoch = iterations_per_epoch(n_s, n_t, config.batch_size);
    let total = per_epoch * config.epochs;
    let weights = config.weights;

    let mut opt = OptimizerState::new(&network, config, total);
    let mut shuffle_rng = rng_for(config.seed, SeedStream::Shuffle);
    let mut source_sampler = CyclingSampler::new(n_s);
    let mut target_sampler = CyclingSampler::new(n_t);

    let mut bank = MemoryBank::new(
        extract_features(&network.extractor, target.features)?,
        config.tau,
    )?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut loss_log = Vec::with_capacity(total);

    for epoch in 1..=config.epochs {
        if epoch > 1 {
            bank.initialize(extract_features(&network.extractor, target.features)?.view())?;
        }
        source_sampler.restart();
        target_sampler.restart();

        for _ in 0..per_epoch {
            let s_idx = source_sampler.next_batch(config.batch_size, &mut shuffle_rng);
            let t_idx = target_sampler.next_batch(config.batch_size, &mut shuffle_rng);
            let s_x = select_rows(source.features.view(), &s_idx);
            let t_x = select_rows(target.features, &t_idx);
            let s_y: Vec<usize> = s_idx.iter().map(|&i| source_labels[i]).collect();

            let source_pass = network.forward(s_x.view())?;
            let target_pass = network.forward(t_x.view())?;
            bank.update_batch(&t_idx, target_pass.features.view())?;

            let (report, grads) = iteration_objective(
                &network,
                &IterationInputs {
                    source: &source_pass,
                    source_labels: &s_y,
                    target: &target_pass,
                    target_indices: &t_idx,
                    bank: &bank,
                },
                &weights,
                config.toggles,
            )?;
            loss_log.push(IterationLog {
                iteration: opt.iteration(),
                epoch,
                loss: report,
            });
            step(&mut network, &grads, &mut opt)?;
        }

        if let Some(ev) = evaluator {
            let metrics = ev.evaluate(&predict(&network, target.features)?)?;
            log::info!(
                "epoch {epoch}/{}: HOS {:.1} acc_kn {:.1} acc_unk {:.1} AUC {:.4}",
                config.epochs,
                metrics.hos,
                metrics.acc_kn,
                metrics.acc_unk,
                metrics.auc
            );
            history.push(metrics);
        } else {
            log::info!("epoch {epoch}/{} done", config.epochs);
        }
    }

    Ok(TrainOutcome {
        network,
        bank,
        history,
        loss_log,
    })
}
