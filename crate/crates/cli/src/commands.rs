use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use uacp::classifier::write_predictions;
use uacp::data::{write_dataset, ClassMap, LabelSplit};
use uacp::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use uacp::metrics::{format_metrics_row, write_metrics_csv, MetricsReport, METRICS_HEADER};
use uacp::nn::{read_checkpoint, write_checkpoint};
use uacp::trainer::{
    predict, train, train_from, write_loss_log, Evaluator, LossToggles, TrainOutcome,
};

use crate::config::{Datasets, ExperimentConfig};
use crate::CliError;

/// Root seed and output directory shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub seed: u64,
    pub out: PathBuf,
}

impl RunContext {
    fn prepare(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes the resolved configuration, with the seed actually used.
fn echo_config(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<(), CliError> {
    let effective = ExperimentConfig {
        seed: ctx.seed,
        ..cfg.clone()
    };
    fs::write(ctx.path("config.toml"), effective.to_toml())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub n_shared: usize,
    pub n_source_private: usize,
    pub n_target_private: usize,
    pub source_samples: usize,
    pub target_samples: usize,
}

pub fn cmd_generate(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<GenerateSummary, CliError> {
    if cfg.synth.is_none() {
        return Err(CliError::Config("generate needs a [synth] section".into()));
    }
    ctx.prepare()?;
    let Datasets {
        source,
        target,
        split,
    } = cfg.datasets(ctx.seed)?;
    let split = split.expect("synthetic data has a split");
    write_dataset(&source, &ctx.path("source.csv"))?;
    write_dataset(&target, &ctx.path("target.csv"))?;
    echo_config(cfg, ctx)?;
    log::info!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        ctx.out.display()
    );
    Ok(GenerateSummary {
        n_shared: split.n_shared,
        n_source_private: split.n_source_private,
        n_target_private: split.n_target_private,
        source_samples: source.len(),
        target_samples: target.len(),
    })
}

fn write_history(ctx: &RunContext, history: &[MetricsReport]) -> Result<(), CliError> {
    let mut w = create(&ctx.path("metrics.csv"))?;
    write_metrics_csv(&mut w, history)?;
    w.flush()?;
    write_json(&ctx.path("metrics.json"), history)
}

fn write_target_predictions(
    ctx: &RunContext,
    outcome_net: &uacp::nn::Network,
    data: &Datasets,
) -> Result<Vec<uacp::classifier::Decision>, CliError> {
    let decisions = predict(outcome_net, data.target.features.view())?;
    let mut w = create(&ctx.path("predictions.csv"))?;
    write_predictions(
        &mut w,
        &data.target.ids,
        &decisions,
        outcome_net.num_classes(),
    )?;
    w.flush()?;
    Ok(decisions)
}

/// Trains with the configured losses. With `warm_start`, training resumes
/// from that checkpoint's parameters.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    warm_start: Option<&Path>,
) -> Result<TrainOutcome, CliError> {
    ctx.prepare()?;
    let data = cfg.datasets(ctx.seed)?;
    let config = cfg.train_config(ctx.seed);
    let evaluator = Evaluator::new(&ClassMap::from_source(&data.source), &data.target);
    let outcome = match warm_start {
        Some(path) => {
            let ckpt = read_checkpoint(&mut std::io::BufReader::new(File::open(path)?))?;
            train_from(
                ckpt.network,
                &data.source,
                data.target.unlabeled(),
                Some(&evaluator),
                &config,
            )?
        }
        None => train(
            &data.source,
            data.target.unlabeled(),
            Some(&evaluator),
            &config,
        )?,
    };

    let mut w = create(&ctx.path("checkpoint.bin"))?;
    write_checkpoint(&mut w, &outcome.network, Some(&outcome.bank))?;
    w.flush()?;
    let mut w = create(&ctx.path("loss_log.csv"))?;
    write_loss_log(&mut w, &outcome.loss_log)?;
    w.flush()?;
    write_history(ctx, &outcome.history)?;
    write_target_predictions(ctx, &outcome.network, &data)?;
    echo_config(cfg, ctx)?;
    Ok(outcome)
}

/// Scores the target set with a trained checkpoint.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    checkpoint: &Path,
) -> Result<MetricsReport, CliError> {
    ctx.prepare()?;
    let ckpt = read_checkpoint(&mut std::io::BufReader::new(File::open(checkpoint)?))?;
    let data = cfg.datasets(ctx.seed)?;
    let map = ClassMap::from_source(&data.source);
    if map.num_classes() != ckpt.network.num_classes() {
        return Err(CliError::Config(format!(
            "checkpoint has {} classes, source data has {}",
            ckpt.network.num_classes(),
            map.num_classes()
        )));
    }
    let decisions = write_target_predictions(ctx, &ckpt.network, &data)?;
    let metrics = Evaluator::new(&map, &data.target).evaluate(&decisions)?;
    write_history(ctx, std::slice::from_ref(&metrics))?;
    Ok(metrics)
}

pub const ABLATION_LABELS: [&str; 5] = [
    "w/o L_ESL+L_SFC+L_TOVA",
    "w/o L_ESL",
    "w/o L_SFC",
    "w/o L_TOVA",
    "ALL",
];

fn ablation_toggles(label: &str) -> LossToggles {
    let all = LossToggles::default();
    match label {
        "w/o L_ESL+L_SFC+L_TOVA" => LossToggles {
            esl: false,
            sfc: false,
            tova: false,
        },
        "w/o L_ESL" => LossToggles { esl: false, ..all },
        "w/o L_SFC" => LossToggles { sfc: false, ..all },
        "w/o L_TOVA" => LossToggles { tova: false, ..all },
        _ => all,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub configuration: &'static str,
    pub hos: f64,
    pub acc_kn: f64,
    pub acc_unk: f64,
}

/// Trains once per loss configuration on the same data and seed. The
/// `disable_*` flags of the config are overridden per row.
pub fn cmd_ablate(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<AblationRow>, CliError> {
    ctx.prepare()?;
    let data = cfg.datasets(ctx.seed)?;
    let evaluator = Evaluator::new(&ClassMap::from_source(&data.source), &data.target);
    let mut rows = Vec::with_capacity(ABLATION_LABELS.len());
    for label in ABLATION_LABELS {
        log::info!("ablation: {label}");
        let config = uacp::trainer::TrainConfig {
            toggles: ablation_toggles(label),
            ..cfg.train_config(ctx.seed)
        };
        let out = train(
            &data.source,
            data.target.unlabeled(),
            Some(&evaluator),
            &config,
        )?;
        let m = out.history.last().expect("at least one epoch");
        rows.push(AblationRow {
            configuration: label,
            hos: m.hos,
            acc_kn: m.acc_kn,
            acc_unk: m.acc_unk,
        });
    }
    let mut w = create(&ctx.path("ablation.csv"))?;
    writeln!(w, "configuration,hos,acc_kn,acc_unk")?;
    for r in &rows {
        writeln!(
            w,
            "{},{:.1},{:.1},{:.1}",
            r.configuration, r.hos, r.acc_kn, r.acc_unk
        )?;
    }
    w.flush()?;
    write_json(&ctx.path("ablation.json"), &rows)?;
    echo_config(cfg, ctx)?;
    Ok(rows)
}

pub const SWEEP_METHODS: [&str; 2] = ["uacp", "source_only"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: &'static str,
    pub seed: u64,
    pub n_shared: usize,
    pub n_source_private: usize,
    pub n_target_private: usize,
    pub hos: f64,
    pub acc_kn: f64,
    pub acc_unk: f64,
}

/// Regenerates the scenario for each target-private count and trains both
/// the configured method and the source-only baseline on it.
pub fn cmd_sweep_unknowns(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<Vec<SweepRow>, CliError> {
    let Some(synth) = &cfg.synth else {
        return Err(CliError::Config(
            "sweep-unknowns needs a [synth] section".into(),
        ));
    };
    if cfg.sweep.target_private.is_empty() || cfg.sweep.repeats == 0 {
        return Err(CliError::Config(
            "sweep needs at least one point and one repeat".into(),
        ));
    }
    ctx.prepare()?;
    let mut rows = Vec::new();
    for r in 0..cfg.sweep.repeats as u64 {
        let seed = ctx.seed.wrapping_add(r);
        for &tp in &cfg.sweep.target_private {
            let mut point = cfg.clone();
            point.synth = Some(crate::config::SynthSection {
                n_target_private: tp,
                ..synth.clone()
            });
            let data = point.datasets(seed)?;
            let split: LabelSplit = data.split.expect("synthetic");
            let evaluator = Evaluator::new(&ClassMap::from_source(&data.source), &data.target);
            for method in SWEEP_METHODS {
                let mut config = point.train_config(seed);
                if method == "source_only" {
                    config.toggles = ablation_toggles("w/o L_ESL+L_SFC+L_TOVA");
                }
                log::info!("sweep: seed {seed}, {tp} target-private classes, {method}");
                let out = train(
                    &data.source,
                    data.target.unlabeled(),
                    Some(&evaluator),
                    &config,
                )?;
                let m = out.history.last().expect("at least one epoch");
                rows.push(SweepRow {
                    method,
                    seed,
                    n_shared: split.n_shared,
                    n_source_private: split.n_source_private,
                    n_target_private: split.n_target_private,
                    hos: m.hos,
                    acc_kn: m.acc_kn,
                    acc_unk: m.acc_unk,
                });
            }
        }
    }
    let mut w = create(&ctx.path("sweep.csv"))?;
    writeln!(
        w,
        "method,seed,n_shared,n_source_private,n_target_private,hos,acc_kn,acc_unk"
    )?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.1},{:.1},{:.1}",
            r.method,
            r.seed,
            r.n_shared,
            r.n_source_private,
            r.n_target_private,
            r.hos,
            r.acc_kn,
            r.acc_unk
        )?;
    }
    w.flush()?;
    write_json(&ctx.path("sweep.json"), &rows)?;
    echo_config(cfg, ctx)?;
    Ok(rows)
}

/// Mean HOS per (method, target-private count), in sweep order.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(&'static str, usize, f64)> {
    let mut out: Vec<(&'static str, usize, f64, usize)> = Vec::new();
    for r in rows {
        match out
            .iter_mut()
            .find(|(m, tp, _, _)| *m == r.method && *tp == r.n_target_private)
        {
            Some(e) => {
                e.2 += r.hos;
                e.3 += 1;
            }
            None => out.push((r.method, r.n_target_private, r.hos, 1)),
        }
    }
    out.into_iter()
        .map(|(m, tp, s, n)| (m, tp, s / n as f64))
        .collect()
}

pub fn cmd_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport, CliError> {
    Ok(run_gradcheck(options)?)
}

/// Error naming every check above the tolerance, if any.
pub fn gradcheck_verdict(report: &GradcheckReport) -> Result<(), CliError> {
    let failed: Vec<String> = report
        .losses
        .iter()
        .chain([&report.composite])
        .filter(|l| !l.passed)
        .map(|l| format!("{} ({:.3e})", l.name, l.max_rel_err))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}

pub fn format_gradcheck(report: &GradcheckReport) -> String {
    let mut s = format!(
        "{:<6} {:>12} {:>6} {:>8}  result\n",
        "loss", "max_rel_err", "draws", "redraws"
    );
    for l in &report.losses {
        s.push_str(&format!(
            "{:<6} {:>12.3e} {:>6} {:>8}  {}\n",
            l.name,
            l.max_rel_err,
            l.draws,
            l.redraws,
            if l.passed { "PASS" } else { "FAIL" }
        ));
    }
    let c = &report.composite;
    s.push_str(&format!(
        "weighted total: max_rel_err {:.3e} over {} draws, {}\n",
        c.max_rel_err,
        c.draws,
        if c.passed { "PASS" } else { "FAIL" }
    ));
    s
}

pub fn format_history(history: &[MetricsReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for (e, m) in history.iter().enumerate() {
        s.push_str(&format_metrics_row(e + 1, m));
        s.push('\n');
    }
    s
}
