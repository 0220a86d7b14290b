//! Open-set evaluation: per-class known accuracy, unknown accuracy, their
//! harmonic mean (HOS), instance accuracy on known classes, and AUROC of the
//! unknown score.
//!
//! Accuracies are percentages in `[0, 100]`; AUROC is a fraction. Quantities
//! that are undefined for the given data (no unknown samples, no shared
//! samples) are NaN.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::Decision;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_kn: f64,
    pub acc_unk: f64,
    pub hos: f64,
    pub acc: f64,
    pub auc: f64,
}

/// Harmonic mean of two percentages; 0 when either is 0.
pub fn hos(acc_kn: f64, acc_unk: f64) -> f64 {
    if acc_kn == 0.0 || acc_unk == 0.0 {
        return 0.0;
    }
    2.0 * acc_kn * acc_unk / (acc_kn + acc_unk)
}

/// Mann-Whitney AUROC: the probability that a random unknown sample scores
/// above a random known one, ties counting one half.
pub fn auroc(scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if scores.len() != is_unknown.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} flags",
            scores.len(),
            is_unknown.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let n_pos = is_unknown.iter().filter(|&&u| u).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUROC needs both unknown and known samples".into(),
        ));
    }

    // Midranks over the pooled scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(is_unknown)
        .filter(|(_, &u)| u)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `truth[i]` is a source-class index, or `num_classes` for an unknown
/// (target-private) sample. `shared` lists the known classes to average over.
pub fn evaluate(
    decisions: &[Decision],
    truth: &[usize],
    num_classes: usize,
    shared: &BTreeSet<usize>,
) -> Result<MetricsReport> {
    if decisions.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} decisions for {} labels",
            decisions.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = truth.iter().find(|&&y| y > num_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes,
        });
    }

    let mut per_class = Vec::new();
    let mut known_total = 0usize;
    let mut known_correct = 0usize;
    for &class in shared {
        let (mut n, mut correct) = (0usize, 0usize);
        for (d, &y) in decisions.iter().zip(truth) {
            if y == class {
                n += 1;
                if d.predicted.encode(num_classes) == class {
                    correct += 1;
                }
            }
        }
        if n == 0 {
            log::warn!("shared class {class} has no target samples; excluded from acc_kn");
            continue;
        }
        per_class.push(100.0 * correct as f64 / n as f64);
        known_total += n;
        known_correct += correct;
    }
    let acc_kn = if per_class.is_empty() {
        f64::NAN
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    let acc = if known_total == 0 {
        f64::NAN
    } else {
        100.0 * known_correct as f64 / known_total as f64
    };

    let is_unknown: Vec<bool> = truth.iter().map(|&y| y == num_classes).collect();
    let n_unk = is_unknown.iter().filter(|&&u| u).count();
    let unk_correct = decisions
        .iter()
        .zip(&is_unknown)
        .filter(|(d, &u)| u && d.predicted.encode(num_classes) == num_classes)
        .count();
    let acc_unk = if n_unk == 0 {
        f64::NAN
    } else {
        100.0 * unk_correct as f64 / n_unk as f64
    };

    let hos = if acc_kn.is_nan() || acc_unk.is_nan() {
        f64::NAN
    } else {
        hos(acc_kn, acc_unk)
    };
    let scores: Vec<f64> = decisions.iter().map(|d| d.paradox_score).collect();
    let auc = if n_unk == 0 || n_unk == truth.len() {
        f64::NAN
    } else {
        auroc(&scores, &is_unknown)?
    };
    Ok(MetricsReport {
        acc_kn,
        acc_unk,
        hos,
        acc,
        auc,
    })
}

pub const METRICS_HEADER: &str = "epoch,acc_kn,acc_unk,hos,acc,auc";

/// Percentages to one decimal place, AUROC to four.
pub fn format_metrics_row(epoch: usize, m: &MetricsReport) -> String {
    format!(
        "{epoch},{:.1},{:.1},{:.1},{:.1},{:.4}",
        m.acc_kn, m.acc_unk, m.hos, m.acc, m.auc
    )
}

pub fn write_metrics_csv<W: Write>(w: &mut W, history: &[MetricsReport]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for (e, m) in history.iter().enumerate() {
        writeln!(w, "{}", format_metrics_row(e + 1, m))?;
    }
    Ok(())
}
