//! Two-domain classification problems with shared, source-private and
//! target-private classes, and the flat dataset file format.
//!
//! Global class ids are laid out as shared classes `0..n_shared`, then
//! source-private classes, then target-private classes. Source classes are
//! therefore exactly `0..K`.
//!
//! File format (comma-separated, one sample per line):
//!
//! ```text
//! id,domain,label,f0,f1,...,f{D-1}
//! 0,source,3,0.25,-1.5
//! ```
//!
//! `domain` is `source` or `target` and is the same on every line. Reals are
//! written in Rust's shortest round-trip notation, so a write/read cycle is
//! exact. Target labels are stored for evaluation; training only ever sees
//! [`LabeledDataset::unlabeled`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub n_shared: usize,
    pub n_source_private: usize,
    pub n_target_private: usize,
}

impl LabelSplit {
    pub fn new(n_shared: usize, n_source_private: usize, n_target_private: usize) -> Result<Self> {
        let split = Self {
            n_shared,
            n_source_private,
            n_target_private,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_shared == 0 {
            return Err(Error::InvalidConfig("n_shared must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of source classes `K`.
    pub fn num_source_classes(&self) -> usize {
        self.n_shared + self.n_source_private
    }

    pub fn num_classes_total(&self) -> usize {
        self.num_source_classes() + self.n_target_private
    }

    pub fn source_classes(&self) -> impl Iterator<Item = usize> {
        0..self.num_source_classes()
    }

    pub fn target_classes(&self) -> impl Iterator<Item = usize> {
        let k = self.num_source_classes();
        (0..self.n_shared).chain(k..k + self.n_target_private)
    }
}

impl fmt::Display for LabelSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|Ls∩Lt| = {}, |Ls−Lt| = {}, |Lt−Ls| = {}",
            self.n_shared, self.n_source_private, self.n_target_private
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub ids: Vec<u64>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub domain: Domain,
}

/// Features and ids of a dataset with its labels withheld.
#[derive(Debug, Clone, Copy)]
pub struct Unlabeled<'a> {
    pub ids: &'a [u64],
    pub features: ArrayView2<'a, f64>,
}

impl LabeledDataset {
    pub fn new(
        ids: Vec<u64>,
        features: Array2<f64>,
        labels: Vec<usize>,
        domain: Domain,
    ) -> Result<Self> {
        if ids.len() != features.nrows() || labels.len() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} labels, {} feature rows",
                ids.len(),
                labels.len(),
                features.nrows()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "{} dataset is empty",
                domain.as_str()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{} features", domain.as_str())));
        }
        Ok(Self {
            ids,
            features,
            labels,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn unlabeled(&self) -> Unlabeled<'_> {
        Unlabeled {
            ids: &self.ids,
            features: self.features.view(),
        }
    }
}

/// Per-class Gaussian generators and the target-domain transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// One mean per global class id.
    pub means: Vec<Vec<f64>>,
    /// Isotropic covariance `s·I`; 0 produces noise-free samples.
    pub covariance_scale: f64,
    /// Radians in `[0, 2π)`, applied in every coordinate pair `(0,1), (2,3), …`.
    pub rotation: f64,
    pub translation: Vec<f64>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn input_dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self, split: &LabelSplit) -> Result<()> {
        let need = split.num_classes_total();
        if self.means.len() != need {
            return Err(Error::InvalidConfig(format!(
                "{} class means for {need} classes",
                self.means.len()
            )));
        }
        let dim = self.input_dim();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidConfig(
                "class means must share a non-zero dimension".into(),
            ));
        }
        if self.translation.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "translation has {} entries for dimension {dim}",
                self.translation.len()
            )));
        }
        if !(self.covariance_scale >= 0.0 && self.covariance_scale.is_finite()) {
            return Err(Error::InvalidConfig(
                "covariance_scale must be finite and >= 0".into(),
            ));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.rotation) {
            return Err(Error::InvalidConfig("rotation must lie in [0, 2π)".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig(
                "samples_per_class must be >= 1".into(),
            ));
        }
        let all_finite = self
            .means
            .iter()
            .flatten()
            .chain(&self.translation)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidConfig(
                "means and translation must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Rotation then translation, as applied to every target sample.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = rotate_pairs(x, self.rotation);
        for (o, t) in out.iter_mut().zip(&self.translation) {
            *o += t;
        }
        out
    }
}

/// Rotates each consecutive coordinate pair by `angle`; an odd trailing
/// coordinate is left alone. Every vector in an even dimension turns by
/// exactly `angle`.
pub fn rotate_pairs(x: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = x.to_vec();
    for pair in out.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
    out
}

/// `n` means evenly spaced on a circle of `radius` in the first two
/// coordinates; the remaining coordinates are zero.
pub fn means_on_circle(n: usize, dim: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
    if dim < 2 {
        return Err(Error::InvalidConfig(
            "circle layout needs dimension >= 2".into(),
        ));
    }
    Ok((0..n)
        .map(|c| {
            let theta = std::f64::consts::TAU * c as f64 / n as f64;
            let mut m = vec![0.0; dim];
            m[0] = radius * theta.cos();
            m[1] = radius * theta.sin();
            m
        })
        .collect())
}

/// `n` means drawn uniformly on the sphere of `radius`, rejecting any draw
/// closer than `min_separation` to an earlier mean.
pub fn means_on_sphere<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    radius: f64,
    min_separation: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    const MAX_DRAWS: usize = 100_000;
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be >= 1".into()));
    }
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut draws = 0;
    while means.len() < n {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(Error::InvalidConfig(format!(
                "could not place {n} means on a radius-{radius} sphere in {dim} dims \
                 with separation {min_separation}"
            )));
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let m: Vec<f64> = v.iter().map(|x| radius * x / norm).collect();
        if means.iter().all(|o| euclidean(o, &m) >= min_separation) {
            means.push(m);
        }
    }
    Ok(means)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sample_domain(
    classes: &[usize],
    shift: &ShiftSpec,
    domain: Domain,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let dim = shift.input_dim();
    let sigma = shift.covariance_scale.sqrt();
    let n = classes.len() * shift.samples_per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for &class in classes {
        for _ in 0..shift.samples_per_class {
            let x: Vec<f64> = shift.means[class]
                .iter()
                .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x = match domain {
                Domain::Source => x,
                Domain::Target => shift.transform(&x),
            };
            features.row_mut(row).assign(&ndarray::ArrayView1::from(&x));
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new((0..n as u64).collect(), features, labels, domain)
}

/// Draws the source and target datasets. Source samples come straight from
/// the class Gaussians; target samples are the same Gaussians pushed through
/// [`ShiftSpec::transform`].
pub fn generate(split: &LabelSplit, shift: &ShiftSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    split.validate()?;
    shift.validate(split)?;
    let source_classes: Vec<usize> = split.source_classes().collect();
    let target_classes: Vec<usize> = split.target_classes().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed);
    rng.set_stream(1);
    let source = sample_domain(&source_classes, shift, Domain::Source, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed);
    rng.set_stream(2);
    let target = sample_domain(&target_classes, shift, Domain::Target, &mut rng)?;
    Ok((source, target))
}

/// Mapping from global labels to source-class indices `0..K`, derived from the
/// labels present in the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    to_index: BTreeMap<usize, usize>,
    labels: Vec<usize>,
}

impl ClassMap {
    pub fn from_source(source: &LabeledDataset) -> Self {
        let labels: Vec<usize> = source.label_set().into_iter().collect();
        let to_index = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        Self { to_index, labels }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.to_index.get(&label).copied()
    }

    pub fn label_of(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied()
    }

    pub fn source_indices(&self, source: &LabeledDataset) -> Vec<usize> {
        source.labels.iter().map(|l| self.to_index[l]).collect()
    }

    /// Target ground truth in index space; labels outside the source set
    /// become `K` (unknown).
    pub fn target_truth(&self, target: &LabeledDataset) -> Vec<usize> {
        target
            .labels
            .iter()
            .map(|&l| self.index_of(l).unwrap_or(self.num_classes()))
            .collect()
    }

    /// Source-class indices that also occur in the target.
    pub fn shared_classes(&self, target: &LabeledDataset) -> BTreeSet<usize> {
        target
            .labels
            .iter()
            .filter_map(|&l| self.index_of(l))
            .collect()
    }
}

fn header(dim: usize) -> String {
    let mut h = String::from("id,domain,label");
    for j in 0..dim {
        h.push_str(&format!(",f{j}"));
    }
    h
}

pub fn write_dataset_to<W: Write>(w: &mut W, ds: &LabeledDataset) -> Result<()> {
    writeln!(w, "{}", header(ds.input_dim()))?;
    for (r, row) in ds.features.rows().into_iter().enumerate() {
        write!(w, "{},{},{}", ds.ids[r], ds.domain.as_str(), ds.labels[r])?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    read_dataset_from(BufReader::new(File::open(path)?), path)
}

/// `path` is used in error messages only.
pub fn read_dataset_from<R: BufRead>(reader: R, path: &Path) -> Result<LabeledDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let head = match lines.next() {
        Some(l) => l?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let cols: Vec<&str> = head.trim_end_matches('\r').split(',').collect();
    let dim = cols.len().saturating_sub(3);
    if cols.len() < 4 || head.trim_end_matches('\r') != header(dim) {
        return Err(parse_err(
            1,
            format!("malformed header, expected `id,domain,label,f0,...`, got `{head}`"),
        ));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut domain = None;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(parse_err(
                lineno,
                format!("expected {} columns, found {}", dim + 3, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad id `{}`", fields[0])))?;
        let d = match fields[1] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => return Err(parse_err(lineno, format!("unknown domain `{other}`"))),
        };
        if *domain.get_or_insert(d) != d {
            return Err(parse_err(lineno, "mixed domains in one file".into()));
        }
        let label: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{}`", fields[2])))?;
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric feature `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite feature `{f}`")));
            }
            values.push(v);
        }
        ids.push(id);
        labels.push(label);
    }
    let domain = domain.ok_or_else(|| parse_err(2, "no samples".into()))?;
    let features = Array2::from_shape_vec((ids.len(), dim), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    LabeledDataset::new(ids, features, labels, domain)
}

/// Where the class means are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanLayout {
    /// Uniform on the sphere of `radius`, pairwise at least `min_separation` apart.
    Sphere { radius: f64, min_separation: f64 },
    /// Evenly spaced on a circle in the first two coordinates.
    Circle { radius: f64 },
}

/// A synthetic domain-shift scenario, minus the label split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub input_dim: usize,
    pub layout: MeanLayout,
    pub covariance_scale: f64,
    pub rotation_degrees: f64,
    /// Added to every coordinate of every target sample.
    pub translation: f64,
    pub samples_per_class: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            input_dim: 10,
            layout: MeanLayout::Sphere {
                radius: 5.0,
                min_separation: 4.0,
            },
            covariance_scale: 1.0,
            rotation_degrees: 30.0,
            translation: 0.0,
            samples_per_class: 50,
        }
    }
}

impl Scenario {
    /// Draws the class means from `data_seed` and returns the full shift spec.
    /// Sampling uses other streams of the same seed, so means and samples
    /// never share random numbers.
    pub fn shift_spec(&self, split: &LabelSplit, data_seed: u64) -> Result<ShiftSpec> {
        split.validate()?;
        let n = split.num_classes_total();
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let means = match self.layout {
            MeanLayout::Sphere {
                radius,
                min_separation,
            } => means_on_sphere(n, self.input_dim, radius, min_separation, &mut rng)?,
            MeanLayout::Circle { radius } => means_on_circle(n, self.input_dim, radius)?,
        };
        let rotation = self.rotation_degrees.rem_euclid(360.0).to_radians();
        let spec = ShiftSpec {
            means,
            covariance_scale: self.covariance_scale,
            rotation: if rotation >= std::f64::consts::TAU {
                0.0
            } else {
                rotation
            },
            translation: vec![self.translation; self.input_dim],
            samples_per_class: self.samples_per_class,
            seed: data_seed,
        };
        spec.validate(split)?;
        Ok(spec)
    }
}
