//! Experiment configuration: a TOML file with one section per concern.
//!
//! Exactly one of `[data]` (dataset files) or `[synth]` (generated scenario)
//! must be present. Unknown keys are errors. Every other field has a default,
//! and the resolved configuration is written next to the outputs so a run
//! can be repeated from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uacp::data::{read_dataset, LabelSplit, LabeledDataset, MeanLayout, Scenario};
use uacp::losses::LossWeights;
use uacp::seed::{derive_seed, SeedStream};
use uacp::trainer::{InverseSchedule, LossToggles, ModelConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_shared: usize,
    pub n_source_private: usize,
    pub n_target_private: usize,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::covariance_scale")]
    pub covariance_scale: f64,
    #[serde(default = "defaults::rotation_degrees")]
    pub rotation_degrees: f64,
    #[serde(default)]
    pub translation: f64,
    #[serde(default = "defaults::samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "defaults::layout")]
    pub layout: MeanLayout,
}

impl SynthSection {
    pub fn split(&self) -> Result<LabelSplit, CliError> {
        Ok(LabelSplit::new(
            self.n_shared,
            self.n_source_private,
            self.n_target_private,
        )?)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            input_dim: self.input_dim,
            layout: self.layout,
            covariance_scale: self.covariance_scale,
            rotation_degrees: self.rotation_degrees,
            translation: self.translation,
            samples_per_class: self.samples_per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub lr_head: f64,
    pub lr_extractor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule_a: f64,
    pub schedule_b: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            tau: t.tau,
            lr_head: t.lr_head,
            lr_extractor: t.lr_extractor,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            schedule_a: t.schedule.a,
            schedule_b: t.schedule.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub disable_esl: bool,
    pub disable_sfc: bool,
    pub disable_tova: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            margin: w.margin,
            disable_esl: false,
            disable_sfc: false,
            disable_tova: false,
        }
    }
}

impl LossSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            margin: self.margin,
        }
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            esl: !self.disable_esl,
            sfc: !self.disable_sfc,
            tova: !self.disable_tova,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Target-private class counts, one training run per value.
    pub target_private: Vec<usize>,
    /// Root seeds are `seed, seed + 1, …, seed + repeats − 1`.
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            target_private: vec![5, 15, 25],
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

mod defaults {
    use uacp::data::{MeanLayout, Scenario};

    pub fn input_dim() -> usize {
        Scenario::default().input_dim
    }
    pub fn covariance_scale() -> f64 {
        Scenario::default().covariance_scale
    }
    pub fn rotation_degrees() -> f64 {
        Scenario::default().rotation_degrees
    }
    pub fn samples_per_class() -> usize {
        Scenario::default().samples_per_class
    }
    pub fn layout() -> MeanLayout {
        Scenario::default().layout
    }
}

/// The source and target sets an experiment runs on.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub split: Option<LabelSplit>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either [data] or [synth], not both".into(),
                ));
            }
            (None, None) => {
                return Err(CliError::Config(
                    "one of [data] or [synth] is required".into(),
                ))
            }
            (None, Some(s)) => {
                s.split()?;
            }
            (Some(_), None) => {}
        }
        self.train_config(self.seed).validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            weights: self.loss.weights(),
            toggles: self.loss.toggles(),
            tau: t.tau,
            lr_head: t.lr_head,
            lr_extractor: t.lr_extractor,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            schedule: InverseSchedule {
                a: t.schedule_a,
                b: t.schedule_b,
            },
            model: self.model.clone(),
            seed,
        }
    }

    /// Reads the dataset files, or generates the scenario from the root seed.
    pub fn datasets(&self, seed: u64) -> Result<Datasets, CliError> {
        if let Some(d) = &self.data {
            return Ok(Datasets {
                source: read_dataset(&d.source)?,
                target: read_dataset(&d.target)?,
                split: None,
            });
        }
        let synth = self.synth.as_ref().expect("validated");
        let split = synth.split()?;
        let spec = synth
            .scenario()
            .shift_spec(&split, derive_seed(seed, SeedStream::Data))?;
        let (source, target) = uacp::data::generate(&split, &spec)?;
        Ok(Datasets {
            source,
            target,
            split: Some(split),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[synth]\nn_shared = 3\nn_source_private = 1\nn_target_private = 2\n";

    #[test]
    fn defaults_fill_everything_but_the_split() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.train, TrainSection::default());
        assert_eq!(cfg.synth.as_ref().unwrap().input_dim, 10);
        assert_eq!(cfg.train_config(0), TrainConfig::default());
    }

    #[test]
    fn missing_split_field_is_named() {
        let err =
            ExperimentConfig::parse("[synth]\nn_shared = 3\nn_source_private = 1\n").unwrap_err();
        assert!(err.to_string().contains("n_target_private"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse(&format!("{MINIMAL}[train]\nlearning_rate = 0.1\n"))
            .unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn exactly_one_data_source() {
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
        let both = format!("{MINIMAL}[data]\nsource = \"a\"\ntarget = \"b\"\n");
        assert!(ExperimentConfig::parse(&both).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = format!(
            "{MINIMAL}rotation_degrees = 45.0\n[synth.layout]\nkind = \"circle\"\nradius = 3.0\n\
             [loss]\ndisable_esl = true\n[model]\nhidden = [8, 8]\nfeature_dim = 4\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert!(!again.loss.toggles().esl);
    }

    #[test]
    fn invalid_training_values_are_rejected() {
        let err =
            ExperimentConfig::parse(&format!("{MINIMAL}[train]\nbatch_size = 1\n")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
