use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::solvers::{HyperParams, SolverKind};

/// Where the labelled data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        p: usize,
        k: usize,
        separation: f64,
        seed: u64,
    },
    /// Feature columns followed by a `label` column. Relative paths are
    /// resolved against the config file.
    Csv { path: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            n: 600,
            p: 10,
            k: 2,
            separation: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ModelKind,
    pub train: TrainConfig,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logistic,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Leading fraction of the rows used for training; the rest is the pool
    /// candidates are drawn from.
    pub train_fraction: f64,
    pub classifier: ClassifierSpec,
    /// Target class. Binary problems default to the other class; multiclass
    /// problems must name one.
    pub desired_class: Option<usize>,
    /// Perturbable feature indices; `None` means all.
    pub perturbable: Option<Vec<usize>>,
    /// Candidate count for the budget sweep.
    pub num_samples: usize,
    /// Nested candidate counts for the scalability sweep.
    pub sample_sizes: Vec<usize>,
    /// Scale factors applied to the calibrated reference budget.
    pub budget_levels: Vec<f64>,
    /// Scale factor used by the scalability sweep.
    pub scale_budget_level: f64,
    pub solvers: Vec<SolverKind>,
    pub seeds: Vec<u64>,
    pub hyper: HyperParams,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            train_fraction: 0.5,
            classifier: ClassifierSpec::default(),
            desired_class: None,
            perturbable: None,
            num_samples: 60,
            sample_sizes: vec![20, 40, 60],
            budget_levels: vec![0.4, 0.6, 0.8],
            scale_budget_level: 0.6,
            solvers: SolverKind::ALL.to_vec(),
            seeds: (0..5).collect(),
            hyper: HyperParams::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config and resolves a relative CSV dataset path against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let DatasetSpec::Csv { path: csv } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        if self.budget_levels.is_empty() {
            return Err(Error::invalid("at least one budget level is required"));
        }
        if let Some(l) = self
            .budget_levels
            .iter()
            .chain([&self.scale_budget_level])
            .find(|l| !(**l > 0.0 && l.is_finite()))
        {
            return Err(Error::invalid(format!("budget levels must be > 0, got {l}")));
        }
        if self.solvers.is_empty() {
            return Err(Error::invalid("at least one solver is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples must be >= 1"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) || self.sample_sizes.first() == Some(&0) {
            return Err(Error::invalid("sample_sizes must be positive and strictly increasing"));
        }
        for (name, list) in [("solvers", dedup_check(&self.solvers)), ("seeds", dedup_check(&self.seeds))] {
            if !list {
                return Err(Error::invalid(format!("{name} contains duplicates")));
            }
        }
        if !dedup_check(&self.budget_levels.iter().map(|l| l.to_bits()).collect::<Vec<_>>()) {
            return Err(Error::invalid("budget_levels contains duplicates"));
        }
        self.classifier.train.validate()?;
        self.hyper.validate()
    }
}

fn dedup_check<T: Ord + Clone>(items: &[T]) -> bool {
    let mut v = items.to_vec();
    v.sort();
    v.windows(2).all(|w| w[0] != w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_the_default() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Csv { path: "d.csv".into() },
            desired_class: Some(1),
            ..Default::default()
        };
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            ExperimentConfig { budget_levels: vec![0.4, 0.0], ..Default::default() },
            ExperimentConfig { budget_levels: vec![], ..Default::default() },
            ExperimentConfig { solvers: vec![], ..Default::default() },
            ExperimentConfig { seeds: vec![1, 1], ..Default::default() },
            ExperimentConfig { sample_sizes: vec![40, 20], ..Default::default() },
            ExperimentConfig { train_fraction: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
