use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::classifier::{train, TrainedModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::problem::{predicted_classes, PerturbProblem, UNLIMITED_BUDGET};
use crate::solvers::{solve_kl, HyperParams};

use super::config::{DatasetSpec, ExperimentConfig};
use super::synthetic::generate_synthetic;

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Synthetic {
            n,
            p,
            k,
            separation,
            seed,
        } => generate_synthetic(*n, *p, *k, *separation, *seed),
        DatasetSpec::Csv { path } => Dataset::read_csv(path),
    }
}

/// Data, trained model and the candidate pool shared by all cells of a sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub train_rows: usize,
    pub model: TrainedModel,
    pub test_accuracy: f64,
    /// Rows of `data` used as candidates, in pool order.
    pub candidates: Vec<usize>,
    /// Candidates as a problem with unlimited budgets.
    pub base: PerturbProblem,
}

/// How the desired class of a candidate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesiredRule {
    /// Binary problems: the class the sample is not in.
    Other,
    Fixed(usize),
}

impl DesiredRule {
    pub fn from_config(cfg: &ExperimentConfig, num_classes: usize) -> Result<Self> {
        match (cfg.desired_class, num_classes) {
            (Some(c), k) if c >= k => Err(Error::invalid(format!(
                "desired_class {c} out of range for {k} classes"
            ))),
            (Some(c), _) => Ok(DesiredRule::Fixed(c)),
            (None, 2) => Ok(DesiredRule::Other),
            (None, k) => Err(Error::invalid(format!(
                "desired_class must be set for a {k}-class problem"
            ))),
        }
    }

    pub fn for_label(self, y: usize) -> usize {
        match self {
            DesiredRule::Other => 1 - y,
            DesiredRule::Fixed(c) => c,
        }
    }
}

/// Test rows predicted correctly into a class other than the desired one,
/// in row order, truncated to `limit`. Returns `(row, desired)` pairs.
pub fn select_candidates(
    model: &TrainedModel,
    test: &Dataset,
    rule: DesiredRule,
    limit: usize,
) -> Result<Vec<(usize, usize)>> {
    let pred = predicted_classes(&model.classifier, test.features.view())?;
    let mut out = Vec::new();
    for (row, (&y, &yhat)) in test.labels.iter().zip(&pred).enumerate() {
        if out.len() == limit {
            break;
        }
        let want = rule.for_label(y);
        if y == yhat && y != want {
            out.push((row, want));
        }
    }
    Ok(out)
}

pub fn perturbable_mask(cfg: &ExperimentConfig, p: usize) -> Result<Vec<bool>> {
    match &cfg.perturbable {
        None => Ok(vec![true; p]),
        Some(idx) => {
            let mut mask = vec![false; p];
            for &i in idx {
                if i >= p {
                    return Err(Error::invalid(format!("perturbable feature {i} out of range for {p} features")));
                }
                mask[i] = true;
            }
            Ok(mask)
        }
    }
}

/// Builds the data, trains the classifier and picks `limit` candidates.
pub fn prepare(cfg: &ExperimentConfig, limit: usize) -> Result<Prepared> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let train_rows = ((data.len() as f64) * cfg.train_fraction).round() as usize;
    if train_rows == 0 || train_rows >= data.len() {
        return Err(Error::invalid("train_fraction leaves an empty train or test split"));
    }
    let (train_set, test_set) = data.split_at(train_rows);
    let model = train(&train_set, &cfg.classifier.train, cfg.classifier.kind)?;
    let test_accuracy = model.classifier.accuracy(&test_set)?;
    let rule = DesiredRule::from_config(cfg, model.classifier.num_classes())?;
    let picked = select_candidates(&model, &test_set, rule, limit)?;
    if picked.len() < limit {
        return Err(Error::invalid(format!(
            "only {} eligible candidates, {limit} requested",
            picked.len()
        )));
    }
    let rows: Vec<usize> = picked.iter().map(|(r, _)| *r).collect();
    let x: Array2<f64> = test_set.features.select(Axis(0), &rows);
    let p = data.num_features();
    let base = PerturbProblem::new(
        x,
        perturbable_mask(cfg, p)?,
        vec![UNLIMITED_BUDGET; p],
        picked.iter().map(|(_, d)| *d).collect(),
        cfg.hyper.delta,
        Arc::new(model.classifier.clone()),
    )?;
    Ok(Prepared {
        candidates: rows.iter().map(|r| r + train_rows).collect(),
        data,
        train_rows,
        model,
        test_accuracy,
        base,
    })
}

/// Reference budget: per-feature total squared deviation of an
/// unconstrained KL run.
pub fn calibrate_budget(prob: &PerturbProblem, hp: &HyperParams) -> Result<Vec<f64>> {
    let unlimited = prob.with_budgets(vec![UNLIMITED_BUDGET; prob.num_features()])?;
    let state = solve_kl(&unlimited, hp)?;
    let dev = prob.sq_deviations(state.xhat.view());
    Ok((0..prob.num_features())
        .map(|i| dev.column(i).iter().sum())
        .collect())
}

pub fn scale_budget(reference: &[f64], level: f64) -> Vec<f64> {
    reference.iter().map(|b| b * level).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                n: 200,
                p: 4,
                k: 2,
                separation: 3.0,
                seed: 5,
            },
            num_samples: 10,
            ..Default::default()
        }
    }

    #[test]
    fn candidates_are_correct_and_not_desired() {
        let cfg = small_cfg();
        let prep = prepare(&cfg, 10).unwrap();
        assert_eq!(prep.base.num_samples(), 10);
        for (j, &row) in prep.candidates.iter().enumerate() {
            let y = prep.data.labels[row];
            assert!(row >= prep.train_rows);
            assert_eq!(prep.model.classifier.predict(prep.data.features.row(row)).unwrap(), y);
            assert_ne!(prep.base.desired()[j], y);
        }
    }

    #[test]
    fn smaller_pools_are_prefixes() {
        let cfg = small_cfg();
        let a = prepare(&cfg, 5).unwrap();
        let b = prepare(&cfg, 10).unwrap();
        assert_eq!(a.candidates[..], b.candidates[..5]);
    }

    #[test]
    fn multiclass_needs_desired_class() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                n: 300,
                p: 4,
                k: 3,
                separation: 4.0,
                seed: 1,
            },
            ..small_cfg()
        };
        assert!(prepare(&cfg, 5).is_err());
        let cfg = ExperimentConfig {
            desired_class: Some(2),
            ..cfg
        };
        let prep = prepare(&cfg, 5).unwrap();
        assert!(prep.base.desired().iter().all(|&d| d == 2));
    }

    #[test]
    fn calibration_is_nonnegative_and_scales() {
        let cfg = small_cfg();
        let prep = prepare(&cfg, 10).unwrap();
        let hp = HyperParams {
            inner_iters: Some(200),
            outer_iters: Some(3),
            ..Default::default()
        };
        let reference = calibrate_budget(&prep.base, &hp).unwrap();
        assert!(reference.iter().all(|b| *b >= 0.0));
        assert!(reference.iter().any(|b| *b > 0.0));
        assert_eq!(scale_budget(&reference, 1.0), reference);
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let cfg = small_cfg();
        assert!(prepare(&cfg, 10_000).is_err());
    }
}
