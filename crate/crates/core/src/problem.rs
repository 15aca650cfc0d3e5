//! Problem instances, constraint evaluators and run metrics.
//!
//! A [`PerturbProblem`] is frozen once built: the original samples, which
//! features may move, per-feature budgets, the desired class of every sample
//! and the confidence margin. Candidate perturbations are passed around as a
//! full `|S| x p` matrix `xhat`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, Classifier, ModelFile};
use crate::error::{Error, Result};

/// Stand-in for an unlimited budget.
pub const UNLIMITED_BUDGET: f64 = 1e9;

#[derive(Debug, Clone)]
pub struct PerturbProblem {
    x: Array2<f64>,
    mask: Vec<bool>,
    budgets: Vec<f64>,
    desired: Vec<usize>,
    delta: f64,
    classifier: Arc<Classifier>,
}

impl PerturbProblem {
    pub fn new(
        x: Array2<f64>,
        mask: Vec<bool>,
        budgets: Vec<f64>,
        desired: Vec<usize>,
        delta: f64,
        classifier: Arc<Classifier>,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        if classifier.num_features() != p {
            return Err(Error::Dimension {
                context: "classifier features vs sample features",
                expected: classifier.num_features(),
                got: p,
            });
        }
        for (context, got) in [("mask", mask.len()), ("budgets", budgets.len())] {
            if got != p {
                return Err(Error::Dimension {
                    context,
                    expected: p,
                    got,
                });
            }
        }
        if desired.len() != n {
            return Err(Error::Dimension {
                context: "desired labels",
                expected: n,
                got: desired.len(),
            });
        }
        if let Some(b) = budgets.iter().find(|b| !(**b >= 0.0) || b.is_nan()) {
            return Err(Error::invalid(format!("budgets must be >= 0, got {b}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
        }
        let k = classifier.num_classes();
        for (j, (row, &want)) in x.rows().into_iter().zip(&desired).enumerate() {
            if want >= k {
                return Err(Error::invalid(format!(
                    "sample {j}: desired class {want} out of range for {k} classes"
                )));
            }
            if classifier.predict(row)? == want {
                return Err(Error::invalid(format!(
                    "sample {j} is already predicted in its desired class {want}"
                )));
            }
        }
        Ok(Self {
            x,
            mask,
            budgets,
            desired,
            delta,
            classifier,
        })
    }

    /// Same instance with different budgets.
    pub fn with_budgets(&self, budgets: Vec<f64>) -> Result<Self> {
        if budgets.len() != self.num_features() {
            return Err(Error::Dimension {
                context: "budgets",
                expected: self.num_features(),
                got: budgets.len(),
            });
        }
        if budgets.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::invalid("budgets must be >= 0"));
        }
        Ok(Self {
            budgets,
            ..self.clone()
        })
    }

    /// The instance restricted to the first `n` samples.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.num_samples());
        Self {
            x: self.x.slice(ndarray::s![..n, ..]).to_owned(),
            desired: self.desired[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn num_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn desired(&self) -> &[usize] {
        &self.desired
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn classifier_arc(&self) -> Arc<Classifier> {
        Arc::clone(&self.classifier)
    }

    /// One-hot encoding of the desired class of sample `j`.
    pub fn target(&self, j: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.num_classes()];
        t[self.desired[j]] = 1.0;
        t
    }

    fn check_shape(&self, xhat: ArrayView2<f64>) -> Result<()> {
        if xhat.dim() != self.x.dim() {
            return Err(Error::invalid(format!(
                "xhat shape {:?} does not match samples {:?}",
                xhat.dim(),
                self.x.dim()
            )));
        }
        Ok(())
    }

    /// Errors if any frozen feature of `xhat` differs from the original.
    pub fn check_frozen(&self, xhat: ArrayView2<f64>) -> Result<()> {
        self.check_shape(xhat)?;
        for ((j, i), v) in xhat.indexed_iter() {
            if !self.mask[i] && *v != self.x[[j, i]] {
                return Err(Error::FrozenDeviation {
                    sample: j,
                    feature: i,
                });
            }
        }
        Ok(())
    }

    /// Squared per-coordinate deviations `(xhat_ij - x_ij)^2`, laid out like `x`.
    pub fn sq_deviations(&self, xhat: ArrayView2<f64>) -> Array2<f64> {
        let mut d = &xhat - &self.x;
        d.mapv_inplace(|v| v * v);
        d
    }

    /// `g_i = sum_j z_j (xhat_ij - x_ij)^2 - B_i` for every feature `i`.
    /// Accepts relaxed `z` in `[0, 1]`.
    pub fn budget_lhs(&self, xhat: ArrayView2<f64>, z: &[f64]) -> Result<Vec<f64>> {
        self.check_frozen(xhat)?;
        if z.len() != self.num_samples() {
            return Err(Error::Dimension {
                context: "selection vector",
                expected: self.num_samples(),
                got: z.len(),
            });
        }
        if let Some(v) = z.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("selection entries must lie in [0, 1], got {v}")));
        }
        let d = self.sq_deviations(xhat);
        Ok((0..self.num_features())
            .map(|i| {
                let used: f64 = z.iter().enumerate().map(|(j, zj)| zj * d[[j, i]]).sum();
                used - self.budgets[i]
            })
            .collect())
    }

    /// Per-feature budget consumed by the samples in `selected`, summed in
    /// ascending sample order.
    pub fn consumption(&self, xhat: ArrayView2<f64>, selected: &[usize]) -> Vec<f64> {
        let mut sorted = selected.to_vec();
        sorted.sort_unstable();
        (0..self.num_features())
            .map(|i| {
                sorted
                    .iter()
                    .map(|&j| {
                        let dev = xhat[[j, i]] - self.x[[j, i]];
                        dev * dev
                    })
                    .sum()
            })
            .collect()
    }

    fn violation_from_probs(&self, probs: &[f64], j: usize) -> (f64, usize) {
        let want = self.desired[j];
        let mut rival = if want == 0 { 1 } else { 0 };
        for (u, &f) in probs.iter().enumerate() {
            if u != want && f > probs[rival] {
                rival = u;
            }
        }
        ((probs[rival] - probs[want] + self.delta).max(0.0), rival)
    }

    /// `max(0, max_{u != desired} f_u - f_desired + delta)` at `xhat_j`.
    pub fn confidence_violation(&self, xhat_j: ArrayView1<f64>, j: usize) -> Result<f64> {
        let probs = self.classifier.predict_proba(xhat_j)?;
        Ok(self.violation_from_probs(&probs, j).0)
    }

    /// Violation and its (sub)gradient with respect to `xhat_j`. Ties in the
    /// inner max resolve to the smallest class index; the gradient is zero
    /// where the violation is zero.
    pub fn confidence_violation_grad(
        &self,
        xhat_j: ArrayView1<f64>,
        j: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let probs = self.classifier.predict_proba(xhat_j)?;
        let (h, rival) = self.violation_from_probs(&probs, j);
        if h <= 0.0 {
            return Ok((0.0, vec![0.0; self.num_features()]));
        }
        let mut w = vec![0.0; self.num_classes()];
        w[rival] = 1.0;
        w[self.desired[j]] = -1.0;
        let grad = self.classifier.input_grad(xhat_j, &w)?;
        Ok((h, grad))
    }

    pub fn violations(&self, xhat: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_shape(xhat)?;
        xhat.rows()
            .into_iter()
            .enumerate()
            .map(|(j, row)| self.confidence_violation(row, j))
            .collect()
    }

    /// Evaluation metrics for a selected set.
    pub fn metrics(&self, xhat: ArrayView2<f64>, selected: &[usize]) -> Result<Metrics> {
        self.check_shape(xhat)?;
        let used = self.consumption(xhat, selected);
        let selected_count = selected.len();
        let empty_selection = selected_count == 0;
        let consumption_per_sample = if empty_selection {
            0.0
        } else {
            used.iter().sum::<f64>() / selected_count as f64
        };

        let residuals: Vec<f64> = (0..self.num_features())
            .filter(|&i| self.mask[i])
            .map(|i| {
                if self.budgets[i] > 0.0 {
                    (self.budgets[i] - used[i]) / self.budgets[i]
                } else if used[i] == 0.0 {
                    1.0
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let mean_budget_residual = if residuals.is_empty() {
            1.0
        } else {
            residuals.iter().sum::<f64>() / residuals.len() as f64
        };

        let mean_prediction_gap = if empty_selection {
            None
        } else {
            let mut total = 0.0;
            for &j in selected {
                let mut probs = self.classifier.predict_proba(xhat.row(j))?;
                probs.sort_by(|a, b| b.total_cmp(a));
                total += probs[0] - probs.get(1).copied().unwrap_or(0.0);
            }
            Some(total / selected_count as f64)
        };

        Ok(Metrics {
            selected_count,
            consumption_per_sample,
            empty_selection,
            mean_budget_residual,
            mean_prediction_gap,
        })
    }
}

/// One row of evaluation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub selected_count: usize,
    /// Total squared deviation of the selected samples divided by their count.
    pub consumption_per_sample: f64,
    /// Set when nothing was selected and the consumption figure is a placeholder.
    pub empty_selection: bool,
    /// Mean over perturbable features of `(B_i - used_i) / B_i`.
    pub mean_budget_residual: f64,
    /// Mean top-two probability gap over the selected samples.
    pub mean_prediction_gap: Option<f64>,
}

/// Disjoint cover of the sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceGroups {
    groups: Vec<Vec<usize>>,
    num_samples: usize,
}

impl SequenceGroups {
    pub fn new(groups: Vec<Vec<usize>>, num_samples: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("at least one group is required"));
        }
        let mut seen = vec![false; num_samples];
        for (r, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::invalid(format!("group {r} is empty")));
            }
            for &j in g {
                if j >= num_samples {
                    return Err(Error::invalid(format!("group {r}: sample {j} out of range")));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::invalid(format!("sample {j} appears in more than one group")));
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("sample {j} is not in any group")));
        }
        Ok(Self {
            groups,
            num_samples,
        })
    }

    pub fn single(num_samples: usize) -> Result<Self> {
        Self::new(vec![(0..num_samples).collect()], num_samples)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Splits the joint budget proportionally to group size. For every feature the
/// left-to-right sum of the group shares equals the joint budget exactly.
///
/// All but the last share are rounded down to a multiple of `q = ulp(b)`.
/// Every partial sum is then a multiple of `q` no larger than `b` and so is
/// representable, which makes the closing share `b - head` and the final
/// addition exact.
pub fn allocate_group_budgets(groups: &SequenceGroups, budgets: &[f64]) -> Vec<Vec<f64>> {
    let total = groups.num_samples as f64;
    let sizes: Vec<f64> = groups.groups.iter().map(|g| g.len() as f64).collect();
    let last = sizes.len() - 1;
    let mut out = vec![vec![0.0; budgets.len()]; sizes.len()];
    for (i, &b) in budgets.iter().enumerate() {
        let q = b.next_up() - b;
        let mut head = 0.0;
        for r in 0..last {
            let share = if q > 0.0 && q.is_finite() {
                (b * (sizes[r] / total) / q).floor() * q
            } else {
                b * (sizes[r] / total)
            };
            out[r][i] = share;
            head += share;
        }
        out[last][i] = b - head;
        debug_assert_eq!(out.iter().map(|s| s[i]).sum::<f64>(), b);
    }
    out
}

/// JSON problem document. `classifier` is a path to a model file, resolved
/// relative to the problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    #[serde(rename = "B")]
    pub budgets: Vec<f64>,
    pub desired: Vec<usize>,
    pub delta: f64,
    pub classifier: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
}

impl ProblemFile {
    pub fn from_problem(prob: &PerturbProblem, classifier: PathBuf) -> Self {
        Self {
            x: prob.x.rows().into_iter().map(|r| r.to_vec()).collect(),
            mask: prob.mask.clone(),
            budgets: prob.budgets.clone(),
            desired: prob.desired.clone(),
            delta: prob.delta,
            classifier,
            groups: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file: ProblemFile = serde_json::from_str(&text)?;
        if file.classifier.is_relative() {
            if let Some(dir) = path.parent() {
                file.classifier = dir.join(&file.classifier);
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn into_problem(self) -> Result<(PerturbProblem, Option<SequenceGroups>)> {
        let model = ModelFile::load(&self.classifier)?.into_model()?;
        self.into_problem_with(Arc::new(model.classifier))
    }

    pub fn into_problem_with(
        self,
        classifier: Arc<Classifier>,
    ) -> Result<(PerturbProblem, Option<SequenceGroups>)> {
        let n = self.x.len();
        let p = self.mask.len();
        if let Some(bad) = self.x.iter().position(|r| r.len() != p) {
            return Err(Error::invalid(format!("row {bad} of X has the wrong length")));
        }
        let x = Array2::from_shape_vec((n, p), self.x.into_iter().flatten().collect())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let groups = self
            .groups
            .map(|g| SequenceGroups::new(g, n))
            .transpose()?;
        let prob = PerturbProblem::new(x, self.mask, self.budgets, self.desired, self.delta, classifier)?;
        Ok((prob, groups))
    }
}

/// Index of the most probable class of every row.
pub fn predicted_classes(classifier: &Classifier, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    x.rows()
        .into_iter()
        .map(|r| Ok(argmax(&classifier.predict_proba(r)?)))
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use ndarray::array;

    /// Two features, two classes; class 1 wins when `x0` is large.
    pub fn toy_classifier() -> Arc<Classifier> {
        Arc::new(Classifier::logistic(array![[0.0, 0.0], [2.0, 0.5]], array![0.0, -1.0]).unwrap())
    }

    pub fn toy_problem(budgets: Vec<f64>) -> PerturbProblem {
        PerturbProblem::new(
            array![[-1.0, 0.0], [-0.5, 1.0], [-2.0, -1.0]],
            vec![true, true],
            budgets,
            vec![1, 1, 1],
            0.1,
            toy_classifier(),
        )
        .unwrap()
    }
}
