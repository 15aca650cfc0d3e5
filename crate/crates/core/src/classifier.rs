//! Differentiable classifiers with analytic input gradients.
//!
//! Two model families are supported: multinomial logistic regression and a
//! one-hidden-layer tanh network, both with a softmax head. Every gradient the
//! solvers need is a gradient of some functional of the class probabilities
//! with respect to the *input*, so each model exposes [`Classifier::backprop`]
//! which maps a gradient over logits to a gradient over features.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{softmax_unchecked, Rng};

/// Floor applied to predicted probabilities inside the KL divergence.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    /// `logits = W x + b`, `W` is k x p.
    Logistic { w: Array2<f64>, b: Array1<f64> },
    /// `logits = W2 tanh(W1 x + b1) + b2`, `W1` is h x p, `W2` is k x h.
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

/// Forward pass intermediates needed for backprop.
struct Forward {
    hidden: Option<Array1<f64>>,
    probs: Vec<f64>,
}

impl Classifier {
    pub fn logistic(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::Dimension {
                context: "logistic bias",
                expected: w.nrows(),
                got: b.len(),
            });
        }
        Ok(Classifier::Logistic { w, b })
    }

    pub fn mlp(w1: Array2<f64>, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64>) -> Result<Self> {
        if w1.nrows() != b1.len() || w2.ncols() != w1.nrows() || w2.nrows() != b2.len() {
            return Err(Error::invalid("inconsistent mlp layer shapes"));
        }
        Ok(Classifier::Mlp { w1, b1, w2, b2 })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Logistic { .. } => ModelKind::Logistic,
            Classifier::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            Classifier::Logistic { w, .. } => w.ncols(),
            Classifier::Mlp { w1, .. } => w1.ncols(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Classifier::Logistic { b, .. } => b.len(),
            Classifier::Mlp { b2, .. } => b2.len(),
        }
    }

    pub fn hidden_width(&self) -> usize {
        match self {
            Classifier::Logistic { .. } => 0,
            Classifier::Mlp { b1, .. } => b1.len(),
        }
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.num_features() {
            return Err(Error::Dimension {
                context: "classifier input",
                expected: self.num_features(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier input"));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView1<f64>) -> Forward {
        match self {
            Classifier::Logistic { w, b } => {
                let logits = w.dot(&x) + b;
                Forward {
                    hidden: None,
                    probs: softmax_unchecked(logits.as_slice().unwrap()),
                }
            }
            Classifier::Mlp { w1, b1, w2, b2 } => {
                let hidden = (w1.dot(&x) + b1).mapv(f64::tanh);
                let logits = w2.dot(&hidden) + b2;
                Forward {
                    probs: softmax_unchecked(logits.as_slice().unwrap()),
                    hidden: Some(hidden),
                }
            }
        }
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(match self {
            Classifier::Logistic { w, b } => (w.dot(&x) + b).to_vec(),
            Classifier::Mlp { w1, b1, w2, b2 } => {
                let hidden = (w1.dot(&x) + b1).mapv(f64::tanh);
                (w2.dot(&hidden) + b2).to_vec()
            }
        })
    }

    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).probs)
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    fn backprop_from(&self, fwd: &Forward, grad_logits: &[f64]) -> Vec<f64> {
        let g = ArrayView1::from(grad_logits);
        match self {
            Classifier::Logistic { w, .. } => w.t().dot(&g).to_vec(),
            Classifier::Mlp { w1, w2, .. } => {
                let hidden = fwd.hidden.as_ref().expect("mlp forward keeps hidden");
                let g_hidden = w2.t().dot(&g);
                let g_pre = &g_hidden * &hidden.mapv(|a| 1.0 - a * a);
                w1.t().dot(&g_pre).to_vec()
            }
        }
    }

    /// Maps a gradient with respect to the logits at `x` to one with respect to `x`.
    pub fn backprop(&self, x: ArrayView1<f64>, grad_logits: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if grad_logits.len() != self.num_classes() {
            return Err(Error::Dimension {
                context: "logit gradient",
                expected: self.num_classes(),
                got: grad_logits.len(),
            });
        }
        let fwd = self.forward(x);
        Ok(self.backprop_from(&fwd, grad_logits))
    }

    /// Probabilities at `x` and the gradient of `sum_u weights[u] * f(x)_u`.
    pub fn proba_and_input_grad(
        &self,
        x: ArrayView1<f64>,
        weights: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        if weights.len() != self.num_classes() {
            return Err(Error::Dimension {
                context: "class weights",
                expected: self.num_classes(),
                got: weights.len(),
            });
        }
        let fwd = self.forward(x);
        let mean: f64 = weights.iter().zip(&fwd.probs).map(|(w, f)| w * f).sum();
        let grad_logits: Vec<f64> = fwd
            .probs
            .iter()
            .zip(weights)
            .map(|(f, w)| f * (w - mean))
            .collect();
        let grad = self.backprop_from(&fwd, &grad_logits);
        Ok((fwd.probs, grad))
    }

    /// `grad_x sum_u weights[u] * f(x)_u`.
    pub fn input_grad(&self, x: ArrayView1<f64>, weights: &[f64]) -> Result<Vec<f64>> {
        Ok(self.proba_and_input_grad(x, weights)?.1)
    }

    /// `KL(target || f(x))` and its gradient with respect to `x`.
    ///
    /// The gradient is exact when no probability hits [`PROB_FLOOR`].
    pub fn kl_and_grad(&self, x: ArrayView1<f64>, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let fwd = self.forward(x);
        let kl = kl_divergence(target, &fwd.probs)?;
        let total: f64 = target.iter().sum();
        let grad_logits: Vec<f64> = fwd
            .probs
            .iter()
            .zip(target)
            .map(|(f, t)| total * f - t)
            .collect();
        Ok((kl, self.backprop_from(&fwd, &grad_logits)))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (row, &y) in data.features.rows().into_iter().zip(&data.labels) {
            if self.predict(row)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `sum_u target_u ln(target_u / pred_u)` with `0 ln 0 = 0`; predictions are
/// floored at [`PROB_FLOOR`].
pub fn kl_divergence(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Dimension {
            context: "kl divergence",
            expected: target.len(),
            got: pred.len(),
        });
    }
    let mut kl = 0.0;
    for (&t, &q) in target.iter().zip(pred) {
        if t > 0.0 {
            let q = if q < PROB_FLOOR {
                warn!("kl divergence: prediction {q:e} floored at {PROB_FLOOR:e}");
                PROB_FLOOR
            } else {
                q
            };
            kl += t * (t / q).ln();
        }
    }
    Ok(kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    /// Hidden width for [`ModelKind::Mlp`]; ignored for logistic models.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            l2: 1e-3,
            hidden: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub classifier: Classifier,
    pub seed: u64,
    pub train_accuracy: f64,
}

/// Mini-batch gradient descent on mean cross-entropy plus `l2/2 * |W|^2`.
pub fn train(data: &Dataset, cfg: &TrainConfig, kind: ModelKind) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut seen = data.labels.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::invalid("training data must contain at least two classes"));
    }
    let (n, p, k) = (data.len(), data.num_features(), data.num_classes());
    let mut rng = Rng::new(cfg.seed);
    let mut model = match kind {
        ModelKind::Logistic => Classifier::Logistic {
            w: Array2::zeros((k, p)),
            b: Array1::zeros(k),
        },
        ModelKind::Mlp => {
            let h = cfg.hidden.max(1);
            let s1 = (1.0 / p as f64).sqrt();
            let s2 = (1.0 / h as f64).sqrt();
            Classifier::Mlp {
                w1: Array2::from_shape_fn((h, p), |_| s1 * rng.normal()),
                b1: Array1::zeros(h),
                w2: Array2::from_shape_fn((k, h), |_| s2 * rng.normal()),
                b2: Array1::zeros(k),
            }
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            sgd_step(&mut model, data, batch, cfg);
        }
    }
    if model_params_non_finite(&model) {
        return Err(Error::NonFinite("trained weights (reduce the learning rate)"));
    }
    let train_accuracy = model.accuracy(data)?;
    Ok(TrainedModel {
        classifier: model,
        seed: cfg.seed,
        train_accuracy,
    })
}

fn model_params_non_finite(model: &Classifier) -> bool {
    match model {
        Classifier::Logistic { w, b } => w.iter().chain(b.iter()).any(|v| !v.is_finite()),
        Classifier::Mlp { w1, b1, w2, b2 } => w1
            .iter()
            .chain(b1.iter())
            .chain(w2.iter())
            .chain(b2.iter())
            .any(|v| !v.is_finite()),
    }
}

fn sgd_step(model: &mut Classifier, data: &Dataset, batch: &[usize], cfg: &TrainConfig) {
    let scale = cfg.learning_rate / batch.len() as f64;
    match model {
        Classifier::Logistic { w, b } => {
            let mut gw = Array2::<f64>::zeros(w.raw_dim());
            let mut gb = Array1::<f64>::zeros(b.len());
            for &i in batch {
                let x = data.features.row(i);
                let logits = w.dot(&x) + &*b;
                let mut g = Array1::from(softmax_unchecked(logits.as_slice().unwrap()));
                g[data.labels[i]] -= 1.0;
                for (u, gu) in g.iter().enumerate() {
                    gw.row_mut(u).scaled_add(*gu, &x);
                }
                gb += &g;
            }
            w.zip_mut_with(&gw, |wv, gv| *wv -= scale * gv + cfg.learning_rate * cfg.l2 * *wv);
            b.scaled_add(-scale, &gb);
        }
        Classifier::Mlp { w1, b1, w2, b2 } => {
            let mut gw1 = Array2::<f64>::zeros(w1.raw_dim());
            let mut gb1 = Array1::<f64>::zeros(b1.len());
            let mut gw2 = Array2::<f64>::zeros(w2.raw_dim());
            let mut gb2 = Array1::<f64>::zeros(b2.len());
            for &i in batch {
                let x = data.features.row(i);
                let hidden = (w1.dot(&x) + &*b1).mapv(f64::tanh);
                let logits = w2.dot(&hidden) + &*b2;
                let mut g = Array1::from(softmax_unchecked(logits.as_slice().unwrap()));
                g[data.labels[i]] -= 1.0;
                for (u, gu) in g.iter().enumerate() {
                    gw2.row_mut(u).scaled_add(*gu, &hidden);
                }
                gb2 += &g;
                let g_pre = w2.t().dot(&g) * hidden.mapv(|a| 1.0 - a * a);
                for (r, gr) in g_pre.iter().enumerate() {
                    gw1.row_mut(r).scaled_add(*gr, &x);
                }
                gb1 += &g_pre;
            }
            let decay = cfg.learning_rate * cfg.l2;
            w1.zip_mut_with(&gw1, |wv, gv| *wv -= scale * gv + decay * *wv);
            w2.zip_mut_with(&gw2, |wv, gv| *wv -= scale * gv + decay * *wv);
            b1.scaled_add(-scale, &gb1);
            b2.scaled_add(-scale, &gb2);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub p: usize,
    pub k: usize,
    pub h: usize,
}

/// On-disk model document. Weights are flat row-major arrays; `serde_json`
/// writes the shortest decimal that round-trips, so reloads are bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub weights: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
    pub train_accuracy: f64,
}

fn take_block(
    weights: &BTreeMap<String, Vec<f64>>,
    name: &str,
    shape: (usize, usize),
) -> Result<Array2<f64>> {
    let flat = weights
        .get(name)
        .ok_or_else(|| Error::invalid(format!("model file missing weight block {name:?}")))?;
    Array2::from_shape_vec(shape, flat.clone())
        .map_err(|_| Error::invalid(format!("weight block {name:?} has wrong length")))
}

fn take_vec(weights: &BTreeMap<String, Vec<f64>>, name: &str, len: usize) -> Result<Array1<f64>> {
    Ok(take_block(weights, name, (1, len))?.into_shape_with_order(len).unwrap())
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel) -> Self {
        let c = &model.classifier;
        let mut weights = BTreeMap::new();
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        match c {
            Classifier::Logistic { w, b } => {
                weights.insert("w".to_string(), flat(w));
                weights.insert("b".to_string(), b.to_vec());
            }
            Classifier::Mlp { w1, b1, w2, b2 } => {
                weights.insert("w1".to_string(), flat(w1));
                weights.insert("b1".to_string(), b1.to_vec());
                weights.insert("w2".to_string(), flat(w2));
                weights.insert("b2".to_string(), b2.to_vec());
            }
        }
        ModelFile {
            kind: c.kind(),
            dims: ModelDims {
                p: c.num_features(),
                k: c.num_classes(),
                h: c.hidden_width(),
            },
            weights,
            seed: model.seed,
            train_accuracy: model.train_accuracy,
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        let ModelDims { p, k, h } = self.dims;
        let classifier = match self.kind {
            ModelKind::Logistic => Classifier::logistic(
                take_block(&self.weights, "w", (k, p))?,
                take_vec(&self.weights, "b", k)?,
            )?,
            ModelKind::Mlp => Classifier::mlp(
                take_block(&self.weights, "w1", (h, p))?,
                take_vec(&self.weights, "b1", h)?,
                take_block(&self.weights, "w2", (k, h))?,
                take_vec(&self.weights, "b2", k)?,
            )?,
        };
        Ok(TrainedModel {
            classifier,
            seed: self.seed,
            train_accuracy: self.train_accuracy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad, max_rel_error};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};

    fn random_logistic(rng: &mut Rng, p: usize, k: usize) -> Classifier {
        Classifier::logistic(
            Array::from_shape_fn((k, p), |_| rng.normal()),
            Array::from_shape_fn(k, |_| rng.normal()),
        )
        .unwrap()
    }

    fn random_mlp(rng: &mut Rng, p: usize, k: usize, h: usize) -> Classifier {
        Classifier::mlp(
            Array::from_shape_fn((h, p), |_| rng.normal()),
            Array::from_shape_fn(h, |_| rng.normal()),
            Array::from_shape_fn((k, h), |_| rng.normal()),
            Array::from_shape_fn(k, |_| rng.normal()),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let c = Classifier::logistic(Array2::zeros((4, 3)), Array1::zeros(4)).unwrap();
        let f = c.predict_proba(array![1.0, -2.0, 5.0].view()).unwrap();
        for v in f {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_class_hand_values() {
        let c = Classifier::logistic(array![[0.0, 0.0], [1.0, 0.0]], array![0.0, 0.0]).unwrap();
        let f = c.predict_proba(array![0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(f[0], 0.5);
        let f = c.predict_proba(array![1.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(f[0], 0.26894, epsilon = 1e-5);
        assert_abs_diff_eq!(f[1], 0.73106, epsilon = 1e-5);
        assert!(c.predict_proba(array![1.0].view()).is_err());
    }

    #[test]
    fn input_grad_trivial_weights() {
        let mut rng = Rng::new(3);
        let c = random_mlp(&mut rng, 4, 3, 5);
        let x = array![0.3, -0.2, 1.0, 0.5];
        for w in [[0.0; 3], [1.0; 3]] {
            let g = c.input_grad(x.view(), &w).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
        }
        assert!(c.input_grad(x.view(), &[1.0]).is_err());
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for trial in 0..100 {
            let (p, k) = (1 + rng.index(6), 2 + rng.index(4));
            let c = if trial % 2 == 0 {
                random_logistic(&mut rng, p, k)
            } else {
                let h = 1 + rng.index(6);
                random_mlp(&mut rng, p, k, h)
            };
            let x: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let g = c.input_grad(ArrayView1::from(&x), &w).unwrap();
            let fd = finite_diff_grad(
                |v| {
                    let f = c.predict_proba(ArrayView1::from(v)).unwrap();
                    f.iter().zip(&w).map(|(a, b)| a * b).sum()
                },
                &x,
                1e-5,
            );
            let err = max_rel_error(&g, &fd, 1e-6);
            assert!(err < 1e-4, "trial {trial}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn kl_examples() {
        assert_abs_diff_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
        // 0.7 ln 1.4 + 0.3 ln 0.6
        assert_abs_diff_eq!(
            kl_divergence(&[0.7, 0.3], &[0.5, 0.5]).unwrap(),
            0.08228,
            epsilon = 1e-5
        );
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap().is_finite());
    }

    #[test]
    fn kl_grad_matches_finite_differences() {
        let mut rng = Rng::new(23);
        for _ in 0..30 {
            let c = random_mlp(&mut rng, 3, 3, 4);
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let target = [0.0, 1.0, 0.0];
            let (_, g) = c.kl_and_grad(ArrayView1::from(&x), &target).unwrap();
            let fd = finite_diff_grad(
                |v| c.kl_and_grad(ArrayView1::from(v), &target).unwrap().0,
                &x,
                1e-5,
            );
            assert!(max_rel_error(&g, &fd, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn logit_shift_invariance() {
        let mut rng = Rng::new(5);
        let c = random_logistic(&mut rng, 3, 4);
        let Classifier::Logistic { w, b } = &c else { unreachable!() };
        let shifted = Classifier::logistic(w.clone(), b + 12.5).unwrap();
        let x = array![0.1, 0.2, -0.3];
        let (f, g) = (c.predict_proba(x.view()).unwrap(), shifted.predict_proba(x.view()).unwrap());
        for (a, b) in f.iter().zip(&g) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -2.0 } else { 2.0 };
            values.push(c + rng.normal());
            values.push(c + rng.normal());
            labels.push(y);
        }
        Dataset::new(Array2::from_shape_vec((n, 2), values).unwrap(), labels).unwrap()
    }

    #[test]
    fn trains_separable_blobs() {
        let data = blobs(200, 1);
        let cfg = TrainConfig::default();
        let m = train(&data, &cfg, ModelKind::Logistic).unwrap();
        assert!(m.train_accuracy >= 0.95, "{}", m.train_accuracy);
        let m2 = train(&data, &cfg, ModelKind::Logistic).unwrap();
        assert_eq!(m, m2);
        let mlp = train(&data, &cfg, ModelKind::Mlp).unwrap();
        assert!(mlp.train_accuracy >= 0.95);
    }

    #[test]
    fn train_rejects_bad_input() {
        let data = blobs(20, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&data, &cfg, ModelKind::Logistic).is_err());
        let single = data.select(&[0, 2, 4]);
        assert!(train(&single, &TrainConfig::default(), ModelKind::Logistic).is_err());
    }

    #[test]
    fn model_file_round_trip_bit_exact() {
        let data = blobs(60, 9);
        let m = train(&data, &TrainConfig::default(), ModelKind::Mlp).unwrap();
        let file = ModelFile::from_model(&m);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_model().unwrap(), m);
    }
}
