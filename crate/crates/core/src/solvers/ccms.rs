//! Categorical chance-constrained max-samples solver.
//!
//! `pi` lives on the simplex. Each Monte Carlo replicate draws a `|S| x K`
//! Gumbel matrix; every column yields a relaxed one-hot selection via a
//! tempered softmax, and a sample's relaxed selection is the column sum capped
//! at one.

use ndarray::{Array2, ArrayView2};

use super::relax::{categorical_relax_full, PI_FLOOR};
use super::{
    check_finite, init_multipliers, init_xhat, project_nonneg, record_trace, step_xhat, streams,
    violations_with_grads, HyperParams, LagrangianEval, Observer, Selection, SolveOptions,
    SolverKind, SolverState, UpdateEvent,
};
use crate::error::{Error, Result};
use crate::numkit::{gumbel_sample, Rng};
use crate::problem::PerturbProblem;

/// One `|S| x K` Gumbel matrix per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDraws {
    pub g: Vec<Array2<f64>>,
}

impl CategoricalDraws {
    /// Draws replicate by replicate, then sample, then categorical draw.
    pub fn sample(rng: &mut Rng, replicates: usize, num_samples: usize, k: usize) -> Self {
        let g = (0..replicates)
            .map(|_| Array2::from_shape_simple_fn((num_samples, k), || gumbel_sample(rng)))
            .collect();
        Self { g }
    }

    pub fn replicates(&self) -> usize {
        self.g.len()
    }
}

/// Sampled CCMS Lagrangian
/// `1/N sum_n [sum_j v_nj (1 - mu_j h_j) + sum_i lambda_i P_n^i] - (1 - eps) sum_i lambda_i`
/// with gradients in `pi` and `xhat`.
pub fn ccms_lagrangian(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    pi: &[f64],
    lambda: &[f64],
    mu: &[f64],
    hp: &HyperParams,
    draws: &CategoricalDraws,
) -> Result<LagrangianEval> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    if pi.len() != n || mu.len() != n || lambda.len() != p {
        return Err(Error::invalid("ccms lagrangian: inconsistent dimensions"));
    }
    if draws.g.iter().any(|g| g.nrows() != n) {
        return Err(Error::invalid("ccms lagrangian: Gumbel matrices need one row per sample"));
    }
    let ind = hp.indicator();
    let reps = draws.replicates();
    let inv_n = 1.0 / reps as f64;
    let dev = &xhat - &prob.x();
    let sq = dev.mapv(|v| v * v);
    let (h, grad_h) = violations_with_grads(prob, xhat)?;
    let base: Vec<f64> = (0..n).map(|j| 1.0 - mu[j] * h[j]).collect();

    let mut value = 0.0;
    let mut grad_pi = vec![0.0; n];
    let mut prob_estimate = vec![0.0; p];
    let mut mean_selection = vec![0.0; n];
    let mut weighted_slope = Array2::<f64>::zeros((n, p));
    let mut slope = vec![0.0; p];
    let mut w = vec![0.0; n];

    for g in &draws.g {
        let rel = categorical_relax_full(pi, g.view(), hp.omega);
        let v = &rel.values;
        value += inv_n * v.iter().zip(&base).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..p {
            let used: f64 = (0..n).map(|j| v[j] * sq[[j, i]]).sum();
            let (s, ds) = hp.budget_indicator(&ind, used, prob.budgets()[i]);
            value += inv_n * lambda[i] * s;
            prob_estimate[i] += inv_n * s;
            slope[i] = ds;
        }
        for j in 0..n {
            mean_selection[j] += inv_n * v[j];
            let mut acc = base[j];
            for i in 0..p {
                acc += lambda[i] * slope[i] * sq[[j, i]];
                weighted_slope[[j, i]] += v[j] * slope[i];
            }
            // no gradient through the active min(1, .) clamp
            w[j] = if rel.clamped[j] { 0.0 } else { acc };
        }
        for col in rel.weights.columns() {
            let avg: f64 = col.iter().zip(&w).map(|(s, wj)| s * wj).sum();
            for (k, s) in col.iter().enumerate() {
                grad_pi[k] += inv_n * s * (w[k] - avg) / (hp.omega * pi[k].max(PI_FLOOR));
            }
        }
    }
    value -= (1.0 - hp.epsilon) * lambda.iter().sum::<f64>();

    let mut grad_xhat = Array2::zeros((n, p));
    for j in 0..n {
        for i in 0..p {
            if prob.mask()[i] {
                grad_xhat[[j, i]] = -mean_selection[j] * mu[j] * grad_h[[j, i]]
                    + inv_n * lambda[i] * weighted_slope[[j, i]] * 2.0 * dev[[j, i]];
            }
        }
    }
    Ok(LagrangianEval {
        value,
        grad_pi,
        grad_xhat,
        prob_estimate,
        mean_selection,
        violations: h,
    })
}

/// `(pi)^+` followed by renormalization; falls back to uniform if every entry
/// was clipped.
pub(crate) fn project_simplex_by_normalization(pi: &mut [f64]) {
    project_nonneg(pi);
    let sum: f64 = pi.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for v in pi.iter_mut() {
            *v /= sum;
        }
    } else {
        let u = 1.0 / pi.len() as f64;
        pi.fill(u);
    }
}

pub(super) fn solve(
    prob: &PerturbProblem,
    hp: &HyperParams,
    opts: &SolveOptions,
    observer: &mut dyn Observer,
) -> Result<SolverState> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    let k = hp.k_for(n);
    let (lambda, mu) = init_multipliers(hp, p, n);
    let mut pi = vec![1.0 / n as f64; n];
    let mut state = SolverState {
        kind: SolverKind::Ccms,
        xhat: init_xhat(prob, hp, opts)?,
        selection: Selection::Categorical(pi.clone()),
        lambda,
        mu,
        outer_done: 0,
        inner_done: 0,
        trace: Vec::new(),
    };
    let inner_iters = hp.inner_for(SolverKind::Ccms);

    for t in 0..hp.outer_for(SolverKind::Ccms) {
        for s in 0..inner_iters {
            let mut rng = Rng::derive(hp.seed, &[streams::GUMBEL, t as u64, s as u64]);
            let draws = CategoricalDraws::sample(&mut rng, hp.n_samples, n, k);
            let eval = ccms_lagrangian(prob, state.xhat.view(), &pi, &state.lambda, &state.mu, hp, &draws)?;
            check_finite(eval.value, state.xhat.view(), t, s)?;
            for (pj, g) in pi.iter_mut().zip(&eval.grad_pi) {
                *pj += hp.alpha * g;
            }
            project_simplex_by_normalization(&mut pi);
            step_xhat(&mut state.xhat, &eval.grad_xhat, hp.beta, prob.mask());
            check_finite(0.0, state.xhat.view(), t, s)?;
            state.selection = Selection::Categorical(pi.clone());
            state.inner_done += 1;
            observer.after_update(UpdateEvent::Inner { outer: t, inner: s }, &state);
        }

        let mut rng = Rng::derive(hp.seed, &[streams::GUMBEL, t as u64, inner_iters as u64]);
        let draws = CategoricalDraws::sample(&mut rng, hp.n_samples, n, k);
        let eval = ccms_lagrangian(prob, state.xhat.view(), &pi, &state.lambda, &state.mu, hp, &draws)?;
        check_finite(eval.value, state.xhat.view(), t, inner_iters)?;
        let (gamma, eta) = hp.multiplier_rates(t);
        let mu_grad: Vec<f64> = (0..n).map(|j| -eval.mean_selection[j] * eval.violations[j]).collect();
        for (l, pr) in state.lambda.iter_mut().zip(&eval.prob_estimate) {
            *l -= gamma * (pr - (1.0 - hp.epsilon));
        }
        for (m, g) in state.mu.iter_mut().zip(&mu_grad) {
            *m -= eta * g;
        }
        project_nonneg(&mut state.lambda);
        project_nonneg(&mut state.mu);
        state.outer_done = t + 1;
        observer.after_update(UpdateEvent::Outer { outer: t }, &state);
        record_trace(&mut state, prob, t, eval.value, &mu_grad)?;
    }
    Ok(state)
}
