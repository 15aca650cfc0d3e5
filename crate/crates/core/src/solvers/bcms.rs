//! Bernoulli chance-constrained max-samples solver.
//!
//! Selections are independent Bernoulli(`pi_j`). The objective term is linear
//! in `pi`; the budget chance constraints are estimated from `N` relaxed
//! replicates `v_nj` driven by Gumbel pairs, pushed through the smooth
//! indicator. Gradients flow through the relaxation and the indicator
//! analytically.

use ndarray::{Array2, ArrayView2};

use super::relax::bernoulli_relax_with_grad;
use super::{
    check_finite, init_multipliers, init_xhat, project_nonneg, record_trace, step_xhat,
    violations_with_grads, HyperParams, LagrangianEval, Observer, Selection, SolveOptions,
    SolverKind, SolverState, UpdateEvent, streams,
};
use crate::error::{Error, Result};
use crate::numkit::{gumbel_sample, Rng};
use crate::problem::PerturbProblem;

/// Gumbel pairs for one Lagrangian evaluation, each `N x |S|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliDraws {
    pub g1: Array2<f64>,
    pub g2: Array2<f64>,
}

impl BernoulliDraws {
    /// Draws replicate by replicate, sample by sample, `g1` before `g2`.
    pub fn sample(rng: &mut Rng, replicates: usize, num_samples: usize) -> Self {
        let mut g1 = Array2::zeros((replicates, num_samples));
        let mut g2 = Array2::zeros((replicates, num_samples));
        for r in 0..replicates {
            for j in 0..num_samples {
                g1[[r, j]] = gumbel_sample(rng);
                g2[[r, j]] = gumbel_sample(rng);
            }
        }
        Self { g1, g2 }
    }

    pub fn replicates(&self) -> usize {
        self.g1.nrows()
    }
}

/// Sampled BCMS Lagrangian
/// `sum_j pi_j (1 - mu_j h_j) + 1/N sum_n sum_i lambda_i P_n^i - (1 - eps) sum_i lambda_i`
/// with gradients in `pi` and `xhat`.
pub fn bcms_lagrangian(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    pi: &[f64],
    lambda: &[f64],
    mu: &[f64],
    hp: &HyperParams,
    draws: &BernoulliDraws,
) -> Result<LagrangianEval> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    if pi.len() != n || mu.len() != n || lambda.len() != p || draws.g1.ncols() != n {
        return Err(Error::invalid("bcms lagrangian: inconsistent dimensions"));
    }
    let ind = hp.indicator();
    let reps = draws.replicates();
    let inv_n = 1.0 / reps as f64;
    let dev = &xhat - &prob.x();
    let sq = dev.mapv(|v| v * v);
    let (h, grad_h) = violations_with_grads(prob, xhat)?;

    let mut value: f64 = (0..n).map(|j| pi[j] * (1.0 - mu[j] * h[j])).sum();
    let mut grad_pi: Vec<f64> = (0..n).map(|j| 1.0 - mu[j] * h[j]).collect();
    let mut prob_estimate = vec![0.0; p];
    // sum_n v_nj S'(x_n^i), used by the xhat gradient
    let mut weighted_slope = Array2::<f64>::zeros((n, p));

    let mut v = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut slope = vec![0.0; p];
    for r in 0..reps {
        for j in 0..n {
            (v[j], dv[j]) = bernoulli_relax_with_grad(pi[j], draws.g1[[r, j]], draws.g2[[r, j]], hp.omega);
        }
        for i in 0..p {
            let used: f64 = (0..n).map(|j| v[j] * sq[[j, i]]).sum();
            let (s, ds) = hp.budget_indicator(&ind, used, prob.budgets()[i]);
            value += inv_n * lambda[i] * s;
            prob_estimate[i] += inv_n * s;
            slope[i] = ds;
        }
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..p {
                acc += lambda[i] * slope[i] * sq[[j, i]];
                weighted_slope[[j, i]] += v[j] * slope[i];
            }
            grad_pi[j] += inv_n * dv[j] * acc;
        }
    }
    value -= (1.0 - hp.epsilon) * lambda.iter().sum::<f64>();

    let mut grad_xhat = Array2::zeros((n, p));
    for j in 0..n {
        for i in 0..p {
            if prob.mask()[i] {
                grad_xhat[[j, i]] = -pi[j] * mu[j] * grad_h[[j, i]]
                    + inv_n * lambda[i] * weighted_slope[[j, i]] * 2.0 * dev[[j, i]];
            }
        }
    }
    Ok(LagrangianEval {
        value,
        grad_pi,
        grad_xhat,
        prob_estimate,
        mean_selection: pi.to_vec(),
        violations: h,
    })
}

pub(super) fn solve(
    prob: &PerturbProblem,
    hp: &HyperParams,
    opts: &SolveOptions,
    observer: &mut dyn Observer,
) -> Result<SolverState> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    let (lambda, mu) = init_multipliers(hp, p, n);
    let mut state = SolverState {
        kind: SolverKind::Bcms,
        xhat: init_xhat(prob, hp, opts)?,
        selection: Selection::Bernoulli(vec![hp.pi0; n]),
        lambda,
        mu,
        outer_done: 0,
        inner_done: 0,
        trace: Vec::new(),
    };
    let mut pi = vec![hp.pi0; n];
    let inner_iters = hp.inner_for(SolverKind::Bcms);

    for t in 0..hp.outer_for(SolverKind::Bcms) {
        for s in 0..inner_iters {
            let mut rng = Rng::derive(hp.seed, &[streams::GUMBEL, t as u64, s as u64]);
            let draws = BernoulliDraws::sample(&mut rng, hp.n_samples, n);
            let eval = bcms_lagrangian(prob, state.xhat.view(), &pi, &state.lambda, &state.mu, hp, &draws)?;
            check_finite(eval.value, state.xhat.view(), t, s)?;
            for (pj, g) in pi.iter_mut().zip(&eval.grad_pi) {
                *pj = (*pj + hp.alpha * g).clamp(0.0, 1.0);
            }
            step_xhat(&mut state.xhat, &eval.grad_xhat, hp.beta, prob.mask());
            check_finite(0.0, state.xhat.view(), t, s)?;
            state.selection = Selection::Bernoulli(pi.clone());
            state.inner_done += 1;
            observer.after_update(UpdateEvent::Inner { outer: t, inner: s }, &state);
        }

        let mut rng = Rng::derive(hp.seed, &[streams::GUMBEL, t as u64, inner_iters as u64]);
        let draws = BernoulliDraws::sample(&mut rng, hp.n_samples, n);
        let eval = bcms_lagrangian(prob, state.xhat.view(), &pi, &state.lambda, &state.mu, hp, &draws)?;
        check_finite(eval.value, state.xhat.view(), t, inner_iters)?;
        let (gamma, eta) = hp.multiplier_rates(t);
        let mu_grad: Vec<f64> = (0..n).map(|j| -pi[j] * eval.violations[j]).collect();
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
