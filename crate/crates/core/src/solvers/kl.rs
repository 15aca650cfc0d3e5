//! KL-divergence baseline: minimize `KL(target || f(xhat)) + a |xhat - x|^2`
//! per sample under budget and margin penalties; multipliers ascend.

use ndarray::{Array2, ArrayView2};

use super::{
    check_finite, init_multipliers, init_xhat, project_nonneg, record_trace, step_xhat_prox,
    violations_with_grads, HyperParams, LagrangianEval, Observer, Selection, SolveOptions,
    SolverKind, SolverState, UpdateEvent,
};
use crate::error::{Error, Result};
use crate::problem::PerturbProblem;

/// `sum_j [KL_j + a |xhat_j - x_j|^2] + sum_i lambda_i g_i(xhat) + sum_j mu_j h_j(xhat)`
/// with every sample counted in `g_i`, and its gradient in `xhat`.
pub fn kl_lagrangian(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    lambda: &[f64],
    mu: &[f64],
    a: f64,
) -> Result<LagrangianEval> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    if mu.len() != n || lambda.len() != p {
        return Err(Error::invalid("kl lagrangian: inconsistent dimensions"));
    }
    let dev = &xhat - &prob.x();
    let (h, grad_h) = violations_with_grads(prob, xhat)?;
    let mut value = 0.0;
    let mut grad_xhat = Array2::zeros((n, p));
    for j in 0..n {
        let (kl, grad_kl) = prob.classifier().kl_and_grad(xhat.row(j), &prob.target(j))?;
        let dist: f64 = dev.row(j).iter().map(|d| d * d).sum();
        value += kl + a * dist + mu[j] * h[j];
        for i in 0..p {
            if prob.mask()[i] {
                grad_xhat[[j, i]] =
                    grad_kl[i] + 2.0 * (a + lambda[i]) * dev[[j, i]] + mu[j] * grad_h[[j, i]];
            }
        }
    }
    for i in 0..p {
        let used: f64 = dev.column(i).iter().map(|d| d * d).sum();
        value += lambda[i] * (used - prob.budgets()[i]);
    }
    Ok(LagrangianEval {
        value,
        grad_pi: Vec::new(),
        grad_xhat,
        prob_estimate: Vec::new(),
        mean_selection: vec![1.0; n],
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
        kind: SolverKind::Kl,
        xhat: init_xhat(prob, hp, opts)?,
        selection: Selection::None,
        lambda,
        mu,
        outer_done: 0,
        inner_done: 0,
        trace: Vec::new(),
    };
    let inner_iters = hp.inner_for(SolverKind::Kl);

    for t in 0..hp.outer_for(SolverKind::Kl) {
        for s in 0..inner_iters {
            let eval = kl_lagrangian(prob, state.xhat.view(), &state.lambda, &state.mu, hp.a)?;
            check_finite(eval.value, state.xhat.view(), t, s)?;
            let lambda = &state.lambda;
            step_xhat_prox(&mut state.xhat, &eval.grad_xhat, -hp.beta, prob.mask(), |_, i| hp.a + lambda[i]);
            check_finite(0.0, state.xhat.view(), t, s)?;
            state.inner_done += 1;
            observer.after_update(UpdateEvent::Inner { outer: t, inner: s }, &state);
        }

        let eval = kl_lagrangian(prob, state.xhat.view(), &state.lambda, &state.mu, hp.a)?;
        check_finite(eval.value, state.xhat.view(), t, inner_iters)?;
        let (gamma, eta) = hp.multiplier_rates(t);
        let g = prob.budget_lhs(state.xhat.view(), &vec![1.0; n])?;
        for (l, gi) in state.lambda.iter_mut().zip(&g) {
            *l += gamma * gi;
        }
        for (m, h) in state.mu.iter_mut().zip(&eval.violations) {
            *m += eta * h;
        }
        project_nonneg(&mut state.lambda);
        project_nonneg(&mut state.mu);
        state.outer_done = t + 1;
        observer.after_update(UpdateEvent::Outer { outer: t }, &state);
        record_trace(&mut state, prob, t, eval.value, &eval.violations)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Classifier;
    use crate::problem::test_support::toy_problem;
    use crate::problem::UNLIMITED_BUDGET;
    use crate::solvers::solve_kl;
    use ndarray::array;
    use std::sync::Arc;

    #[test]
    fn unconstrained_kl_reaches_target() {
        let prob = toy_problem(vec![UNLIMITED_BUDGET; 2]);
        let hp = HyperParams {
            a: 0.0,
            outer_iters: Some(2),
            inner_iters: Some(3000),
            beta: 0.1,
            ..Default::default()
        };
        let st = solve_kl(&prob, &hp).unwrap();
        for j in 0..prob.num_samples() {
            let (kl, _) = prob.classifier().kl_and_grad(st.xhat.row(j), &prob.target(j)).unwrap();
            assert!(kl < 0.05, "sample {j}: kl {kl}");
        }
    }

    #[test]
    fn flat_classifier_is_stationary() {
        // zero weights: no input gradient anywhere, so xhat = x stays put
        let c = Arc::new(Classifier::logistic(Array2::zeros((2, 2)), array![0.5, 0.0]).unwrap());
        let prob = PerturbProblem::new(array![[1.0, 2.0]], vec![true, true], vec![1.0, 1.0], vec![1], 0.1, c)
            .unwrap();
        let hp = HyperParams {
            init_noise: 0.0,
            a: 3.0,
            outer_iters: Some(2),
            inner_iters: Some(50),
            ..Default::default()
        };
        let st = solve_kl(&prob, &hp).unwrap();
        assert_eq!(st.xhat, prob.x().to_owned());
    }

    #[test]
    fn deterministic_trace() {
        let prob = toy_problem(vec![2.0, 2.0]);
        let hp = HyperParams {
            outer_iters: Some(2),
            inner_iters: Some(100),
            seed: 3,
            ..Default::default()
        };
        assert_eq!(solve_kl(&prob, &hp).unwrap(), solve_kl(&prob, &hp).unwrap());
    }
}
