//! Max-samples solver with binary selections.
//!
//! With `z` fixed the Lagrangian is `sum_j c_j z_j + sum_i lambda_i B_i`, so the
//! best `z` keeps exactly the samples with non-negative reduced cost. The
//! argmax over `xhat` is realized as one gradient-ascent step per inner
//! iteration, followed by a fresh selection.

use ndarray::{Array2, ArrayView2};

use super::{
    check_finite, init_multipliers, init_xhat, project_nonneg, record_trace, step_xhat_prox,
    violations_with_grads, HyperParams, LagrangianEval, Observer, Selection, SolveOptions,
    SolverKind, SolverState, UpdateEvent,
};
use crate::error::{Error, Result};
use crate::problem::PerturbProblem;

/// Quantities at one `xhat` shared by the gradient, the reduced costs and the
/// multiplier step.
struct Point {
    dev: Array2<f64>,
    sq_dev: Array2<f64>,
    h: Vec<f64>,
    grad_h: Array2<f64>,
}

impl Point {
    fn at(prob: &PerturbProblem, xhat: ArrayView2<f64>) -> Result<Self> {
        let dev = &xhat - &prob.x();
        let sq_dev = dev.mapv(|v| v * v);
        let (h, grad_h) = violations_with_grads(prob, xhat)?;
        Ok(Self { dev, sq_dev, h, grad_h })
    }

    fn reduced_costs(&self, lambda: &[f64], mu: &[f64]) -> Vec<f64> {
        self.sq_dev
            .rows()
            .into_iter()
            .zip(self.h.iter().zip(mu))
            .map(|(d, (h, m))| {
                let spent: f64 = d.iter().zip(lambda).map(|(a, l)| l * a).sum();
                1.0 - spent - m * h
            })
            .collect()
    }

    fn eval(&self, prob: &PerturbProblem, z: &[bool], lambda: &[f64], mu: &[f64]) -> LagrangianEval {
        let c = self.reduced_costs(lambda, mu);
        let budget_term: f64 = lambda.iter().zip(prob.budgets()).map(|(l, b)| l * b).sum();
        let value = c.iter().zip(z).filter(|(_, on)| **on).map(|(c, _)| c).sum::<f64>() + budget_term;
        let mut grad = Array2::zeros(self.dev.raw_dim());
        for (j, &on) in z.iter().enumerate() {
            if !on {
                continue;
            }
            for (i, &l) in lambda.iter().enumerate() {
                if prob.mask()[i] {
                    grad[[j, i]] = -(2.0 * l * self.dev[[j, i]] + mu[j] * self.grad_h[[j, i]]);
                }
            }
        }
        let zf: Vec<f64> = z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        LagrangianEval {
            value,
            grad_pi: vec![0.0; z.len()],
            grad_xhat: grad,
            prob_estimate: Vec::new(),
            mean_selection: zf,
            violations: self.h.clone(),
        }
    }
}

/// `c_j = 1 - sum_i lambda_i (xhat_ij - x_ij)^2 - mu_j h_j(xhat_j)`.
pub fn ms_reduced_costs(prob: &PerturbProblem, state: &SolverState) -> Result<Vec<f64>> {
    Ok(Point::at(prob, state.xhat.view())?.reduced_costs(&state.lambda, &state.mu))
}

/// Maximizer of `sum_j c_j z_j` over binary `z`; zero costs are kept.
pub fn ms_select(costs: &[f64]) -> Vec<bool> {
    costs.iter().map(|&c| c >= 0.0).collect()
}

/// MS Lagrangian and its gradient in `xhat` for a fixed binary selection.
pub fn ms_lagrangian(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    z: &[bool],
    lambda: &[f64],
    mu: &[f64],
) -> Result<LagrangianEval> {
    if z.len() != prob.num_samples() || mu.len() != prob.num_samples() {
        return Err(Error::invalid("selection and mu need one entry per sample"));
    }
    Ok(Point::at(prob, xhat)?.eval(prob, z, lambda, mu))
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
        kind: SolverKind::Ms,
        xhat: init_xhat(prob, hp, opts)?,
        selection: Selection::Binary(vec![true; n]),
        lambda,
        mu,
        outer_done: 0,
        inner_done: 0,
        trace: Vec::new(),
    };
    let inner_iters = hp.inner_for(SolverKind::Ms);

    for t in 0..hp.outer_for(SolverKind::Ms) {
        let mut z = vec![true; n];
        let mut point = Point::at(prob, state.xhat.view())?;
        for s in 0..inner_iters {
            if z.iter().all(|on| !on) {
                break;
            }
            let eval = point.eval(prob, &z, &state.lambda, &state.mu);
            check_finite(eval.value, state.xhat.view(), t, s)?;
            let (lambda, zs) = (&state.lambda, &z);
            step_xhat_prox(&mut state.xhat, &eval.grad_xhat, hp.beta, prob.mask(), |j, i| {
                if zs[j] { lambda[i] } else { 0.0 }
            });
            check_finite(0.0, state.xhat.view(), t, s)?;
            point = Point::at(prob, state.xhat.view())?;
            z = ms_select(&point.reduced_costs(&state.lambda, &state.mu));
            state.selection = Selection::Binary(z.clone());
            state.inner_done += 1;
            observer.after_update(UpdateEvent::Inner { outer: t, inner: s }, &state);
        }

        let eval = point.eval(prob, &z, &state.lambda, &state.mu);
        check_finite(eval.value, state.xhat.view(), t, inner_iters)?;
        let (gamma, eta) = hp.multiplier_rates(t);
        let lambda_grad: Vec<f64> = (0..p)
            .map(|i| {
                let used: f64 = (0..n).filter(|&j| z[j]).map(|j| point.sq_dev[[j, i]]).sum();
                prob.budgets()[i] - used
            })
            .collect();
        let mu_grad: Vec<f64> = (0..n).map(|j| if z[j] { -point.h[j] } else { 0.0 }).collect();
        for (l, g) in state.lambda.iter_mut().zip(&lambda_grad) {
            *l -= gamma * g;
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
