//! Fixtures shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use std::sync::Arc;

use invclass_core::ndarray::{Array1, Array2, ArrayView2};
use invclass_core::numkit::{finite_diff_grad, max_rel_error, Rng};
use invclass_core::problem::predicted_classes;
use invclass_core::solvers::relax::categorical_relax_full;
use invclass_core::solvers::{
    bcms_lagrangian, ccms_lagrangian, kl_lagrangian, ms_lagrangian, BernoulliDraws, CategoricalDraws,
};
use invclass_core::{Classifier, HyperParams, PerturbProblem};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_RTOL: f64 = 1e-3;
pub const GRAD_FLOOR: f64 = 1e-4;
/// States closer than this to a kink of `h` or of the CCMS clamp are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;

pub fn random_classifier(rng: &mut Rng, p: usize, k: usize) -> Classifier {
    if rng.uniform() < 0.5 {
        Classifier::logistic(
            Array2::from_shape_fn((k, p), |_| rng.normal()),
            Array1::from_shape_fn(k, |_| 0.5 * rng.normal()),
        )
        .unwrap()
    } else {
        let h = 3 + rng.index(4);
        Classifier::mlp(
            Array2::from_shape_fn((h, p), |_| rng.normal()),
            Array1::from_shape_fn(h, |_| 0.5 * rng.normal()),
            Array2::from_shape_fn((k, h), |_| rng.normal()),
            Array1::from_shape_fn(k, |_| 0.5 * rng.normal()),
        )
        .unwrap()
    }
}

/// Random instance whose desired class differs from the current prediction.
/// At least one feature is perturbable.
pub fn random_problem(rng: &mut Rng, n: usize, p: usize, k: usize) -> PerturbProblem {
    let clf = Arc::new(random_classifier(rng, p, k));
    let x = Array2::from_shape_fn((n, p), |_| rng.normal());
    let pred = predicted_classes(&clf, x.view()).unwrap();
    let desired = pred.iter().map(|&c| (c + 1 + rng.index(k - 1)) % k).collect();
    let mut mask: Vec<bool> = (0..p).map(|_| rng.uniform() < 0.75).collect();
    mask[rng.index(p)] = true;
    let budgets = (0..p).map(|_| rng.uniform_in(0.2, 3.0)).collect();
    PerturbProblem::new(x, mask, budgets, desired, 0.1, clf).unwrap()
}

pub fn perturbed_xhat(rng: &mut Rng, prob: &PerturbProblem, scale: f64) -> Array2<f64> {
    let mut xhat = prob.x().to_owned();
    for ((_, i), v) in xhat.indexed_iter_mut() {
        if prob.mask()[i] {
            *v += scale * rng.normal();
        }
    }
    xhat
}

/// True when every sample sits clear of the kinks of its violation: the
/// `max(0, .)` hinge and ties in the rival class.
pub fn violations_smooth_at(prob: &PerturbProblem, xhat: ArrayView2<f64>) -> bool {
    (0..prob.num_samples()).all(|j| {
        let probs = prob.classifier().predict_proba(xhat.row(j)).unwrap();
        let want = prob.desired()[j];
        let mut others: Vec<f64> = (0..probs.len()).filter(|&u| u != want).map(|u| probs[u]).collect();
        others.sort_by(|a, b| b.total_cmp(a));
        let raw = others[0] - probs[want] + prob.delta();
        let tie_gap = if others.len() > 1 { others[0] - others[1] } else { f64::INFINITY };
        raw.abs() > KINK_MARGIN && tie_gap > KINK_MARGIN
    })
}

pub fn random_hyper(rng: &mut Rng) -> HyperParams {
    HyperParams {
        kappa: rng.uniform_in(1.0, 10.0),
        tau: rng.uniform_in(-0.5, 0.5),
        relative_indicator: rng.uniform() < 0.5,
        omega: rng.uniform_in(0.5, 2.0),
        epsilon: 0.05,
        ..HyperParams::default()
    }
}

fn masked_coords(prob: &PerturbProblem) -> Vec<(usize, usize)> {
    let (n, p) = (prob.num_samples(), prob.num_features());
    (0..n)
        .flat_map(|j| (0..p).map(move |i| (j, i)))
        .filter(|&(_, i)| prob.mask()[i])
        .collect()
}

/// Relative error of an analytic `xhat` gradient against central differences
/// over the perturbable coordinates. Frozen coordinates must carry a zero
/// gradient; a nonzero one is reported as an infinite error.
pub fn xhat_grad_error<F>(prob: &PerturbProblem, xhat: &Array2<f64>, analytic: &Array2<f64>, mut f: F) -> f64
where
    F: FnMut(ArrayView2<f64>) -> f64,
{
    if analytic.indexed_iter().any(|((_, i), g)| !prob.mask()[i] && *g != 0.0) {
        return f64::INFINITY;
    }
    let coords = masked_coords(prob);
    let x0: Vec<f64> = coords.iter().map(|&c| xhat[c]).collect();
    let mut probe = xhat.clone();
    let fd = finite_diff_grad(
        |v| {
            for (c, val) in coords.iter().zip(v) {
                probe[*c] = *val;
            }
            f(probe.view())
        },
        &x0,
        FD_STEP,
    );
    let an: Vec<f64> = coords.iter().map(|&c| analytic[c]).collect();
    max_rel_error(&an, &fd, GRAD_FLOOR)
}

fn pi_grad_error<F>(pi: &[f64], analytic: &[f64], f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let fd = finite_diff_grad(f, pi, FD_STEP);
    max_rel_error(analytic, &fd, GRAD_FLOOR)
}

/// Which objective a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Violation,
    Kl,
    Ms,
    Bcms,
    Ccms,
}

impl GradTarget {
    pub const ALL: [GradTarget; 5] =
        [GradTarget::Violation, GradTarget::Kl, GradTarget::Ms, GradTarget::Bcms, GradTarget::Ccms];
}

/// Draws a random smooth state for `target` and returns the worst relative
/// gradient error, or `None` when the draw landed too close to a kink.
pub fn gradient_check(target: GradTarget, rng: &mut Rng) -> Option<f64> {
    let n = 2 + rng.index(4);
    let p = 2 + rng.index(3);
    let k = 2 + rng.index(2);
    let prob = random_problem(rng, n, p, k);
    let xhat = perturbed_xhat(rng, &prob, 0.7);
    if !violations_smooth_at(&prob, xhat.view()) {
        return None;
    }
    let lambda: Vec<f64> = (0..p).map(|_| rng.uniform_in(0.0, 2.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 2.0)).collect();
    let hp = random_hyper(rng);

    let err = match target {
        GradTarget::Violation => {
            let j = rng.index(n);
            let (_, g) = prob.confidence_violation_grad(xhat.row(j), j).unwrap();
            let fd = finite_diff_grad(
                |v| prob.confidence_violation(invclass_core::ndarray::ArrayView1::from(v), j).unwrap(),
                xhat.row(j).as_slice().unwrap(),
                FD_STEP,
            );
            max_rel_error(&g, &fd, GRAD_FLOOR)
        }
        GradTarget::Kl => {
            let a = rng.uniform_in(0.1, 2.0);
            let eval = kl_lagrangian(&prob, xhat.view(), &lambda, &mu, a).unwrap();
            xhat_grad_error(&prob, &xhat, &eval.grad_xhat, |x| {
                kl_lagrangian(&prob, x, &lambda, &mu, a).unwrap().value
            })
        }
        GradTarget::Ms => {
            let z: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.6).collect();
            let eval = ms_lagrangian(&prob, xhat.view(), &z, &lambda, &mu).unwrap();
            xhat_grad_error(&prob, &xhat, &eval.grad_xhat, |x| {
                ms_lagrangian(&prob, x, &z, &lambda, &mu).unwrap().value
            })
        }
        GradTarget::Bcms => {
            let pi: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.05, 0.95)).collect();
            let draws = BernoulliDraws::sample(rng, 8, n);
            let eval = bcms_lagrangian(&prob, xhat.view(), &pi, &lambda, &mu, &hp, &draws).unwrap();
            let ex = xhat_grad_error(&prob, &xhat, &eval.grad_xhat, |x| {
                bcms_lagrangian(&prob, x, &pi, &lambda, &mu, &hp, &draws).unwrap().value
            });
            let ep = pi_grad_error(&pi, &eval.grad_pi, |v| {
                bcms_lagrangian(&prob, xhat.view(), v, &lambda, &mu, &hp, &draws).unwrap().value
            });
            ex.max(ep)
        }
        GradTarget::Ccms => {
            let raw: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.1, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let kd = 1 + rng.index(n);
            let draws = CategoricalDraws::sample(rng, 8, n, kd);
            let near_clamp = draws.g.iter().any(|g| {
                let rel = categorical_relax_full(&pi, g.view(), hp.omega);
                rel.weights.rows().into_iter().any(|r| (r.sum() - 1.0).abs() < KINK_MARGIN)
            });
            if near_clamp {
                return None;
            }
            let eval = ccms_lagrangian(&prob, xhat.view(), &pi, &lambda, &mu, &hp, &draws).unwrap();
            let ex = xhat_grad_error(&prob, &xhat, &eval.grad_xhat, |x| {
                ccms_lagrangian(&prob, x, &pi, &lambda, &mu, &hp, &draws).unwrap().value
            });
            let ep = pi_grad_error(&pi, &eval.grad_pi, |v| {
                ccms_lagrangian(&prob, xhat.view(), v, &lambda, &mu, &hp, &draws).unwrap().value
            });
            ex.max(ep)
        }
    };
    Some(err)
}

/// Runs `states` smooth gradient checks for `target` and returns the errors.
pub fn gradient_errors(target: GradTarget, seed: u64, states: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(states);
    while out.len() < states {
        if let Some(e) = gradient_check(target, &mut rng) {
            out.push(e);
        }
    }
    out
}

/// Random knapsack instances where the exact solver's cardinality matches
/// exhaustive search; returns `(agreeing, total)`.
pub fn knapsack_agreement(seed: u64, instances: usize) -> (usize, usize) {
    let mut rng = Rng::new(seed);
    let mut agree = 0;
    for t in 0..instances {
        let m = 1 + rng.index(12);
        let p = [1, 3, 5][t % 3];
        let weights = Array2::from_shape_fn((p, m), |_| {
            if rng.uniform() < 0.1 {
                0.0
            } else {
                rng.uniform_in(0.0, 2.0)
            }
        });
        let budgets: Vec<f64> = (0..p).map(|_| rng.uniform_in(0.0, 0.6 * m as f64)).collect();
        let exact = invclass_core::knapsack_select(weights.view(), &budgets);
        let brute = invclass_core::repair::knapsack_bruteforce(weights.view(), &budgets).unwrap();
        let feasible = invclass_core::repair::fits(weights.view(), &budgets, &exact.selected);
        let brute_count = brute.iter().filter(|b| **b).count();
        if feasible && exact.optimal && exact.count() == brute_count {
            agree += 1;
        }
    }
    (agree, instances)
}

/// Random cost vectors where `ms_select` attains the enumerated maximum of
/// `sum_j c_j z_j`; returns `(agreeing, total)`.
pub fn ms_select_agreement(seed: u64, vectors: usize) -> (usize, usize) {
    let mut rng = Rng::new(seed);
    let mut agree = 0;
    for _ in 0..vectors {
        let n = 1 + rng.index(10);
        let c: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.1 { 0.0 } else { rng.normal() })
            .collect();
        let z = invclass_core::solvers::ms_select(&c);
        let value: f64 = c.iter().zip(&z).filter(|(_, on)| **on).map(|(c, _)| c).sum();
        let best = (0u32..1 << n)
            .map(|mask| (0..n).filter(|j| mask >> j & 1 == 1).map(|j| c[j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        if z.len() == n && value >= best {
            agree += 1;
        }
    }
    (agree, vectors)
}

/// Random partitions where every per-feature share vector sums, left to
/// right, to the joint budget exactly; returns `(exact, total)`.
pub fn allocation_exactness(seed: u64, partitions: usize) -> (usize, usize) {
    use invclass_core::problem::allocate_group_budgets;
    use invclass_core::SequenceGroups;
    let mut rng = Rng::new(seed);
    let mut exact = 0;
    for _ in 0..partitions {
        let n = 1 + rng.index(200);
        let r = 1 + rng.index(n.min(15));
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        // r - 1 distinct cut points split the shuffled samples into r groups
        let mut cuts: Vec<usize> = (1..n).collect();
        rng.shuffle(&mut cuts);
        let mut cuts = cuts[..r - 1].to_vec();
        cuts.sort_unstable();
        let mut groups = Vec::with_capacity(r);
        let mut start = 0;
        for &c in cuts.iter().chain(std::iter::once(&n)) {
            groups.push(order[start..c].to_vec());
            start = c;
        }
        let groups = SequenceGroups::new(groups, n).unwrap();
        let p = 1 + rng.index(6);
        let budgets: Vec<f64> = (0..p)
            .map(|_| match rng.index(4) {
                0 => 0.0,
                1 => rng.uniform_in(0.0, 1e-3),
                2 => rng.uniform_in(0.0, 10.0),
                _ => rng.uniform_in(0.0, 1e6),
            })
            .collect();
        let shares = allocate_group_budgets(&groups, &budgets);
        let ok = shares.len() == r
            && (0..p).all(|i| shares.iter().map(|s| s[i]).sum::<f64>() == budgets[i])
            && shares.iter().flatten().all(|s| *s >= 0.0);
        if ok {
            exact += 1;
        }
    }
    (exact, partitions)
}

/// Frequency with which the relaxed Bernoulli sample exceeds one half.
pub fn bernoulli_hard_frequency(seed: u64, pi: f64, draws: usize) -> f64 {
    use invclass_core::numkit::gumbel_sample;
    use invclass_core::solvers::relax::bernoulli_relax;
    let mut rng = Rng::new(seed);
    let hits = (0..draws)
        .filter(|_| {
            let g1 = gumbel_sample(&mut rng);
            let g2 = gumbel_sample(&mut rng);
            bernoulli_relax(pi, g1, g2, 1.0) > 0.5
        })
        .count();
    hits as f64 / draws as f64
}

pub fn gumbel_mean(seed: u64, draws: usize) -> f64 {
    let mut rng = Rng::new(seed);
    (0..draws).map(|_| invclass_core::numkit::gumbel_sample(&mut rng)).sum::<f64>() / draws as f64
}

/// Worst projection breach seen by an observer over a short solver run:
/// negative multipliers, BCMS probabilities outside `[0, 1]`, or CCMS
/// distance from the simplex. Also returns the number of recorded updates.
pub fn projection_breach(
    kind: invclass_core::SolverKind,
    prob: &PerturbProblem,
    outer_iters: usize,
    seed: u64,
) -> (f64, usize) {
    use invclass_core::solvers::{Selection, SolverState, UpdateEvent};
    let hp = HyperParams {
        outer_iters: Some(outer_iters),
        inner_iters: Some(3),
        n_samples: 20,
        seed,
        ..HyperParams::default()
    };
    let mut worst: f64 = 0.0;
    let mut updates = 0;
    let mut observer = |_: UpdateEvent, s: &SolverState| {
        updates += 1;
        for v in s.lambda.iter().chain(&s.mu) {
            worst = worst.max(-v);
        }
        match &s.selection {
            Selection::Bernoulli(pi) => {
                for v in pi {
                    worst = worst.max(-v).max(v - 1.0);
                }
            }
            Selection::Categorical(pi) => {
                for v in pi {
                    worst = worst.max(-v);
                }
                worst = worst.max((pi.iter().sum::<f64>() - 1.0).abs());
            }
            _ => {}
        }
        if s.lambda.iter().chain(&s.mu).any(|v| v.is_nan()) {
            worst = f64::INFINITY;
        }
    };
    invclass_core::solve_with(kind, prob, &hp, &Default::default(), &mut observer).unwrap();
    (worst, updates)
}

/// A 60-sample instance on a trained logistic model, as used by the sweeps.
pub fn sweep_sized_problem(budget: f64) -> PerturbProblem {
    let cfg = invclass_core::harness::ExperimentConfig::default();
    let prep = invclass_core::harness::prepare(&cfg, 60).unwrap();
    let p = prep.base.num_features();
    prep.base.with_budgets(vec![budget; p]).unwrap()
}
