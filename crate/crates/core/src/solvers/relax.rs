//! Gumbel-softmax relaxations of Bernoulli and categorical selections, and the
//! Monte Carlo estimate of the budget chance constraint.

use ndarray::{Array2, ArrayView2};

use super::HyperParams;
use crate::numkit::sigmoid;
use crate::problem::PerturbProblem;

pub const PI_CLAMP: f64 = 1e-6;
pub const PI_FLOOR: f64 = 1e-12;

/// Relaxed Bernoulli(`pi`) sample driven by the Gumbel pair `(g1, g2)`.
pub fn bernoulli_relax(pi: f64, g1: f64, g2: f64, omega: f64) -> f64 {
    bernoulli_relax_with_grad(pi, g1, g2, omega).0
}

/// Relaxed sample and its derivative in `pi`. The derivative is zero when
/// `pi` sits outside the clamp interval.
pub fn bernoulli_relax_with_grad(pi: f64, g1: f64, g2: f64, omega: f64) -> (f64, f64) {
    let clamped = pi.clamp(PI_CLAMP, 1.0 - PI_CLAMP);
    // exp(a) / (exp(a) + exp(b)) == sigmoid(a - b)
    let t = (clamped.ln() + g1 - (1.0 - clamped).ln() - g2) / omega;
    let v = sigmoid(t);
    let dv = if clamped == pi {
        v * (1.0 - v) / omega * (1.0 / pi + 1.0 / (1.0 - pi))
    } else {
        0.0
    };
    (v, dv)
}

/// Per-draw softmax weights of a categorical relaxation.
pub struct CategoricalRelaxation {
    /// `min(1, sum over draws)` per sample.
    pub values: Vec<f64>,
    /// Whether the `min(1, .)` clamp is active per sample.
    pub clamped: Vec<bool>,
    /// Softmax weight of sample `j` in draw `xi`, laid out `|S| x K`.
    pub weights: Array2<f64>,
}

/// `min(1, sum_xi softmax((ln pi + G[:, xi]) / omega))` with `G` of shape `|S| x K`.
pub fn categorical_relax(pi: &[f64], gumbels: ArrayView2<f64>, omega: f64) -> Vec<f64> {
    categorical_relax_full(pi, gumbels, omega).values
}

pub fn categorical_relax_full(
    pi: &[f64],
    gumbels: ArrayView2<f64>,
    omega: f64,
) -> CategoricalRelaxation {
    let (n, k) = gumbels.dim();
    assert_eq!(pi.len(), n, "one Gumbel row per sample");
    let log_pi: Vec<f64> = pi.iter().map(|p| p.max(PI_FLOOR).ln()).collect();
    let mut weights = Array2::zeros((n, k));
    let mut logits = vec![0.0; n];
    for xi in 0..k {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            logits[j] = (log_pi[j] + gumbels[[j, xi]]) / omega;
            max = max.max(logits[j]);
        }
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for j in 0..n {
            weights[[j, xi]] = logits[j] / sum;
        }
    }
    let sums: Vec<f64> = weights.rows().into_iter().map(|r| r.sum()).collect();
    CategoricalRelaxation {
        values: sums.iter().map(|s| s.min(1.0)).collect(),
        clamped: sums.iter().map(|s| *s > 1.0).collect(),
        weights,
    }
}

/// `Pr(g_i <= 0)` per feature, estimated from relaxed selections `v`
/// (`N x |S|`, one row per replicate) through the smooth indicator.
pub fn chance_prob_estimate(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    v: ArrayView2<f64>,
    hp: &HyperParams,
) -> Vec<f64> {
    let d = prob.sq_deviations(xhat);
    let ind = hp.indicator();
    let reps = v.nrows();
    // N x p: sum_j v_nj d_ij
    let used = v.dot(&d);
    (0..prob.num_features())
        .map(|i| {
            let total: f64 = (0..reps)
                .map(|r| hp.budget_indicator(&ind, used[[r, i]], prob.budgets()[i]).0)
                .sum();
            total / reps as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{gumbel_sample, Rng};
    use crate::problem::test_support::toy_problem;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bernoulli_symmetry_and_limit() {
        assert_abs_diff_eq!(bernoulli_relax(0.5, 0.3, 0.3, 1.0), 0.5);
        assert_abs_diff_eq!(bernoulli_relax(0.5, 1.0, 0.0, 1e-4), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bernoulli_relax(0.3, -2.0, 0.0, 1e-4), 0.0, epsilon = 1e-12);
        // clamped endpoints stay finite
        assert!(bernoulli_relax(0.0, 0.0, 0.0, 1.0) > 0.0);
        assert!(bernoulli_relax(1.0, 0.0, 0.0, 1.0) < 1.0);
    }

    #[test]
    fn bernoulli_hard_threshold_recovers_pi() {
        let mut rng = Rng::new(1234);
        for &pi in &[0.1, 0.5, 0.9] {
            let n = 100_000;
            let hits = (0..n)
                .filter(|_| {
                    let (g1, g2) = (gumbel_sample(&mut rng), gumbel_sample(&mut rng));
                    bernoulli_relax(pi, g1, g2, 1.0) > 0.5
                })
                .count();
            assert!((hits as f64 / n as f64 - pi).abs() < 0.01);
        }
    }

    #[test]
    fn bernoulli_derivative_matches_fd() {
        for &(pi, g1, g2, w) in &[(0.3, 0.1, -0.4, 1.0), (0.8, -1.0, 0.5, 0.5), (0.05, 2.0, 0.0, 2.0)] {
            let (_, d) = bernoulli_relax_with_grad(pi, g1, g2, w);
            let h = 1e-7;
            let fd = (bernoulli_relax(pi + h, g1, g2, w) - bernoulli_relax(pi - h, g1, g2, w)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6 * d.abs().max(1.0));
        }
    }

    #[test]
    fn categorical_single_draw_is_softmax() {
        let mut rng = Rng::new(3);
        let g = Array2::from_shape_fn((5, 1), |_| gumbel_sample(&mut rng));
        let v = categorical_relax(&[0.1, 0.2, 0.3, 0.25, 0.15], g.view(), 1.0);
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn categorical_concentrated_mass() {
        let mut rng = Rng::new(4);
        let g = Array2::from_shape_fn((4, 3), |_| gumbel_sample(&mut rng));
        let pi = [1e-9, 1.0 - 3e-9, 1e-9, 1e-9];
        let v = categorical_relax(&pi, g.view(), 0.05);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-9);
        assert!(v[0] < 1e-9 && v[2] < 1e-9 && v[3] < 1e-9);
    }

    #[test]
    fn categorical_hard_coverage_matches_coupon_collector() {
        let n = 10;
        let k = n;
        let mut rng = Rng::new(5);
        let trials = 10_000;
        let pi = vec![1.0 / n as f64; n];
        let mut total = 0.0;
        for _ in 0..trials {
            let g = Array2::from_shape_fn((n, k), |_| gumbel_sample(&mut rng));
            total += categorical_relax(&pi, g.view(), 1e-3).iter().sum::<f64>();
        }
        let mean = total / trials as f64;
        let expect = n as f64 * (1.0 - (1.0 - 1.0 / n as f64).powi(k as i32));
        assert!((mean - expect).abs() / expect < 0.05, "{mean} vs {expect}");
    }

    #[test]
    fn chance_estimate_extremes() {
        let prob = toy_problem(vec![1.0, 1.0]);
        let v = Array2::from_elem((20, 3), 1.0);
        // zero deviation: raw residual -B saturates for large budgets, the
        // relative residual -1 saturates for a sharp indicator
        let raw = HyperParams { relative_indicator: false, kappa: 2.0, ..Default::default() };
        let big = prob.with_budgets(vec![50.0, 50.0]).unwrap();
        for p in chance_prob_estimate(&big, big.x(), v.view(), &raw) {
            assert!(p > 1.0 - 1e-6);
        }
        let sharp = HyperParams { kappa: 20.0, ..Default::default() };
        for p in chance_prob_estimate(&prob, prob.x(), v.view(), &sharp) {
            assert!(p > 1.0 - 1e-6);
        }
        let mut xhat = prob.x().to_owned();
        xhat.mapv_inplace(|x| x + 10.0);
        for hp in [raw, sharp] {
            for p in chance_prob_estimate(&prob, xhat.view(), v.view(), &hp) {
                assert!(p < 1e-6);
            }
        }
    }

    #[test]
    fn relative_residual_is_scale_free() {
        let hp = HyperParams::default();
        let ind = hp.indicator();
        let (a, da) = hp.budget_indicator(&ind, 3.0, 4.0);
        let (b, db) = hp.budget_indicator(&ind, 300.0, 400.0);
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert_abs_diff_eq!(da, 100.0 * db, epsilon = 1e-12);
        let fd = (hp.budget_indicator(&ind, 3.0 + 1e-6, 4.0).0 - hp.budget_indicator(&ind, 3.0 - 1e-6, 4.0).0) / 2e-6;
        assert_abs_diff_eq!(da, fd, epsilon = 1e-6);
    }

    #[test]
    fn chance_estimate_converges() {
        let prob = toy_problem(vec![1.5, 1.5]);
        let hp = HyperParams::default();
        let mut xhat = prob.x().to_owned();
        xhat.mapv_inplace(|x| x + 0.8);
        let estimate = |seed: u64| {
            let mut rng = Rng::new(seed);
            let v = Array2::from_shape_fn((10_000, 3), |_| {
                bernoulli_relax(0.6, gumbel_sample(&mut rng), gumbel_sample(&mut rng), 1.0)
            });
            chance_prob_estimate(&prob, xhat.view(), v.view(), &hp)
        };
        let (a, b) = (estimate(1), estimate(2));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 0.02);
        }
    }
}
