mod common;

use invclass_core::numkit::Rng;
use invclass_core::solvers::relax::categorical_relax;
use invclass_core::ndarray::Array2;

#[test]
fn bernoulli_hard_threshold_frequency() {
    for (s, &pi) in [0.1, 0.5, 0.9].iter().enumerate() {
        let f = common::bernoulli_hard_frequency(100 + s as u64, pi, 100_000);
        assert!((f - pi).abs() < 0.01, "pi {pi}: frequency {f}");
    }
}

#[test]
fn gumbel_mean_is_euler_mascheroni() {
    let m = common::gumbel_mean(5, 1_000_000);
    assert!((m - 0.5772156649).abs() < 0.01, "mean {m}");
}

#[test]
fn categorical_relaxation_stays_in_unit_interval() {
    let mut rng = Rng::new(9);
    for _ in 0..200 {
        let n = 1 + rng.index(8);
        let k = 1 + rng.index(n);
        let raw: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let total: f64 = raw.iter().sum::<f64>().max(1e-12);
        let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let g = Array2::from_shape_fn((n, k), |_| invclass_core::numkit::gumbel_sample(&mut rng));
        let v = categorical_relax(&pi, g.view(), rng.uniform_in(0.1, 2.0));
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)), "{v:?}");
        let mass: f64 = v.iter().sum();
        assert!(mass <= k as f64 + 1e-9);
    }
}
