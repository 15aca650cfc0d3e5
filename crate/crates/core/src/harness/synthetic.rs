//! Gaussian-blob datasets.

use ndarray::Array2;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// `k` unit-covariance Gaussian blobs in `p` dimensions whose means form a
/// regular simplex with edge length `separation`, randomly rotated. Labels
/// cycle `0, 1, .., k-1` so classes are balanced.
pub fn generate_synthetic(n: usize, p: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || n < k {
        return Err(Error::invalid(format!("need n >= k >= 2, got n={n}, k={k}")));
    }
    if p == 0 || k - 1 > p {
        return Err(Error::invalid(format!(
            "need p >= max(1, k - 1) to place {k} equidistant means, got p={p}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be finite and >= 0"));
    }
    let mut rng = Rng::new(seed);
    let directions = random_orthonormal_rows(&mut rng, k - 1, p);

    // Helmert basis of the sum-zero subspace: vertex c has coordinate u_m[c]
    // on axis m, and any two vertices sit sqrt(2) apart.
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means = Array2::<f64>::zeros((k, p));
    for m in 1..k {
        let norm = ((m * (m + 1)) as f64).sqrt();
        for c in 0..k {
            let coord = match c.cmp(&m) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -(m as f64) / norm,
                std::cmp::Ordering::Greater => 0.0,
            };
            if coord != 0.0 {
                means.row_mut(c).scaled_add(scale * coord, &directions.row(m - 1));
            }
        }
    }

    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut features = Array2::<f64>::zeros((n, p));
    for (i, &y) in labels.iter().enumerate() {
        for f in 0..p {
            features[[i, f]] = means[[y, f]] + rng.normal();
        }
    }
    Dataset::new(features, labels)
}

/// `rows` orthonormal vectors in `R^dim` from Gram-Schmidt on Gaussian draws.
fn random_orthonormal_rows(rng: &mut Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((rows, dim));
    let mut r = 0;
    while r < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for prev in 0..r {
            let dot: f64 = v.iter().zip(q.row(prev)).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q.row(prev)) {
                *vi -= dot * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (f, vi) in v.iter().enumerate() {
            q[[r, f]] = vi / norm;
        }
        r += 1;
    }
    q
}
