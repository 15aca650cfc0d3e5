//! Deterministic numerical primitives shared by the classifier, the solvers
//! and the test oracles.
//!
//! # Random numbers
//!
//! [`Rng`] wraps ChaCha8 (`rand_chacha`), a counter-based generator whose
//! output stream is fully specified and identical on every platform. A
//! generator is seeded from a single `u64` through `ChaCha8Rng::seed_from_u64`.
//! Independent sub-streams are derived with [`Rng::derive`], which folds a
//! path of `u64` indices into the seed with the SplitMix64 finalizer:
//!
//! ```text
//! s = seed
//! for idx in path: s = splitmix64(s ^ splitmix64(idx + 0x9E3779B97F4A7C15))
//! ```
//!
//! Solvers derive one stream per `(outer, inner)` iteration, so Monte Carlo
//! replicates can be regenerated in isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, portable random number generator. Not `Sync` by intent: parallel
/// workers derive their own stream.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for the sub-stream identified by `path` under `seed`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let s = path.iter().fold(seed, |s, &idx| {
            splitmix64(s ^ splitmix64(idx.wrapping_add(0x9E37_79B9_7F4A_7C15)))
        });
        Self::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Uniform draw in (lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Standard Gumbel(0, 1) draw: `-ln(-ln u)`.
pub fn gumbel_sample(rng: &mut Rng) -> f64 {
    gumbel_from_uniform(rng.uniform())
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(TWO_POW_M53, 1.0 - TWO_POW_M53);
    -(-u.ln()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax. Rejects non-finite input.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Sigmoid surrogate of the indicator `1[x <= 0]`, centred at `tau` with
/// slope `kappa / |1 - tau|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothIndicatorParams {
    kappa: f64,
    tau: f64,
}

impl SmoothIndicatorParams {
    pub fn new(kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be > 0, got {kappa}")));
        }
        if !tau.is_finite() || tau == 1.0 {
            return Err(Error::invalid(format!("tau must be finite and != 1, got {tau}")));
        }
        Ok(Self { kappa, tau })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn slope(&self) -> f64 {
        self.kappa / (1.0 - self.tau).abs()
    }
}

/// Decreasing in `x`: tends to 1 as `x -> -inf`, to 0 as `x -> +inf`.
pub fn smooth_indicator(x: f64, p: &SmoothIndicatorParams) -> f64 {
    sigmoid(-p.slope() * (x - p.tau))
}

/// Value and derivative with respect to `x`.
pub fn smooth_indicator_with_grad(x: f64, p: &SmoothIndicatorParams) -> (f64, f64) {
    let s = smooth_indicator(x, p);
    (s, -p.slope() * s * (1.0 - s))
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between two gradients, with `floor` guarding
/// components that are near zero in both.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
