//! Lagrangian min-max solvers.
//!
//! * [`SolverKind::Ms`]: binary selections, reduced-cost selection rule.
//! * [`SolverKind::Bcms`]: Bernoulli selection probabilities, chance-constrained
//!   budgets estimated with Gumbel-relaxed Monte Carlo draws.
//! * [`SolverKind::Ccms`]: categorical selection probabilities on the simplex,
//!   `K` relaxed draws per replicate.
//! * [`SolverKind::Kl`]: the KL-divergence baseline.
//!
//! All four share the same skeleton: an inner loop that ascends (or, for KL,
//! descends) the Lagrangian in the primal variables, and an outer loop of
//! projected multiplier steps with rates `gamma0 / (1 + t)` and
//! `eta0 / (1 + t)`. Runs are deterministic for a given seed: every random
//! draw comes from a stream derived from `(seed, purpose, outer, inner)`.

mod bcms;
mod ccms;
mod kl;
mod ms;
pub mod relax;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{smooth_indicator_with_grad, Rng, SmoothIndicatorParams};
use crate::problem::PerturbProblem;
use crate::repair::finalize;

pub use bcms::{bcms_lagrangian, BernoulliDraws};
pub use ccms::{ccms_lagrangian, CategoricalDraws};
pub use kl::kl_lagrangian;
pub use ms::{ms_lagrangian, ms_reduced_costs, ms_select};

/// Gradient of a Lagrangian with respect to the primal variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianEval {
    pub value: f64,
    /// Zero for MS and KL.
    pub grad_pi: Vec<f64>,
    /// Zero on frozen features.
    pub grad_xhat: Array2<f64>,
    /// Monte Carlo estimate of `Pr(g_i <= 0)` per feature (chance models only).
    pub prob_estimate: Vec<f64>,
    /// Expected selection per sample used in the multiplier gradient.
    pub mean_selection: Vec<f64>,
    /// `h_j` at the evaluation point.
    pub violations: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ms,
    Bcms,
    Ccms,
    Kl,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Ms, SolverKind::Bcms, SolverKind::Ccms, SolverKind::Kl];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Ms => "ms",
            SolverKind::Bcms => "bcms",
            SolverKind::Ccms => "ccms",
            SolverKind::Kl => "kl",
        }
    }

    pub fn default_outer_iters(self) -> usize {
        match self {
            SolverKind::Ccms => 20,
            _ => 10,
        }
    }

    pub fn default_inner_iters(self) -> usize {
        match self {
            SolverKind::Ms => 10_000,
            SolverKind::Bcms | SolverKind::Ccms => 100,
            SolverKind::Kl => 5_000,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ms" => Ok(SolverKind::Ms),
            "bcms" => Ok(SolverKind::Bcms),
            "ccms" => Ok(SolverKind::Ccms),
            "kl" => Ok(SolverKind::Kl),
            other => Err(Error::invalid(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Confidence margin used when the harness builds problems.
    pub delta: f64,
    pub kappa: f64,
    /// Centre of the smooth indicator, in the units of its argument.
    pub tau: f64,
    /// Feed the smooth indicator `(used_i - B_i) / B_i` instead of
    /// `used_i - B_i`, so one `kappa`/`tau` fits features of any scale.
    pub relative_indicator: bool,
    /// Gumbel-softmax temperature.
    pub omega: f64,
    /// Monte Carlo replicates per inner iteration.
    pub n_samples: usize,
    /// Categorical draws per replicate; `None` means `ceil(|S| / 2)`.
    pub k_draws: Option<usize>,
    pub epsilon: f64,
    /// Weight of the squared distance in the KL loss.
    pub a: f64,
    /// Step on the selection probabilities.
    pub alpha: f64,
    /// Step on the perturbed features.
    pub beta: f64,
    pub gamma0: f64,
    pub eta0: f64,
    /// `None` uses the solver default.
    pub outer_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub lambda0: f64,
    pub mu0: f64,
    pub noise_std: f64,
    /// Initial Bernoulli probability for every sample.
    pub pi0: f64,
    /// Half-width of the uniform noise added to perturbable features at start.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            delta: 0.1,
            kappa: 10.0,
            tau: 0.0,
            relative_indicator: true,
            omega: 1.0,
            n_samples: 100,
            k_draws: None,
            epsilon: 0.05,
            a: 1.0,
            alpha: 0.01,
            beta: 0.1,
            gamma0: 1.0,
            eta0: 1.0,
            outer_iters: None,
            inner_iters: None,
            lambda0: 1.0,
            mu0: 1.0,
            noise_std: 0.1,
            pi0: 1.0,
            init_noise: 1e-3,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma0", self.gamma0),
            ("eta0", self.eta0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        SmoothIndicatorParams::new(self.kappa, self.tau)?;
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        for (name, v) in [
            ("a", self.a),
            ("lambda0", self.lambda0),
            ("mu0", self.mu0),
            ("noise_std", self.noise_std),
            ("init_noise", self.init_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pi0) {
            return Err(Error::invalid("pi0 must lie in [0, 1]"));
        }
        if self.k_draws == Some(0) {
            return Err(Error::invalid("k_draws must be >= 1"));
        }
        if self.outer_iters == Some(0) || self.inner_iters == Some(0) {
            return Err(Error::invalid("iteration limits must be >= 1"));
        }
        Ok(())
    }

    pub fn indicator(&self) -> SmoothIndicatorParams {
        SmoothIndicatorParams::new(self.kappa, self.tau).expect("validated")
    }

    /// Smooth indicator of budget residual `used - budget` and its derivative
    /// with respect to `used`.
    pub(crate) fn budget_indicator(&self, ind: &SmoothIndicatorParams, used: f64, budget: f64) -> (f64, f64) {
        let scale = if self.relative_indicator && budget > 0.0 { budget } else { 1.0 };
        let (s, ds) = smooth_indicator_with_grad((used - budget) / scale, ind);
        (s, ds / scale)
    }

    pub fn k_for(&self, num_samples: usize) -> usize {
        self.k_draws.unwrap_or(num_samples.div_ceil(2)).max(1)
    }

    pub fn outer_for(&self, kind: SolverKind) -> usize {
        self.outer_iters.unwrap_or(kind.default_outer_iters())
    }

    pub fn inner_for(&self, kind: SolverKind) -> usize {
        self.inner_iters.unwrap_or(kind.default_inner_iters())
    }

    /// Multiplier step sizes at outer iteration `t` (0-based).
    pub fn multiplier_rates(&self, t: usize) -> (f64, f64) {
        let d = 1.0 + t as f64;
        (self.gamma0 / d, self.eta0 / d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// MS: `z`.
    Binary(Vec<bool>),
    /// BCMS: independent selection probabilities in `[0, 1]`.
    Bernoulli(Vec<f64>),
    /// CCMS: a point on the simplex.
    Categorical(Vec<f64>),
    /// KL has no selection variables.
    None,
}

impl Selection {
    pub fn as_probabilities(&self) -> Option<&[f64]> {
        match self {
            Selection::Bernoulli(p) | Selection::Categorical(p) => Some(p),
            _ => None,
        }
    }
}

/// One record per completed outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    /// Size of the repaired selection at the current `xhat`.
    pub selected: usize,
    pub lagrangian: f64,
    pub lambda_norm: f64,
    pub mu_norm: f64,
    pub mu_grad_norm: f64,
}

pub const TRACE_HEADER: &str = "outer_iter,selected,lagrangian,lambda_norm,mu_norm,mu_grad_norm";

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?}\n",
            r.outer_iter, r.selected, r.lagrangian, r.lambda_norm, r.mu_norm, r.mu_grad_norm
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub kind: SolverKind,
    pub xhat: Array2<f64>,
    pub selection: Selection,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub outer_done: usize,
    pub inner_done: usize,
    pub trace: Vec<TraceRow>,
}

/// Which update just happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateEvent {
    /// Primal variables moved.
    Inner { outer: usize, inner: usize },
    /// Multipliers moved.
    Outer { outer: usize },
}

/// Hook called after every update, used by invariant checks.
pub trait Observer {
    fn after_update(&mut self, event: UpdateEvent, state: &SolverState);
}

impl<F: FnMut(UpdateEvent, &SolverState)> Observer for F {
    fn after_update(&mut self, event: UpdateEvent, state: &SolverState) {
        self(event, state)
    }
}

pub struct NoObserver;

impl Observer for NoObserver {
    fn after_update(&mut self, _: UpdateEvent, _: &SolverState) {}
}

/// Optional starting values for `xhat`: the first `warm.nrows()` samples
/// start from these rows, the rest from the default noisy copy of `x`.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub warm_start: Option<Array2<f64>>,
}

pub(crate) mod streams {
    pub const MULTIPLIERS: u64 = 0;
    pub const XHAT_INIT: u64 = 1;
    pub const GUMBEL: u64 = 2;
}

pub(crate) fn init_multipliers(hp: &HyperParams, p: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Rng::derive(hp.seed, &[streams::MULTIPLIERS]);
    let lambda = (0..p)
        .map(|_| (hp.lambda0 + hp.noise_std * rng.normal()).max(0.0))
        .collect();
    let mu = (0..n)
        .map(|_| (hp.mu0 + hp.noise_std * rng.normal()).max(0.0))
        .collect();
    (lambda, mu)
}

pub(crate) fn init_xhat(
    prob: &PerturbProblem,
    hp: &HyperParams,
    opts: &SolveOptions,
) -> Result<Array2<f64>> {
    let mut rng = Rng::derive(hp.seed, &[streams::XHAT_INIT]);
    let mut xhat = prob.x().to_owned();
    for mut row in xhat.rows_mut() {
        for (i, v) in row.iter_mut().enumerate() {
            // draw for every coordinate so warm starts don't shift the stream
            let noise = rng.uniform_in(-hp.init_noise, hp.init_noise);
            if prob.mask()[i] {
                *v += noise;
            }
        }
    }
    if let Some(warm) = &opts.warm_start {
        if warm.ncols() != prob.num_features() || warm.nrows() > prob.num_samples() {
            return Err(Error::invalid("warm start has the wrong shape"));
        }
        for (j, row) in warm.rows().into_iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if prob.mask()[i] {
                    xhat[[j, i]] = v;
                }
            }
        }
    }
    Ok(xhat)
}

pub(crate) fn project_nonneg(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn check_finite(value: f64, xhat: ArrayView2<f64>, outer: usize, inner: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Diverged {
            outer,
            inner,
            detail: format!("lagrangian is {value}"),
        });
    }
    if xhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            outer,
            inner,
            detail: "non-finite perturbed features".to_string(),
        });
    }
    Ok(())
}

/// `xhat += step * grad`, frozen features excluded.
pub(crate) fn step_xhat(xhat: &mut Array2<f64>, grad: &Array2<f64>, step: f64, mask: &[bool]) {
    ndarray::Zip::indexed(xhat).and(grad).for_each(|(_, i), v, g| {
        if mask[i] {
            *v += step * g;
        }
    });
}

/// Gradient step whose size on coordinate `(j, i)` is `step / (1 + 2|step| c)`,
/// where `c = curvature(j, i)` is the weight of a `c (xhat - x)^2` term in the
/// objective. This is the proximal step for that term, so large multipliers
/// shrink deviations instead of making the iteration oscillate.
pub(crate) fn step_xhat_prox(
    xhat: &mut Array2<f64>,
    grad: &Array2<f64>,
    step: f64,
    mask: &[bool],
    curvature: impl Fn(usize, usize) -> f64,
) {
    ndarray::Zip::indexed(xhat).and(grad).for_each(|(j, i), v, g| {
        if mask[i] {
            *v += step * g / (1.0 + 2.0 * step.abs() * curvature(j, i));
        }
    });
}

pub(crate) fn record_trace(
    state: &mut SolverState,
    prob: &PerturbProblem,
    outer: usize,
    lagrangian: f64,
    mu_grad: &[f64],
) -> Result<()> {
    let selected = finalize(prob, state.xhat.view())?.selected.len();
    state.trace.push(TraceRow {
        outer_iter: outer,
        selected,
        lagrangian,
        lambda_norm: l2_norm(&state.lambda),
        mu_norm: l2_norm(&state.mu),
        mu_grad_norm: l2_norm(mu_grad),
    });
    Ok(())
}

/// Runs `kind` on `prob`.
pub fn solve(kind: SolverKind, prob: &PerturbProblem, hp: &HyperParams) -> Result<SolverState> {
    solve_with(kind, prob, hp, &SolveOptions::default(), &mut NoObserver)
}

pub fn solve_with(
    kind: SolverKind,
    prob: &PerturbProblem,
    hp: &HyperParams,
    opts: &SolveOptions,
    observer: &mut dyn Observer,
) -> Result<SolverState> {
    hp.validate()?;
    if prob.num_samples() == 0 {
        return Err(Error::invalid("problem has no samples"));
    }
    match kind {
        SolverKind::Ms => ms::solve(prob, hp, opts, observer),
        SolverKind::Bcms => bcms::solve(prob, hp, opts, observer),
        SolverKind::Ccms => {
            let k = hp.k_for(prob.num_samples());
            if k > prob.num_samples() {
                return Err(Error::invalid(format!(
                    "k_draws {k} exceeds the number of samples {}",
                    prob.num_samples()
                )));
            }
            ccms::solve(prob, hp, opts, observer)
        }
        SolverKind::Kl => kl::solve(prob, hp, opts, observer),
    }
}

pub fn solve_ms(prob: &PerturbProblem, hp: &HyperParams) -> Result<SolverState> {
    solve(SolverKind::Ms, prob, hp)
}

pub fn solve_bcms(prob: &PerturbProblem, hp: &HyperParams) -> Result<SolverState> {
    solve(SolverKind::Bcms, prob, hp)
}

pub fn solve_ccms(prob: &PerturbProblem, hp: &HyperParams) -> Result<SolverState> {
    solve(SolverKind::Ccms, prob, hp)
}

pub fn solve_kl(prob: &PerturbProblem, hp: &HyperParams) -> Result<SolverState> {
    solve(SolverKind::Kl, prob, hp)
}

/// Violations and their gradients for every sample; gradients are zeroed on
/// frozen features.
pub(crate) fn violations_with_grads(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let (n, p) = xhat.dim();
    let mut h = Vec::with_capacity(n);
    let mut grads = Array2::zeros((n, p));
    for j in 0..n {
        let (hj, g) = prob.confidence_violation_grad(xhat.row(j), j)?;
        h.push(hj);
        for i in 0..p {
            if prob.mask()[i] {
                grads[[j, i]] = g[i];
            }
        }
    }
    Ok((h, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_strictly_decay() {
        let hp = HyperParams::default();
        let mut prev = hp.multiplier_rates(0);
        for t in 1..50 {
            let r = hp.multiplier_rates(t);
            assert!(r.0 < prev.0 && r.1 < prev.1);
            prev = r;
        }
    }

    #[test]
    fn kind_parsing() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
        assert!("sgd".parse::<SolverKind>().is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = [
            HyperParams { alpha: 0.0, ..Default::default() },
            HyperParams { n_samples: 0, ..Default::default() },
            HyperParams { epsilon: 1.0, ..Default::default() },
            HyperParams { tau: 1.0, ..Default::default() },
            HyperParams { k_draws: Some(0), ..Default::default() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
        let hp: HyperParams = serde_json::from_str(r#"{"alpha": 0.05}"#).unwrap();
        assert_eq!(hp.alpha, 0.05);
        assert!(serde_json::from_str::<HyperParams>(r#"{"alhpa": 0.05}"#).is_err());
    }
}
