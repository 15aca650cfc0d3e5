//! Turning a solver's perturbed matrix into an exactly feasible selection.
//!
//! 1. keep the samples whose margin constraint holds at `xhat`;
//! 2. among those, pick a maximum-cardinality subset whose per-feature
//!    consumption fits the budgets (multidimensional 0-1 knapsack with unit
//!    profits).
//!
//! The knapsack is solved exactly by depth-first branch-and-bound when at most
//! [`EXACT_ITEM_LIMIT`] items remain after preprocessing, and by greedy
//! insertion plus pairwise swaps otherwise. Among maximum-cardinality
//! selections the one with the smallest total weight wins, then the
//! lexicographically smallest index set.
//!
//! Every feasibility decision sums weights in ascending item order, the same
//! order [`PerturbProblem::consumption`] uses, so a returned selection passes
//! the replay check bit for bit.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Metrics, PerturbProblem};

pub const EXACT_ITEM_LIMIT: usize = 40;
pub const BRUTEFORCE_ITEM_LIMIT: usize = 20;
const NODE_LIMIT: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnapsackSolution {
    pub selected: Vec<bool>,
    /// Whether the cardinality is proven maximal.
    pub optimal: bool,
}

impl KnapsackSolution {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(s, &on)| on.then_some(s))
            .collect()
    }
}

/// Whether the items flagged in `selected` fit every budget.
pub fn fits(weights: ArrayView2<f64>, budgets: &[f64], selected: &[bool]) -> bool {
    weights.rows().into_iter().zip(budgets).all(|(row, &b)| {
        let used: f64 = row
            .iter()
            .zip(selected)
            .filter(|(_, on)| **on)
            .map(|(a, _)| *a)
            .sum();
        used <= b
    })
}

fn total_weights(weights: ArrayView2<f64>) -> Vec<f64> {
    weights.columns().into_iter().map(|c| c.sum()).collect()
}

/// Exhaustive search over all `2^m` subsets; `m` is capped at
/// [`BRUTEFORCE_ITEM_LIMIT`].
pub fn knapsack_bruteforce(weights: ArrayView2<f64>, budgets: &[f64]) -> Result<Vec<bool>> {
    let (p, m) = weights.dim();
    if budgets.len() != p {
        return Err(Error::Dimension {
            context: "knapsack budgets",
            expected: p,
            got: budgets.len(),
        });
    }
    if m > BRUTEFORCE_ITEM_LIMIT {
        return Err(Error::invalid(format!(
            "brute force is limited to {BRUTEFORCE_ITEM_LIMIT} items, got {m}"
        )));
    }
    let totals = total_weights(weights);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << m) {
        let sel: Vec<bool> = (0..m).map(|s| mask >> s & 1 == 1).collect();
        if !fits(weights, budgets, &sel) {
            continue;
        }
        let idx: Vec<usize> = (0..m).filter(|&s| sel[s]).collect();
        let weight: f64 = idx.iter().map(|&s| totals[s]).sum();
        let better = match &best {
            None => true,
            Some((c, w, set)) => {
                idx.len() > *c || (idx.len() == *c && (weight < *w || (weight == *w && idx < *set)))
            }
        };
        if better {
            best = Some((idx.len(), weight, idx));
        }
    }
    let mut out = vec![false; m];
    if let Some((_, _, idx)) = best {
        for s in idx {
            out[s] = true;
        }
    }
    Ok(out)
}

/// Maximum-cardinality subset of items (columns of `weights`, one row per
/// feature) fitting `budgets`.
pub fn knapsack_select(weights: ArrayView2<f64>, budgets: &[f64]) -> KnapsackSolution {
    let (p, m) = weights.dim();
    assert_eq!(budgets.len(), p, "one budget per weight row");
    let mut selected = vec![false; m];
    let mut active = Vec::new();
    for s in 0..m {
        let col = weights.column(s);
        if col.iter().zip(budgets).any(|(a, b)| a > b) {
            continue;
        }
        if col.iter().all(|a| *a == 0.0) {
            selected[s] = true;
        } else {
            active.push(s);
        }
    }
    let sub = weights.select(ndarray::Axis(1), &active);
    let sub_solution = if active.len() <= EXACT_ITEM_LIMIT {
        BranchAndBound::new(sub.view(), budgets).run()
    } else {
        None
    }
    .unwrap_or_else(|| heuristic(sub.view(), budgets));
    for (pos, &s) in active.iter().enumerate() {
        selected[s] = sub_solution.selected[pos];
    }
    KnapsackSolution {
        selected,
        optimal: sub_solution.optimal,
    }
}

/// Number of items from `order` (ascending weight, positions `>= from`) that
/// fit `cap`; an upper bound on any feasible completion in that dimension.
fn greedy_count(row: &[f64], order: &[usize], from: usize, cap: f64) -> usize {
    let slack = cap + 1e-9 * cap.abs().max(1.0);
    let mut used = 0.0;
    let mut count = 0;
    for &s in order {
        if s < from {
            continue;
        }
        if used + row[s] > slack {
            break;
        }
        used += row[s];
        count += 1;
    }
    count
}

struct BranchAndBound {
    rows: Vec<Vec<f64>>,
    budgets: Vec<f64>,
    totals: Vec<f64>,
    order_by_dim: Vec<Vec<usize>>,
    order_by_total: Vec<usize>,
    m: usize,
    used: Vec<f64>,
    chosen: Vec<bool>,
    best: Option<(usize, f64, Vec<bool>)>,
    nodes: u64,
}

impl BranchAndBound {
    fn new(weights: ArrayView2<f64>, budgets: &[f64]) -> Self {
        let m = weights.ncols();
        let rows: Vec<Vec<f64>> = weights.rows().into_iter().map(|r| r.to_vec()).collect();
        let order_by_dim = rows
            .iter()
            .map(|r| {
                let mut o: Vec<usize> = (0..m).collect();
                o.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b)));
                o
            })
            .collect();
        let totals = total_weights(weights);
        let mut order_by_total: Vec<usize> = (0..m).collect();
        order_by_total.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
        Self {
            used: vec![0.0; rows.len()],
            rows,
            budgets: budgets.to_vec(),
            totals,
            order_by_dim,
            order_by_total,
            m,
            chosen: vec![false; m],
            best: None,
            nodes: 0,
        }
    }

    fn run(mut self) -> Option<KnapsackSolution> {
        self.search(0, 0, 0.0);
        if self.nodes > NODE_LIMIT {
            return None;
        }
        let (_, _, selected) = self.best.expect("empty set is always feasible");
        Some(KnapsackSolution {
            selected,
            optimal: true,
        })
    }

    fn upper_bound(&self, idx: usize, count: usize) -> usize {
        let mut ub = count + (self.m - idx);
        for ((row, order), (&b, &u)) in self
            .rows
            .iter()
            .zip(&self.order_by_dim)
            .zip(self.budgets.iter().zip(&self.used))
        {
            ub = ub.min(count + greedy_count(row, order, idx, b - u));
        }
        ub
    }

    fn min_extra_weight(&self, idx: usize, need: usize) -> f64 {
        self.order_by_total
            .iter()
            .filter(|&&s| s >= idx)
            .take(need)
            .map(|&s| self.totals[s])
            .sum()
    }

    fn search(&mut self, idx: usize, count: usize, weight: f64) {
        self.nodes += 1;
        if self.nodes > NODE_LIMIT {
            return;
        }
        if idx == self.m {
            let better = match &self.best {
                None => true,
                Some((c, w, _)) => count > *c || (count == *c && weight < *w),
            };
            if better {
                self.best = Some((count, weight, self.chosen.clone()));
            }
            return;
        }
        if let Some((best_count, best_weight, _)) = &self.best {
            let ub = self.upper_bound(idx, count);
            if ub < *best_count {
                return;
            }
            if ub == *best_count {
                let extra = self.min_extra_weight(idx, best_count - count);
                if weight + extra >= *best_weight {
                    return;
                }
            }
        }
        let fits = self
            .rows
            .iter()
            .zip(&self.used)
            .zip(&self.budgets)
            .all(|((row, u), b)| u + row[idx] <= *b);
        if fits {
            let saved = self.used.clone();
            for (u, row) in self.used.iter_mut().zip(&self.rows) {
                *u += row[idx];
            }
            self.chosen[idx] = true;
            self.search(idx + 1, count + 1, weight + self.totals[idx]);
            self.chosen[idx] = false;
            self.used = saved;
        }
        self.search(idx + 1, count, weight);
    }
}

/// Greedy insertion by budget-normalized weight, then swaps that lower the
/// load and re-insertion until nothing improves.
fn heuristic(weights: ArrayView2<f64>, budgets: &[f64]) -> KnapsackSolution {
    let m = weights.ncols();
    let load: Vec<f64> = (0..m)
        .map(|s| {
            weights
                .column(s)
                .iter()
                .zip(budgets)
                .filter(|(_, b)| **b > 0.0)
                .map(|(a, b)| a / b)
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)));

    let mut sel = vec![false; m];
    let try_insert = |sel: &mut Vec<bool>| {
        let mut added = false;
        for &s in &order {
            if !sel[s] {
                sel[s] = true;
                if fits(weights, budgets, sel) {
                    added = true;
                } else {
                    sel[s] = false;
                }
            }
        }
        added
    };
    try_insert(&mut sel);

    for _ in 0..m * m {
        let mut swapped = false;
        'outer: for &t in &order {
            if sel[t] {
                continue;
            }
            for &s in order.iter().rev() {
                if !sel[s] || load[s] <= load[t] {
                    continue;
                }
                sel[s] = false;
                sel[t] = true;
                if fits(weights, budgets, &sel) {
                    swapped = true;
                    break 'outer;
                }
                sel[s] = true;
                sel[t] = false;
            }
        }
        let added = try_insert(&mut sel);
        if !swapped && !added {
            break;
        }
    }

    let count = sel.iter().filter(|s| **s).count();
    let bound = weights
        .rows()
        .into_iter()
        .zip(budgets)
        .map(|(row, &b)| {
            let row = row.to_vec();
            let mut o: Vec<usize> = (0..m).collect();
            o.sort_by(|&a, &c| row[a].total_cmp(&row[c]));
            greedy_count(&row, &o, 0, b)
        })
        .min()
        .unwrap_or(m);
    KnapsackSolution {
        selected: sel,
        optimal: count >= bound,
    }
}

/// Samples whose margin constraint holds exactly at `xhat`.
pub fn filter_confident(prob: &PerturbProblem, xhat: ArrayView2<f64>) -> Result<Vec<usize>> {
    Ok(prob
        .violations(xhat)?
        .into_iter()
        .enumerate()
        .filter_map(|(j, h)| (h == 0.0).then_some(j))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalized {
    pub selected: Vec<usize>,
    pub metrics: Metrics,
    pub optimal: bool,
}

/// Confident samples, then the knapsack over their squared deviations.
pub fn finalize(prob: &PerturbProblem, xhat: ArrayView2<f64>) -> Result<Finalized> {
    prob.check_frozen(xhat)?;
    let confident = filter_confident(prob, xhat)?;
    let dev = prob.sq_deviations(xhat);
    let weights: Array2<f64> = dev.select(ndarray::Axis(0), &confident).reversed_axes();
    let solution = knapsack_select(weights.view(), prob.budgets());
    let selected: Vec<usize> = solution.indices().into_iter().map(|pos| confident[pos]).collect();
    let metrics = prob.metrics(xhat, &selected)?;
    Ok(Finalized {
        selected,
        metrics,
        optimal: solution.optimal,
    })
}

/// Independent replay of both constraint families for a stored selection.
/// Returns a description of every violation found.
pub fn verify_selection(
    prob: &PerturbProblem,
    xhat: ArrayView2<f64>,
    selected: &[usize],
) -> Result<Vec<String>> {
    prob.check_frozen(xhat)?;
    let mut problems = Vec::new();
    let used = prob.consumption(xhat, selected);
    for (i, (u, b)) in used.iter().zip(prob.budgets()).enumerate() {
        if u > b {
            problems.push(format!("feature {i}: consumption {u} exceeds budget {b}"));
        }
    }
    for &j in selected {
        let h = prob.confidence_violation(xhat.row(j), j)?;
        if h != 0.0 {
            problems.push(format!("sample {j}: margin violation {h}"));
        }
    }
    Ok(problems)
}
