//! Masked nonnegative tri-factorization `X ≈ P S Qᵀ` with row-sum penalties,
//! and extraction of hard cluster memberships from the factors.
//!
//! The objective is
//!
//! ```text
//! ‖(X − P S Qᵀ) ⊙ W‖²_F + α‖P·1 − 1‖² + β‖Q·1 − 1‖²,   P, S, Q ≥ 0
//! ```
//!
//! minimized block-wise (P, then S, then Q) by projected gradient steps with
//! Armijo backtracking, so every accepted iteration is non-increasing.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::optim::Backtracking;
use crate::ratings::SparseRatingMatrix;

/// Width of the window used by the relative-decrease stopping rule.
pub const STOP_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoClusterConfig {
    pub k1: usize,
    pub k2: usize,
    #[serde(default = "default_penalty")]
    pub alpha: f64,
    #[serde(default = "default_penalty")]
    pub beta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_penalty() -> f64 {
    1.0
}
fn default_max_iters() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-5
}

impl CoClusterConfig {
    pub fn new(k1: usize, k2: usize) -> Self {
        Self {
            k1,
            k2,
            alpha: default_penalty(),
            beta: default_penalty(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed: 0,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, x: &SparseRatingMatrix) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidConfig("k1 and k2 must be at least 1".into()));
        }
        if self.k1 > x.n_users() || self.k2 > x.n_items() {
            return Err(Error::InvalidConfig(format!(
                "k1={} k2={} exceed the {}x{} source matrix",
                self.k1,
                self.k2,
                x.n_users(),
                x.n_items()
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TriFactorization {
    pub p: DenseMatrix,
    pub s: DenseMatrix,
    pub q: DenseMatrix,
    /// Objective at initialization followed by one value per iteration.
    pub objective_trace: Vec<f64>,
}

impl TriFactorization {
    pub fn user_memberships(&self) -> Result<MembershipMatrix> {
        binarize(&self.p)
    }

    pub fn item_memberships(&self) -> Result<MembershipMatrix> {
        binarize(&self.q)
    }

    /// Dense `P S Qᵀ`.
    pub fn reconstruction(&self) -> DenseMatrix {
        self.p
            .matmul(&self.s)
            .and_then(|ps| ps.matmul_t(&self.q))
            .expect("factor shapes are consistent")
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    /// Two-column `iteration,objective` CSV of the trace.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (t, v) in self.objective_trace.iter().enumerate() {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }
}

/// Hard cluster assignment, one cluster per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipMatrix {
    assignments: Vec<usize>,
    n_clusters: usize,
}

impl MembershipMatrix {
    pub fn new(assignments: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if let Some(&bad) = assignments.iter().find(|&&a| a >= n_clusters) {
            return Err(Error::ShapeMismatch(format!(
                "cluster index {bad} with only {n_clusters} clusters"
            )));
        }
        Ok(Self {
            assignments,
            n_clusters,
        })
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn cluster_of(&self, row: usize) -> usize {
        self.assignments[row]
    }

    pub fn n_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// One-hot indicator matrix (rows × clusters).
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows(), self.n_clusters);
        for (i, &a) in self.assignments.iter().enumerate() {
            m[(i, a)] = 1.0;
        }
        m
    }
}

/// Maps every row to the column of its largest entry; ties go to the lowest
/// column index.
pub fn binarize(f: &DenseMatrix) -> Result<MembershipMatrix> {
    if f.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("membership factor"));
    }
    let assignments = (0..f.rows())
        .map(|i| {
            let row = f.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(MembershipMatrix {
        assignments,
        n_clusters: f.cols(),
    })
}

/// Evaluates the penalized masked tri-factorization objective.
pub fn onmtf_objective(
    x: &SparseRatingMatrix,
    p: &DenseMatrix,
    s: &DenseMatrix,
    q: &DenseMatrix,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    check_shapes(x, p, s, q)?;
    for (name, m) in [("P", p), ("S", s), ("Q", q)] {
        if m.min() < 0.0 {
            return Err(Error::NegativeFactor(name));
        }
    }
    Ok(objective_unchecked(x, p, s, q, alpha, beta))
}

fn check_shapes(
    x: &SparseRatingMatrix,
    p: &DenseMatrix,
    s: &DenseMatrix,
    q: &DenseMatrix,
) -> Result<()> {
    let (k1, k2) = s.shape();
    if p.shape() != (x.n_users(), k1) || q.shape() != (x.n_items(), k2) {
        return Err(Error::ShapeMismatch(format!(
            "P {:?}, S {:?}, Q {:?} against a {}x{} matrix",
            p.shape(),
            s.shape(),
            q.shape(),
            x.n_users(),
            x.n_items()
        )));
    }
    Ok(())
}

fn row_sum_penalty(m: &DenseMatrix) -> f64 {
    m.row_sums().iter().map(|s| (s - 1.0) * (s - 1.0)).sum()
}

/// Residuals `x_ij − (PSQᵀ)_ij` in triple order, given `PS`.
fn residuals(x: &SparseRatingMatrix, ps: &DenseMatrix, q: &DenseMatrix) -> Vec<f64> {
    x.iter()
        .map(|t| t.rating as f64 - dot(ps.row(t.user), q.row(t.item)))
        .collect()
}

fn objective_unchecked(
    x: &SparseRatingMatrix,
    p: &DenseMatrix,
    s: &DenseMatrix,
    q: &DenseMatrix,
    alpha: f64,
    beta: f64,
) -> f64 {
    let ps = p.matmul(s).expect("shapes checked");
    let fit: f64 = residuals(x, &ps, q).iter().map(|r| r * r).sum();
    fit + alpha * row_sum_penalty(p) + beta * row_sum_penalty(q)
}

/// `R Q` where `R` is the sparse residual matrix.
fn residual_times(x: &SparseRatingMatrix, res: &[f64], q: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.n_users(), q.cols());
    for (t, &r) in x.iter().zip(res) {
        for (o, &v) in out.row_mut(t.user).iter_mut().zip(q.row(t.item)) {
            *o += r * v;
        }
    }
    out
}

/// `Rᵀ A` where `R` is the sparse residual matrix.
fn residual_t_times(x: &SparseRatingMatrix, res: &[f64], a: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.n_items(), a.cols());
    for (t, &r) in x.iter().zip(res) {
        for (o, &v) in out.row_mut(t.item).iter_mut().zip(a.row(t.user)) {
            *o += r * v;
        }
    }
    out
}

fn add_row_sum_gradient(grad: &mut DenseMatrix, factor: &DenseMatrix, weight: f64) {
    if weight == 0.0 {
        return;
    }
    for (i, s) in factor.row_sums().into_iter().enumerate() {
        let g = 2.0 * weight * (s - 1.0);
        for v in grad.row_mut(i) {
            *v += g;
        }
    }
}

fn random_stochastic_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        let row = m.row_mut(i);
        for v in row.iter_mut() {
            // open interval (0, 1)
            *v = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    m
}

/// Factorizes the observed source ratings.
///
/// Runs at most `cfg.max_iters` sweeps; stopping early is not an error.
pub fn factorize(x: &SparseRatingMatrix, cfg: &CoClusterConfig) -> Result<TriFactorization> {
    cfg.validate(x)?;
    let mean = x.observed_mean()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = random_stochastic_rows(&mut rng, x.n_users(), cfg.k1);
    let mut q = random_stochastic_rows(&mut rng, x.n_items(), cfg.k2);
    let mut s = DenseMatrix::filled(cfg.k1, cfg.k2, mean);
    factorize_from(x, cfg, &mut p, &mut s, &mut q)
}

/// Continues the block-wise descent from the given nonnegative factors.
pub fn factorize_from(
    x: &SparseRatingMatrix,
    cfg: &CoClusterConfig,
    p: &mut DenseMatrix,
    s: &mut DenseMatrix,
    q: &mut DenseMatrix,
) -> Result<TriFactorization> {
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    let mut value = onmtf_objective(x, p, s, q, alpha, beta)?;
    if !value.is_finite() {
        return Err(Error::Diverged("initial objective is not finite".into()));
    }
    let mut trace = vec![value];
    let search = Backtracking::projected();
    let mut steps = [1.0f64; 3];

    for _ in 0..cfg.max_iters {
        let mut moved = false;

        // P block
        let ps = p.matmul(s)?;
        let res = residuals(x, &ps, q);
        let rq = residual_times(x, &res, q);
        let mut grad = rq.matmul_t(s)?.map(|v| -2.0 * v);
        add_row_sum_gradient(&mut grad, p, alpha);
        if let Some(acc) = search.search(&[p], &[&grad], value, steps[0], |t| {
            Ok(objective_unchecked(x, &t[0], s, q, alpha, beta))
        })? {
            steps[0] = acc.step * 2.0;
            value = acc.value;
            *p = acc.params.into_iter().next().expect("one block");
            moved = true;
        }

        // S block
        let ps = p.matmul(s)?;
        let res = residuals(x, &ps, q);
        let rq = residual_times(x, &res, q);
        let grad = p.t_matmul(&rq)?.map(|v| -2.0 * v);
        if let Some(acc) = search.search(&[s], &[&grad], value, steps[1], |t| {
            Ok(objective_unchecked(x, p, &t[0], q, alpha, beta))
        })? {
            steps[1] = acc.step * 2.0;
            value = acc.value;
            *s = acc.params.into_iter().next().expect("one block");
            moved = true;
        }

        // Q block
        let ps = p.matmul(s)?;
        let res = residuals(x, &ps, q);
        let mut grad = residual_t_times(x, &res, &ps).map(|v| -2.0 * v);
        add_row_sum_gradient(&mut grad, q, beta);
        if let Some(acc) = search.search(&[q], &[&grad], value, steps[2], |t| {
            Ok(objective_unchecked(x, p, s, &t[0], alpha, beta))
        })? {
            steps[2] = acc.step * 2.0;
            value = acc.value;
            *q = acc.params.into_iter().next().expect("one block");
            moved = true;
        }

        if !value.is_finite() {
            return Err(Error::Diverged(format!(
                "objective became {value} after {} iterations",
                trace.len()
            )));
        }
        trace.push(value);
        if !moved || stalled(&trace, cfg.tol) {
            break;
        }
    }

    Ok(TriFactorization {
        p: p.clone(),
        s: s.clone(),
        q: q.clone(),
        objective_trace: trace,
    })
}

/// Relative decrease over the last `STOP_WINDOW` iterations fell below `tol`.
pub(crate) fn stalled(trace: &[f64], tol: f64) -> bool {
    if trace.len() <= STOP_WINDOW {
        return false;
    }
    let old = trace[trace.len() - 1 - STOP_WINDOW];
    let new = trace[trace.len() - 1];
    if old == 0.0 {
        return true;
    }
    (old - new) / old.abs() < tol
}
