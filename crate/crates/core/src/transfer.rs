//! Transfers a fixed codebook `B` to a target rating matrix by learning user
//! factors `U`, item factors `V` and per-user ordinal thresholds `Θ` under a
//! smoothed hinge loss:
//!
//! ```text
//! J(U, V, Θ) = Σ_{(i,j)∈Ω} Σ_{c=1}^{r−1} h(T_ij^c (θ_ic − z_ij)) + λ/2 (‖U‖² + ‖V‖²)
//! z = U B Vᵀ,   T_ij^c = −1 if c < y_ij else +1
//! ```
//!
//! With `B = I` this is plain maximum-margin matrix factorization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cocluster::stalled;
use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::optim::Backtracking;
use crate::ratings::SparseRatingMatrix;

/// Standard deviation of the initial factor entries.
pub const INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// Armijo backtracking; the objective never increases.
    #[default]
    Backtracking,
    /// Plain `x ← x − learn_rate · ∇J` every iteration.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Gradient step (initial trial step under backtracking).
    #[serde(default = "default_learn_rate")]
    pub learn_rate: f64,
    /// Factor applied to the last accepted step to form the next initial
    /// trial step under backtracking. 1 never grows past an accepted step.
    #[serde(default = "default_step_growth")]
    pub step_growth: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_r_max")]
    pub r_max: u8,
    #[serde(default)]
    pub step: StepPolicy,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_learn_rate() -> f64 {
    0.01
}
fn default_step_growth() -> f64 {
    2.0
}
fn default_max_iters() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-5
}
fn default_r_max() -> u8 {
    5
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            learn_rate: default_learn_rate(),
            step_growth: default_step_growth(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed: 0,
            r_max: default_r_max(),
            step: StepPolicy::default(),
        }
    }
}

impl TransferConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("lambda must be > 0".into()));
        }
        if !(self.learn_rate > 0.0) {
            return Err(Error::InvalidConfig("learn_rate must be > 0".into()));
        }
        if !(self.step_growth >= 1.0) {
            return Err(Error::InvalidConfig("step_growth must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0".into()));
        }
        if self.r_max < 2 {
            return Err(Error::InvalidConfig("r_max must be >= 2".into()));
        }
        Ok(())
    }
}

/// Smoothed hinge: 0 for d ≥ 1, ½(1−d)² on (0, 1), ½ − d otherwise.
#[inline]
pub fn smoothed_hinge(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else if d > 0.0 {
        0.5 * (1.0 - d) * (1.0 - d)
    } else {
        0.5 - d
    }
}

#[inline]
pub fn smoothed_hinge_grad(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else if d > 0.0 {
        d - 1.0
    } else {
        -1.0
    }
}

/// −1 when threshold `c` lies below rating `y`, +1 otherwise.
#[inline]
pub fn ordinal_sign(c: u8, y: u8) -> f64 {
    if c < y {
        -1.0
    } else {
        1.0
    }
}

/// Decoded rating: one plus the number of thresholds at or below `score`.
#[inline]
pub fn decode_score(score: f64, thresholds: &[f64]) -> u8 {
    1 + thresholds.iter().filter(|&&t| score >= t).count() as u8
}

#[derive(Clone, Debug)]
pub struct TransferModel {
    u: DenseMatrix,
    v: DenseMatrix,
    theta: DenseMatrix,
    codebook: DenseMatrix,
    // U · B, cached for scoring
    ub: DenseMatrix,
    objective_trace: Vec<f64>,
}

impl TransferModel {
    pub fn new(
        u: DenseMatrix,
        v: DenseMatrix,
        theta: DenseMatrix,
        codebook: DenseMatrix,
    ) -> Result<Self> {
        if u.cols() != codebook.rows() || v.cols() != codebook.cols() {
            return Err(Error::ShapeMismatch(format!(
                "U {:?} and V {:?} do not fit codebook {:?}",
                u.shape(),
                v.shape(),
                codebook.shape()
            )));
        }
        if theta.rows() != u.rows() || theta.cols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "thresholds {:?} for {} users",
                theta.shape(),
                u.rows()
            )));
        }
        let ub = u.matmul(&codebook)?;
        Ok(Self {
            u,
            v,
            theta,
            codebook,
            ub,
            objective_trace: Vec::new(),
        })
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    pub fn codebook(&self) -> &DenseMatrix {
        &self.codebook
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn n_users(&self) -> usize {
        self.u.rows()
    }

    pub fn n_items(&self) -> usize {
        self.v.rows()
    }

    pub fn r_max(&self) -> u8 {
        self.theta.cols() as u8 + 1
    }

    /// Raw score `(U B Vᵀ)_ij`.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.ub.row(user), self.v.row(item))
    }

    pub fn predict(&self, user: usize, item: usize) -> u8 {
        decode_score(self.score(user, item), self.theta.row(user))
    }

    /// Fraction of users whose thresholds are not non-decreasing.
    pub fn unordered_threshold_fraction(&self) -> f64 {
        if self.theta.rows() == 0 {
            return 0.0;
        }
        let unordered = (0..self.theta.rows())
            .filter(|&i| self.theta.row(i).windows(2).any(|w| w[0] > w[1]))
            .count();
        unordered as f64 / self.theta.rows() as f64
    }

    /// Writes `U.csv`, `V.csv`, `theta.csv` and a `model.txt` key=value header.
    pub fn export(&self, dir: &Path, cfg: &TransferConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("U.csv"), self.u.to_csv())?;
        fs::write(dir.join("V.csv"), self.v.to_csv())?;
        fs::write(dir.join("theta.csv"), self.theta.to_csv())?;
        fs::write(dir.join("model.txt"), self.header(cfg))?;
        Ok(())
    }

    pub fn header(&self, cfg: &TransferConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_users={}", self.n_users());
        let _ = writeln!(out, "n_items={}", self.n_items());
        let _ = writeln!(out, "k1={}", self.codebook.rows());
        let _ = writeln!(out, "k2={}", self.codebook.cols());
        let _ = writeln!(out, "r_max={}", self.r_max());
        let _ = writeln!(out, "lambda={}", cfg.lambda);
        let _ = writeln!(out, "seed={}", cfg.seed);
        let _ = writeln!(
            out,
            "iterations={}",
            self.objective_trace.len().saturating_sub(1)
        );
        if let Some(last) = self.objective_trace.last() {
            let _ = writeln!(out, "final_objective={last}");
        }
        let _ = writeln!(
            out,
            "unordered_threshold_fraction={}",
            self.unordered_threshold_fraction()
        );
        out
    }
}

/// Dense decoded ratings with the raw scores they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    scores: DenseMatrix,
    ratings: Vec<u8>,
}

impl PredictionMatrix {
    pub fn rating(&self, user: usize, item: usize) -> u8 {
        self.ratings[user * self.scores.cols() + item]
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.scores[(user, item)]
    }

    pub fn scores(&self) -> &DenseMatrix {
        &self.scores
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.shape()
    }
}

pub fn decode(model: &TransferModel) -> PredictionMatrix {
    let scores = model
        .ub
        .matmul_t(&model.v)
        .expect("model shapes are consistent");
    let mut ratings = Vec::with_capacity(scores.rows() * scores.cols());
    for i in 0..scores.rows() {
        let thresholds = model.theta.row(i);
        ratings.extend(scores.row(i).iter().map(|&z| decode_score(z, thresholds)));
    }
    PredictionMatrix { scores, ratings }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub theta: DenseMatrix,
}

fn check_target(y: &SparseRatingMatrix, model: &TransferModel) -> Result<()> {
    if y.n_users() != model.n_users() || y.n_items() != model.n_items() {
        return Err(Error::ShapeMismatch(format!(
            "model is {}x{}, ratings are {}x{}",
            model.n_users(),
            model.n_items(),
            y.n_users(),
            y.n_items()
        )));
    }
    if model.theta.cols() + 1 != y.r_max() as usize {
        return Err(Error::ShapeMismatch(format!(
            "{} thresholds per user for ratings up to {}",
            model.theta.cols(),
            y.r_max()
        )));
    }
    Ok(())
}

pub fn objective(y: &SparseRatingMatrix, model: &TransferModel, lambda: f64) -> Result<f64> {
    check_target(y, model)?;
    Ok(evaluate(
        y,
        &model.codebook,
        &model.u,
        &model.v,
        &model.theta,
        lambda,
        false,
    )
    .0)
}

pub fn gradients(y: &SparseRatingMatrix, model: &TransferModel, lambda: f64) -> Result<Gradients> {
    check_target(y, model)?;
    let (_, grads) = evaluate(
        y,
        &model.codebook,
        &model.u,
        &model.v,
        &model.theta,
        lambda,
        true,
    );
    Ok(grads.expect("requested"))
}

fn evaluate(
    y: &SparseRatingMatrix,
    b: &DenseMatrix,
    u: &DenseMatrix,
    v: &DenseMatrix,
    theta: &DenseMatrix,
    lambda: f64,
    with_grad: bool,
) -> (f64, Option<Gradients>) {
    let ub = u.matmul(b).expect("shapes checked");
    let levels = theta.cols() as u8;
    let mut loss = 0.0;

    let mut grad_theta = DenseMatrix::zeros(theta.rows(), theta.cols());
    // Σ_j g_ij V_j per user, later multiplied by Bᵀ
    let mut weighted_v = DenseMatrix::zeros(u.rows(), v.cols());
    let mut grad_v = v.map(|x| lambda * x);

    for t in y.iter() {
        let z = dot(ub.row(t.user), v.row(t.item));
        let th = theta.row(t.user);
        // g = Σ_c T·h'(T(θ − z)) = −∂J/∂z
        let mut g = 0.0;
        for c in 1..=levels {
            let sign = ordinal_sign(c, t.rating);
            let d = sign * (th[c as usize - 1] - z);
            loss += smoothed_hinge(d);
            if with_grad {
                let hp = sign * smoothed_hinge_grad(d);
                grad_theta[(t.user, c as usize - 1)] += hp;
                g += hp;
            }
        }
        if with_grad && g != 0.0 {
            for (w, &x) in weighted_v.row_mut(t.user).iter_mut().zip(v.row(t.item)) {
                *w += g * x;
            }
            for (gv, &x) in grad_v.row_mut(t.item).iter_mut().zip(ub.row(t.user)) {
                *gv -= g * x;
            }
        }
    }

    let value = loss + 0.5 * lambda * (u.frobenius_sq() + v.frobenius_sq());
    if !with_grad {
        return (value, None);
    }
    let grad_u = u
        .map(|x| lambda * x)
        .add_scaled(-1.0, &weighted_v.matmul_t(b).expect("shapes checked"));
    (
        value,
        Some(Gradients {
            u: grad_u,
            v: grad_v,
            theta: grad_theta,
        }),
    )
}

/// Seeded starting point: factors ~ N(0, INIT_STD²), thresholds
/// `θ_ic = c − r/2 + ½` for every user.
pub fn initial_model(
    n_users: usize,
    n_items: usize,
    codebook: &DenseMatrix,
    cfg: &TransferConfig,
) -> Result<TransferModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let u = DenseMatrix::from_fn(n_users, codebook.rows(), |_, _| normal.sample(&mut rng));
    let v = DenseMatrix::from_fn(n_items, codebook.cols(), |_, _| normal.sample(&mut rng));
    let r = cfg.r_max as f64;
    let theta = DenseMatrix::from_fn(n_users, cfg.r_max as usize - 1, |_, c| {
        (c + 1) as f64 - r / 2.0 + 0.5
    });
    TransferModel::new(u, v, theta, codebook.clone())
}

/// Learns `U`, `V`, `Θ` for the target ratings against the fixed codebook.
pub fn fit(
    y: &SparseRatingMatrix,
    codebook: &DenseMatrix,
    cfg: &TransferConfig,
) -> Result<TransferModel> {
    cfg.validate()?;
    if y.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if cfg.r_max != y.r_max() {
        return Err(Error::InvalidConfig(format!(
            "r_max {} does not match the target's {}",
            cfg.r_max,
            y.r_max()
        )));
    }
    if !codebook.is_finite() {
        return Err(Error::NonFinite("codebook"));
    }
    let init = initial_model(y.n_users(), y.n_items(), codebook, cfg)?;
    let TransferModel {
        mut u,
        mut v,
        mut theta,
        ..
    } = init;
    let lambda = cfg.lambda;
    let search = Backtracking::default();
    let mut step = cfg.learn_rate;

    let (mut value, _) = evaluate(y, codebook, &u, &v, &theta, lambda, false);
    let mut trace = vec![value];

    for _ in 0..cfg.max_iters {
        let (current, grads) = evaluate(y, codebook, &u, &v, &theta, lambda, true);
        debug_assert_eq!(current, value);
        let g = grads.expect("requested");
        match cfg.step {
            StepPolicy::Backtracking => {
                let accepted = search.search(
                    &[&u, &v, &theta],
                    &[&g.u, &g.v, &g.theta],
                    value,
                    step,
                    |p| Ok(evaluate(y, codebook, &p[0], &p[1], &p[2], lambda, false).0),
                )?;
                let Some(acc) = accepted else {
                    break;
                };
                step = acc.step * cfg.step_growth;
                value = acc.value;
                let mut it = acc.params.into_iter();
                u = it.next().expect("U");
                v = it.next().expect("V");
                theta = it.next().expect("Θ");
            }
            StepPolicy::Fixed => {
                u = u.add_scaled(-cfg.learn_rate, &g.u);
                v = v.add_scaled(-cfg.learn_rate, &g.v);
                theta = theta.add_scaled(-cfg.learn_rate, &g.theta);
                value = evaluate(y, codebook, &u, &v, &theta, lambda, false).0;
            }
        }
        if !value.is_finite() {
            return Err(Error::Diverged(format!(
                "transfer objective became {value} after {} iterations",
                trace.len()
            )));
        }
        trace.push(value);
        if stalled(&trace, cfg.tol) {
            break;
        }
    }

    let mut model = TransferModel::new(u, v, theta, codebook.clone())?;
    model.objective_trace = trace;
    Ok(model)
}

/// Maximum-margin matrix factorization on the target alone: the transfer
/// objective with `B` fixed to the `k × k` identity.
pub fn fit_baseline_mmmf(
    y: &SparseRatingMatrix,
    k: usize,
    cfg: &TransferConfig,
) -> Result<TransferModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    fit(y, &DenseMatrix::identity(k), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::RatingTriple;

    #[test]
    fn hinge_values() {
        assert_eq!(smoothed_hinge(1.5), 0.0);
        assert_eq!(smoothed_hinge(0.5), 0.125);
        assert_eq!(smoothed_hinge(-1.0), 1.5);
        assert_eq!(smoothed_hinge_grad(2.0), 0.0);
        assert_eq!(smoothed_hinge_grad(0.5), -0.5);
        assert_eq!(smoothed_hinge_grad(-3.0), -1.0);
    }

    #[test]
    fn hinge_is_c1_at_the_joins() {
        assert_eq!(smoothed_hinge(0.0), 0.5);
        assert_eq!(smoothed_hinge(1.0), 0.0);
        assert_eq!(smoothed_hinge_grad(0.0), -1.0);
        assert_eq!(smoothed_hinge_grad(1.0), 0.0);
        let eps = 1e-9;
        assert!((smoothed_hinge(eps) - 0.5).abs() < 1e-8);
        assert!((smoothed_hinge(1.0 - eps)).abs() < 1e-8);
        assert!((smoothed_hinge_grad(eps) + 1.0).abs() < 1e-8);
        assert!((smoothed_hinge_grad(1.0 - eps)).abs() < 1e-8);
    }

    #[test]
    fn ordinal_signs() {
        let signs = |y: u8, r: u8| (1..r).map(|c| ordinal_sign(c, y)).collect::<Vec<_>>();
        assert_eq!(signs(3, 5), vec![-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(signs(1, 5), vec![1.0; 4]);
        assert_eq!(signs(5, 5), vec![-1.0; 4]);
    }

    #[test]
    fn decode_examples() {
        let th = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(decode_score(0.0, &th), 1);
        assert_eq!(decode_score(2.5, &th), 3);
        assert_eq!(decode_score(10.0, &th), 5);
    }

    fn one_entry_model(theta: f64) -> (SparseRatingMatrix, TransferModel) {
        let y = SparseRatingMatrix::new(vec![RatingTriple::new(0, 0, 1)], 1, 1, 2).unwrap();
        let model = TransferModel::new(
            DenseMatrix::zeros(1, 1),
            DenseMatrix::zeros(1, 1),
            DenseMatrix::filled(1, 1, theta),
            DenseMatrix::filled(1, 1, 1.0),
        )
        .unwrap();
        (y, model)
    }

    #[test]
    fn objective_examples() {
        let (y, m) = one_entry_model(1.0);
        assert_eq!(objective(&y, &m, 0.5).unwrap(), 0.0);
        let (y, m) = one_entry_model(0.0);
        assert_eq!(objective(&y, &m, 0.5).unwrap(), 0.5);
        let g = gradients(&y, &m, 0.5).unwrap();
        assert_eq!(g.theta[(0, 0)], -1.0);
    }

    #[test]
    fn zero_loss_region_gradients_are_pure_regularization() {
        // rating 2 of 2, score far above the single threshold
        let y = SparseRatingMatrix::new(vec![RatingTriple::new(0, 0, 2)], 1, 1, 2).unwrap();
        let m = TransferModel::new(
            DenseMatrix::filled(1, 1, 3.0),
            DenseMatrix::filled(1, 1, 2.0),
            DenseMatrix::filled(1, 1, 0.0),
            DenseMatrix::filled(1, 1, 1.0),
        )
        .unwrap();
        let g = gradients(&y, &m, 0.3).unwrap();
        assert!((g.u[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((g.v[(0, 0)] - 0.6).abs() < 1e-15);
        assert_eq!(g.theta[(0, 0)], 0.0);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let y = SparseRatingMatrix::new(vec![RatingTriple::new(0, 0, 3)], 1, 1, 5).unwrap();
        let cfg = TransferConfig {
            max_iters: 0,
            ..TransferConfig::default()
        };
        let b = DenseMatrix::filled(1, 1, 2.0);
        let model = fit(&y, &b, &cfg).unwrap();
        let init = initial_model(1, 1, &b, &cfg).unwrap();
        assert_eq!(model.objective_trace().len(), 1);
        assert_eq!(model.u(), init.u());
        assert_eq!(model.v(), init.v());
        assert_eq!(model.theta(), init.theta());
    }

    #[test]
    fn initial_thresholds_increase() {
        let cfg = TransferConfig::default();
        let m = initial_model(2, 3, &DenseMatrix::identity(2), &cfg).unwrap();
        assert_eq!(m.theta().row(1), &[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(m.unordered_threshold_fraction(), 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = TransferConfig {
            lambda: 0.0,
            ..TransferConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TransferConfig {
            r_max: 1,
            ..TransferConfig::default()
        };
        assert!(bad.validate().is_err());
        let y = SparseRatingMatrix::new(vec![RatingTriple::new(0, 0, 3)], 1, 1, 4).unwrap();
        assert!(matches!(
            fit(&y, &DenseMatrix::identity(1), &TransferConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
