//! Hold-out evaluation: seeded splits, RMSE/MAE, repeated runs and
//! cluster-count sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocluster::{factorize, CoClusterConfig, MembershipMatrix, TriFactorization};
use crate::codebook::{build_codebook, AveragingMode, Codebook};
use crate::error::{Error, Result};
use crate::ratings::SparseRatingMatrix;
use crate::transfer::{fit, fit_baseline_mmmf, PredictionMatrix, TransferConfig, TransferModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "train_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform random partition of the observed ratings.
///
/// The train side receives `round(fraction · |Ω|)` entries (halves round up),
/// clamped so both sides are non-empty.
pub fn split(
    y: &SparseRatingMatrix,
    spec: &SplitSpec,
) -> Result<(SparseRatingMatrix, SparseRatingMatrix)> {
    spec.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewEntries(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((spec.train_fraction * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((y.select(train), y.select(test)))
}

/// Anything that can produce a rating for a (user, item) cell.
pub trait Predictor {
    fn predict(&self, user: usize, item: usize) -> f64;
}

impl Predictor for PredictionMatrix {
    fn predict(&self, user: usize, item: usize) -> f64 {
        self.rating(user, item) as f64
    }
}

impl Predictor for TransferModel {
    fn predict(&self, user: usize, item: usize) -> f64 {
        TransferModel::predict(self, user, item) as f64
    }
}

/// Predicts the same value everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, _: usize, _: usize) -> f64 {
        self.0
    }
}

/// Falls back to a constant for users or items absent from training.
pub struct ColdStartFallback<'a, P> {
    inner: &'a P,
    known_users: Vec<bool>,
    known_items: Vec<bool>,
    fallback: f64,
}

impl<'a, P: Predictor> ColdStartFallback<'a, P> {
    pub fn new(inner: &'a P, train: &SparseRatingMatrix, fallback: f64) -> Self {
        let mut known_users = vec![false; train.n_users()];
        let mut known_items = vec![false; train.n_items()];
        for t in train.iter() {
            known_users[t.user] = true;
            known_items[t.item] = true;
        }
        Self {
            inner,
            known_users,
            known_items,
            fallback,
        }
    }
}

impl<P: Predictor> Predictor for ColdStartFallback<'_, P> {
    fn predict(&self, user: usize, item: usize) -> f64 {
        if self.known_users[user] && self.known_items[item] {
            self.inner.predict(user, item)
        } else {
            self.fallback
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
}

pub fn error_metrics(truth: &SparseRatingMatrix, pred: &impl Predictor) -> Result<ErrorMetrics> {
    if truth.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for t in truth.iter() {
        let r = t.rating as f64 - pred.predict(t.user, t.item);
        sq += r * r;
        abs += r.abs();
    }
    let n = truth.len() as f64;
    Ok(ErrorMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
    })
}

pub fn rmse(truth: &SparseRatingMatrix, pred: &impl Predictor) -> Result<f64> {
    error_metrics(truth, pred).map(|m| m.rmse)
}

pub fn mae(truth: &SparseRatingMatrix, pred: &impl Predictor) -> Result<f64> {
    error_metrics(truth, pred).map(|m| m.mae)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Codebook from the source, transferred with the hinge objective.
    #[default]
    Proposed,
    /// Identity codebook of size `k1` on the target alone.
    BaselineMmmf,
    /// Training-set mean everywhere.
    GlobalMean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::BaselineMmmf => "baseline-mmmf",
            Method::GlobalMean => "global-mean",
        }
    }
}

/// What a test entry gets when its user or item has no training rating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColdStart {
    /// Decode from the (regularized, never-updated) learned factors.
    #[default]
    Model,
    /// Use the training mean.
    GlobalMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub cocluster: CoClusterConfig,
    #[serde(default)]
    pub averaging: AveragingMode,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub cold_start: ColdStart,
    /// Run repetitions one after another instead of on the thread pool.
    /// Results are identical either way.
    #[serde(skip)]
    pub serial: bool,
}

fn default_runs() -> usize {
    5
}

impl ProtocolConfig {
    pub fn new(k1: usize, k2: usize) -> Self {
        Self {
            cocluster: CoClusterConfig::new(k1, k2),
            averaging: AveragingMode::default(),
            transfer: TransferConfig::default(),
            split: SplitSpec::default(),
            runs: default_runs(),
            method: Method::default(),
            cold_start: ColdStart::default(),
            serial: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        self.split.validate()?;
        self.transfer.validate()
    }
}

/// Source-side artifacts: factors, memberships and the codebook.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub factorization: TriFactorization,
    pub users: MembershipMatrix,
    pub items: MembershipMatrix,
    pub codebook: Codebook,
}

pub fn learn_codebook(
    source: &SparseRatingMatrix,
    cfg: &CoClusterConfig,
    averaging: AveragingMode,
) -> Result<SourceModel> {
    let factorization = factorize(source, cfg)?;
    let users = factorization.user_memberships()?;
    let items = factorization.item_memberships()?;
    let codebook = build_codebook(source, &users, &items, averaging)?;
    Ok(SourceModel {
        factorization,
        users,
        items,
        codebook,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub n_test: usize,
    pub global_mean_rmse: f64,
    pub global_mean_mae: f64,
    /// Optimizer iterations (0 for the constant predictor).
    pub iterations: usize,
    pub final_objective: f64,
    pub unordered_threshold_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub rmse: f64,
    pub mae: f64,
    pub global_mean_rmse: f64,
    pub global_mean_mae: f64,
    pub per_run: Vec<RunResult>,
    pub n_test: usize,
    pub config_echo: Vec<(String, String)>,
}

impl EvalReport {
    fn from_runs(
        method: Method,
        per_run: Vec<RunResult>,
        config_echo: Vec<(String, String)>,
    ) -> Self {
        let n = per_run.len() as f64;
        let mean = |f: fn(&RunResult) -> f64| per_run.iter().map(f).sum::<f64>() / n;
        Self {
            method,
            rmse: mean(|r| r.rmse),
            mae: mean(|r| r.mae),
            global_mean_rmse: mean(|r| r.global_mean_rmse),
            global_mean_mae: mean(|r| r.global_mean_mae),
            n_test: per_run.first().map_or(0, |r| r.n_test),
            per_run,
            config_echo,
        }
    }

    /// Line-oriented `key=value` report including the resolved configuration.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method={}", self.method.name());
        let _ = writeln!(out, "runs={}", self.per_run.len());
        let _ = writeln!(out, "n_test={}", self.n_test);
        let _ = writeln!(out, "rmse={}", self.rmse);
        let _ = writeln!(out, "mae={}", self.mae);
        let _ = writeln!(out, "global_mean_rmse={}", self.global_mean_rmse);
        let _ = writeln!(out, "global_mean_mae={}", self.global_mean_mae);
        for r in &self.per_run {
            let _ = writeln!(out, "run.{}.seed={}", r.run, r.seed);
            let _ = writeln!(out, "run.{}.rmse={}", r.run, r.rmse);
            let _ = writeln!(out, "run.{}.mae={}", r.run, r.mae);
        }
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "config.{k}={v}");
        }
        out
    }

    pub fn per_run_csv(&self) -> String {
        let mut out = String::from(
            "run,seed,rmse,mae,n_test,global_mean_rmse,global_mean_mae,iterations,final_objective,unordered_threshold_fraction\n",
        );
        for r in &self.per_run {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.run,
                r.seed,
                r.rmse,
                r.mae,
                r.n_test,
                r.global_mean_rmse,
                r.global_mean_mae,
                r.iterations,
                r.final_objective,
                r.unordered_threshold_fraction
            );
        }
        out
    }
}

/// Flattens any serializable configuration into sorted `dotted.key=value` pairs.
pub fn config_echo<T: Serialize>(value: &T) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, child) in t {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            toml::Value::String(s) => {
                out.insert(prefix.to_string(), s.clone());
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    if let Ok(v) = toml::Value::try_from(value) {
        walk("", &v, &mut out);
    }
    out.into_iter().collect()
}

/// Everything produced by a protocol run.
#[derive(Debug)]
pub struct ProtocolOutcome {
    pub reports: Vec<EvalReport>,
    /// Present when a method needed the source codebook.
    pub source: Option<SourceModel>,
    /// Models fitted in the first run, per method (absent for the constant predictor).
    pub first_models: Vec<Option<TransferModel>>,
    pub first_test: SparseRatingMatrix,
}

/// Repeated hold-out evaluation of `cfg.method`.
pub fn run_protocol(
    source: &SparseRatingMatrix,
    target: &SparseRatingMatrix,
    cfg: &ProtocolConfig,
) -> Result<EvalReport> {
    let mut outcome = run_methods(source, target, cfg, &[cfg.method], None)?;
    Ok(outcome.reports.remove(0))
}

/// Evaluates several methods on shared splits.
///
/// The source is factorized at most once; pass `cached_source` to reuse an
/// earlier factorization for the same configuration.
pub fn run_methods(
    source: &SparseRatingMatrix,
    target: &SparseRatingMatrix,
    cfg: &ProtocolConfig,
    methods: &[Method],
    cached_source: Option<&SourceModel>,
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no method selected".into()));
    }
    let source_model = if methods.contains(&Method::Proposed) {
        match cached_source {
            Some(s) => Some(s.clone()),
            None => Some(learn_codebook(source, &cfg.cocluster, cfg.averaging)?),
        }
    } else {
        None
    };

    let one_run = |run: usize| -> Result<(
        Vec<RunResult>,
        Vec<Option<TransferModel>>,
        SparseRatingMatrix,
    )> {
        let seed = cfg.split.seed.wrapping_add(run as u64);
        let spec = SplitSpec {
            seed,
            ..cfg.split.clone()
        };
        let (train, test) = split(target, &spec)?;
        let mean = train.observed_mean()?;
        let floor = error_metrics(&test, &ConstantPredictor(mean))?;
        let transfer = TransferConfig {
            seed: cfg.transfer.seed.wrapping_add(run as u64),
            ..cfg.transfer.clone()
        };

        let mut results = Vec::with_capacity(methods.len());
        let mut models = Vec::with_capacity(methods.len());
        for &method in methods {
            let model = match method {
                Method::Proposed => {
                    let b = source_model
                        .as_ref()
                        .expect("learned above")
                        .codebook
                        .values();
                    Some(fit(&train, b, &transfer)?)
                }
                Method::BaselineMmmf => {
                    Some(fit_baseline_mmmf(&train, cfg.cocluster.k1, &transfer)?)
                }
                Method::GlobalMean => None,
            };
            let metrics = match (&model, cfg.cold_start) {
                (Some(m), ColdStart::Model) => error_metrics(&test, m)?,
                (Some(m), ColdStart::GlobalMean) => {
                    error_metrics(&test, &ColdStartFallback::new(m, &train, mean))?
                }
                (None, _) => floor,
            };
            let trace = model.as_ref().map(|m| m.objective_trace());
            results.push(RunResult {
                run,
                seed,
                rmse: metrics.rmse,
                mae: metrics.mae,
                n_test: test.len(),
                global_mean_rmse: floor.rmse,
                global_mean_mae: floor.mae,
                iterations: trace.map_or(0, |t| t.len() - 1),
                final_objective: trace.and_then(|t| t.last().copied()).unwrap_or(0.0),
                unordered_threshold_fraction: model
                    .as_ref()
                    .map_or(0.0, |m| m.unordered_threshold_fraction()),
            });
            models.push(if run == 0 { model } else { None });
        }
        Ok((results, models, test))
    };

    let runs: Vec<_> = if cfg.serial {
        (0..cfg.runs).map(one_run).collect::<Result<_>>()?
    } else {
        (0..cfg.runs)
            .into_par_iter()
            .map(one_run)
            .collect::<Result<_>>()?
    };

    let echo = config_echo(cfg);
    let mut per_method: Vec<Vec<RunResult>> = vec![Vec::with_capacity(cfg.runs); methods.len()];
    let mut first_models = Vec::new();
    let mut first_test = None;
    for (results, models, test) in runs {
        for (slot, r) in per_method.iter_mut().zip(results) {
            slot.push(r);
        }
        if first_test.is_none() {
            first_models = models;
            first_test = Some(test);
        }
    }
    let reports = methods
        .iter()
        .zip(per_method)
        .map(|(&m, runs)| {
            let mut echo = echo.clone();
            echo.retain(|(k, _)| k != "method");
            echo.push(("method".into(), m.name().into()));
            EvalReport::from_runs(m, runs, echo)
        })
        .collect();

    Ok(ProtocolOutcome {
        reports,
        source: source_model,
        first_models,
        first_test: first_test.expect("runs >= 1"),
    })
}

/// One report per cluster count, with `k1 = k2 = k`.
pub fn cluster_sweep(
    source: &SparseRatingMatrix,
    target: &SparseRatingMatrix,
    k_values: &[usize],
    cfg: &ProtocolConfig,
) -> Result<Vec<(usize, EvalReport)>> {
    if k_values.is_empty() {
        return Err(Error::Usage("empty list of cluster counts".into()));
    }
    let point = |k: usize| -> Result<(usize, EvalReport)> {
        let mut cfg = cfg.clone();
        cfg.cocluster.k1 = k;
        cfg.cocluster.k2 = k;
        // the whole sweep is parallel already
        cfg.serial = true;
        run_protocol(source, target, &cfg).map(|r| (k, r))
    };
    if cfg.serial {
        k_values.iter().map(|&k| point(k)).collect()
    } else {
        k_values.par_iter().map(|&k| point(k)).collect()
    }
}

pub fn sweep_csv(points: &[(usize, EvalReport)]) -> String {
    let mut out = String::from("k,rmse,mae\n");
    for (k, r) in points {
        let _ = writeln!(out, "{k},{},{}", r.rmse, r.mae);
    }
    out
}
