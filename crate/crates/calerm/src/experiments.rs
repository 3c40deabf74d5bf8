//! Seeded Monte Carlo experiment drivers.
//!
//! Every trial seed is a pure function of (master seed, sweep index, trial
//! index), so datasets are byte-identical across runs and across loss choices
//! within a comparison, and aggregate output does not depend on how many
//! worker threads rayon uses. Flagged (non-converged) trials are reported,
//! never dropped.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{solve_fixed_point, FixedPointConfig, FixedPointSpec};
use crate::erm::{empirical_risk, fit, SolverOptions};
use crate::geometry::ConstraintSet;
use crate::losses::{calibrate_huber, LossSpec};
use crate::synthdata::{sample_dataset, DesignKind, NoiseKind, Sample, TargetSpec};
use crate::util::{derive_seed, dot, median, norm2, quantile, sub};
use crate::{Error, Result};

/// Noise as it appears in configuration: `sigma` is always the L2 level of
/// the law, whatever the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseConfig {
    None,
    Gaussian { sigma: f64 },
    StudentT { df: f64, sigma: f64 },
    SymmetrizedPareto { tail_index: f64, sigma: f64 },
}

impl NoiseConfig {
    pub fn sigma_l2(&self) -> f64 {
        match *self {
            NoiseConfig::None => 0.0,
            NoiseConfig::Gaussian { sigma }
            | NoiseConfig::StudentT { sigma, .. }
            | NoiseConfig::SymmetrizedPareto { sigma, .. } => sigma,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseConfig::None => "none",
            NoiseConfig::Gaussian { .. } => "gaussian",
            NoiseConfig::StudentT { .. } => "student_t",
            NoiseConfig::SymmetrizedPareto { .. } => "symmetrized_pareto",
        }
    }

    /// Materialize with an optional sigma override (used by sigma sweeps).
    pub fn to_noise_kind(&self, sigma_override: Option<f64>) -> Result<NoiseKind> {
        let pick = |s: f64| sigma_override.unwrap_or(s);
        match *self {
            NoiseConfig::None => {
                if let Some(s) = sigma_override {
                    if s != 0.0 {
                        return Err(Error::config(
                            "cannot sweep sigma with noise kind 'none'; use gaussian".to_string(),
                        ));
                    }
                }
                Ok(NoiseKind::None)
            }
            NoiseConfig::Gaussian { sigma } => NoiseKind::with_l2_level("gaussian", pick(sigma), None),
            NoiseConfig::StudentT { df, sigma } => {
                NoiseKind::with_l2_level("student_t", pick(sigma), Some(df))
            }
            NoiseConfig::SymmetrizedPareto { tail_index, sigma } => {
                NoiseKind::with_l2_level("symmetrized_pareto", pick(sigma), Some(tail_index))
            }
        }
    }
}

/// How to build the target coefficient vector for a given dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetRule {
    Zero,
    /// `scale * e_index`.
    Axis { index: usize, scale: f64 },
    /// Constant vector with Euclidean norm `scale`.
    Dense { scale: f64 },
    Explicit { values: Vec<f64> },
}

impl TargetRule {
    pub fn materialize(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            TargetRule::Zero => Ok(vec![0.0; dim]),
            TargetRule::Axis { index, scale } => {
                if *index >= dim {
                    return Err(Error::config(format!(
                        "target.index {index} out of range for dim {dim}"
                    )));
                }
                let mut t = vec![0.0; dim];
                t[*index] = *scale;
                Ok(t)
            }
            TargetRule::Dense { scale } => {
                let c = scale / (dim as f64).sqrt();
                Ok(vec![c; dim])
            }
            TargetRule::Explicit { values } => {
                if values.len() != dim {
                    return Err(Error::config(format!(
                        "target.values has length {}, expected {dim}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    #[default]
    Oracle,
    Plugin,
}

fn default_c0() -> f64 {
    1.0
}

/// Loss directive: a fixed loss or automatic Huber calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossDirective {
    Squared,
    Huber { gamma: f64 },
    Logistic,
    HuberAuto {
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        mode: CalibrationMode,
    },
}

impl LossDirective {
    pub fn label(&self) -> &'static str {
        match self {
            LossDirective::Squared => "squared",
            LossDirective::Huber { .. } => "huber",
            LossDirective::Logistic => "logistic",
            LossDirective::HuberAuto { .. } => "huber_auto",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossDirective::Huber { gamma } => LossSpec::huber(*gamma).map(|_| ()).map_err(|_| {
                Error::config(format!("loss.gamma must be positive, got {gamma}"))
            }),
            LossDirective::HuberAuto { c0, .. } => {
                if !(*c0 > 0.0) {
                    return Err(Error::config(format!("loss.c0 must be positive, got {c0}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "N")]
    NSamples,
    #[serde(rename = "n")]
    Dim,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::NSamples => "N",
            SweepParam::Dim => "n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

fn default_trials() -> usize {
    100
}
fn default_holdout() -> usize {
    100_000
}
fn default_rq_zeta() -> f64 {
    1.0
}
fn default_rq_budget() -> usize {
    400
}
fn default_experiment_id() -> String {
    "experiment".to_string()
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment_id")]
    pub experiment_id: String,
    pub dim: usize,
    pub n_samples: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub design: DesignKind,
    pub noise: NoiseConfig,
    pub target: TargetRule,
    pub set: ConstraintSet,
    pub loss: LossDirective,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Fresh draws used to estimate the excess risk of each fitted vector.
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    /// Width-criterion constant for the intrinsic-radius estimate feeding
    /// Huber calibration. The unit default keeps the estimate zero exactly
    /// in the sample-rich regime.
    #[serde(default = "default_rq_zeta")]
    pub rq_zeta: f64,
    #[serde(default = "default_rq_budget")]
    pub rq_budget: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim must be at least 1".to_string()));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1".to_string()));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1".to_string()));
        }
        if self.holdout == 0 {
            return Err(Error::config("holdout must be at least 1".to_string()));
        }
        self.set.validate()?;
        self.loss.validate()?;
        self.solver.validate()?;
        if self.set.dim() != self.dim {
            return Err(Error::config(format!(
                "set.dim ({}) disagrees with dim ({})",
                self.set.dim(),
                self.dim
            )));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values must be non-empty".to_string()));
            }
            for w in sweep.values.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::config(
                        "sweep.values must be strictly increasing".to_string(),
                    ));
                }
            }
            match sweep.parameter {
                SweepParam::Sigma => {
                    if matches!(self.noise, NoiseConfig::None)
                        && sweep.values.iter().any(|v| *v != 0.0)
                    {
                        return Err(Error::config(
                            "sweep over sigma requires a noise family; got noise kind 'none'"
                                .to_string(),
                        ));
                    }
                    if sweep.values.iter().any(|v| *v < 0.0) {
                        return Err(Error::config("sigma sweep values must be >= 0".to_string()));
                    }
                }
                SweepParam::NSamples | SweepParam::Dim => {
                    for v in &sweep.values {
                        if v.fract() != 0.0 || *v < 1.0 {
                            return Err(Error::config(format!(
                                "sweep over {} needs positive integers, got {v}",
                                sweep.parameter.name()
                            )));
                        }
                    }
                    if matches!(sweep.parameter, SweepParam::Dim)
                        && matches!(self.target, TargetRule::Explicit { .. })
                    {
                        return Err(Error::config(
                            "sweep over n is incompatible with an explicit target vector"
                                .to_string(),
                        ));
                    }
                }
            }
        }
        // target feasibility at the base dimension
        let t0 = self.target.materialize(self.dim)?;
        if !self.set.contains(&t0, crate::geometry::FEASIBILITY_TOL) {
            return Err(Error::config(
                "target.t0 is not feasible for the constraint set".to_string(),
            ));
        }
        self.noise.to_noise_kind(None).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("noise: {m}")),
            other => other,
        })?;
        Ok(())
    }
}

/// One fully materialized sweep point.
#[derive(Debug, Clone)]
pub struct ResolvedPoint {
    pub sweep_index: usize,
    pub sweep_param: Option<SweepParam>,
    pub sweep_value: Option<f64>,
    pub dim: usize,
    pub n_samples: usize,
    pub set: ConstraintSet,
    pub t0: Vec<f64>,
    pub design: DesignKind,
    pub noise: NoiseKind,
    pub sigma_l2: f64,
    pub noise_kind_name: &'static str,
    pub loss: LossDirective,
    pub solver: SolverOptions,
    pub holdout: usize,
    pub master_seed: u64,
    pub experiment_id: String,
    /// Intrinsic-radius estimate for Huber calibration (0 when not needed).
    pub rq_estimate: f64,
}

fn set_with_dim(set: &ConstraintSet, dim: usize) -> ConstraintSet {
    match *set {
        ConstraintSet::FullSpace { .. } => ConstraintSet::FullSpace { dim },
        ConstraintSet::L2Ball { r, .. } => ConstraintSet::L2Ball { dim, r },
        ConstraintSet::L1Ball { alpha, .. } => ConstraintSet::L1Ball { dim, alpha },
        ConstraintSet::L1L2Intersection { alpha, r, .. } => {
            ConstraintSet::L1L2Intersection { dim, alpha, r }
        }
    }
}

/// Expand a config into its sweep points, computing the calibration radius
/// estimate once per point.
pub fn resolve_points(cfg: &ExperimentConfig) -> Result<Vec<ResolvedPoint>> {
    cfg.validate()?;
    let values: Vec<Option<f64>> = match &cfg.sweep {
        None => vec![None],
        Some(s) => s.values.iter().map(|v| Some(*v)).collect(),
    };
    let param = cfg.sweep.as_ref().map(|s| s.parameter);
    let mut points = Vec::with_capacity(values.len());
    for (idx, value) in values.into_iter().enumerate() {
        let mut dim = cfg.dim;
        let mut n_samples = cfg.n_samples;
        let mut sigma_override = None;
        if let (Some(p), Some(v)) = (param, value) {
            match p {
                SweepParam::Sigma => sigma_override = Some(v),
                SweepParam::NSamples => n_samples = v as usize,
                SweepParam::Dim => dim = v as usize,
            }
        }
        let set = set_with_dim(&cfg.set, dim);
        let t0 = cfg.target.materialize(dim)?;
        if !set.contains(&t0, crate::geometry::FEASIBILITY_TOL) {
            return Err(Error::config(format!(
                "target.t0 infeasible at sweep value {value:?}"
            )));
        }
        let noise = cfg.noise.to_noise_kind(sigma_override)?;
        let sigma_l2 = noise.moments().l2;
        let rq_estimate = if matches!(cfg.loss, LossDirective::HuberAuto { .. }) {
            let fp_cfg = FixedPointConfig {
                mc_budget: cfg.rq_budget.max(2),
                seed: derive_seed(cfg.master_seed, &[0x5f12, idx as u64]),
                ..Default::default()
            };
            solve_fixed_point(
                &set,
                n_samples,
                &FixedPointSpec::GaussianQ { zeta: cfg.rq_zeta },
                &fp_cfg,
            )?
            .r
        } else {
            0.0
        };
        points.push(ResolvedPoint {
            sweep_index: idx,
            sweep_param: param,
            sweep_value: value,
            dim,
            n_samples,
            set,
            t0,
            design: cfg.design,
            noise,
            sigma_l2,
            noise_kind_name: cfg.noise.kind_name(),
            loss: cfg.loss,
            solver: cfg.solver,
            holdout: cfg.holdout,
            master_seed: cfg.master_seed,
            experiment_id: cfg.experiment_id.clone(),
            rq_estimate,
        });
    }
    Ok(points)
}

/// Per-trial outputs; `converged = false` flags a trial whose solver hit the
/// iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub seed: u64,
    pub est_error_l2: f64,
    pub excess_risk: f64,
    pub excess_risk_se: f64,
    pub runtime_ms: f64,
    pub converged: bool,
    pub gamma: Option<f64>,
    pub loss_label: &'static str,
}

fn mad(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

const HOLDOUT_TAG: u64 = 0x4857;

/// Resolve the loss for one dataset: fixed losses pass through, automatic
/// Huber is calibrated from the noise level (oracle) or a pilot fit (plugin),
/// in both cases floored by the intrinsic radius estimate. Degenerate cases
/// (no noise, zero radius) fall back to the response scale so the trial can
/// still run; the fit is insensitive to gamma there.
fn resolve_loss(
    point: &ResolvedPoint,
    sample: &Sample,
    directive: &LossDirective,
) -> Result<(LossSpec, Option<f64>)> {
    match directive {
        LossDirective::Squared => Ok((LossSpec::Squared, None)),
        LossDirective::Logistic => Ok((LossSpec::Logistic, None)),
        LossDirective::Huber { gamma } => Ok((LossSpec::huber(*gamma)?, Some(*gamma))),
        LossDirective::HuberAuto { c0, mode } => {
            let sigma_est = match mode {
                CalibrationMode::Oracle => point.noise.moments().l2,
                CalibrationMode::Plugin => {
                    let pilot_gamma = mad(sample.responses());
                    let spec = if pilot_gamma > 0.0 {
                        LossSpec::huber(pilot_gamma)?
                    } else {
                        LossSpec::Squared
                    };
                    let pilot = fit(
                        &spec,
                        &point.set,
                        sample,
                        &point.solver,
                        &vec![0.0; point.dim],
                    )?;
                    let residuals: Vec<f64> = (0..sample.n_rows())
                        .map(|i| dot(&pilot.t_hat, sample.row(i)) - sample.response(i))
                        .collect();
                    1.4826 * mad(&residuals)
                }
            };
            let spec = match calibrate_huber(sigma_est, point.rq_estimate, *c0) {
                Ok(spec) => spec,
                Err(Error::Calibration(_)) => {
                    let fallback = (1.4826 * mad(sample.responses())).max(1e-12);
                    LossSpec::huber(c0 * fallback)?
                }
                Err(e) => return Err(e),
            };
            let gamma = spec.gamma();
            Ok((spec, gamma))
        }
    }
}

/// Run a single trial: sample, calibrate, fit, and score on a fresh holdout.
pub fn run_trial(point: &ResolvedPoint, trial_index: usize) -> Result<TrialResult> {
    run_trial_with_loss(point, trial_index, &point.loss)
}

/// Sample one dataset at the master seed, resolve the loss, and fit; the
/// single-shot path behind `calerm fit`.
pub fn fit_once(point: &ResolvedPoint) -> Result<(crate::erm::FitResult, Option<f64>)> {
    let target = TargetSpec {
        t0: point.t0.clone(),
        noise: point.noise,
        dependent_sign_noise: false,
    };
    let sample = sample_dataset(&point.design, &target, point.n_samples, point.master_seed)?;
    let (loss, gamma) = resolve_loss(point, &sample, &point.loss)?;
    let fitted = fit(&loss, &point.set, &sample, &point.solver, &vec![0.0; point.dim])?;
    Ok((fitted, gamma))
}

fn run_trial_with_loss(
    point: &ResolvedPoint,
    trial_index: usize,
    directive: &LossDirective,
) -> Result<TrialResult> {
    let seed = derive_seed(
        point.master_seed,
        &[point.sweep_index as u64, trial_index as u64],
    );
    let target = TargetSpec {
        t0: point.t0.clone(),
        noise: point.noise,
        dependent_sign_noise: false,
    };
    let sample = sample_dataset(&point.design, &target, point.n_samples, seed)?;

    let started = Instant::now();
    let (loss, gamma) = resolve_loss(point, &sample, directive)?;
    let fitted = fit(&loss, &point.set, &sample, &point.solver, &vec![0.0; point.dim])?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let est_error_l2 = norm2(&sub(&fitted.t_hat, &point.t0));

    // excess risk on a fresh holdout
    let holdout_target = TargetSpec {
        t0: point.t0.clone(),
        noise: point.noise,
        dependent_sign_noise: false,
    };
    let mut acc = 0.0;
    let mut acc_sq = 0.0;
    let m = point.holdout;
    {
        let hold = sample_dataset(
            &point.design,
            &holdout_target,
            m,
            derive_seed(seed, &[HOLDOUT_TAG]),
        )?;
        for i in 0..m {
            let row = hold.row(i);
            let y = hold.response(i);
            let v = loss.value(dot(&fitted.t_hat, row) - y)? - loss.value(dot(&point.t0, row) - y)?;
            acc += v;
            acc_sq += v * v;
        }
    }
    let excess_risk = acc / m as f64;
    let var = (acc_sq / m as f64 - excess_risk * excess_risk).max(0.0);
    let excess_risk_se = (var / m as f64).sqrt();

    Ok(TrialResult {
        trial_index,
        seed,
        est_error_l2,
        excess_risk,
        excess_risk_se,
        runtime_ms,
        converged: fitted.converged,
        gamma,
        loss_label: directive.label(),
    })
}

/// One CSV row of the fixed output schema.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub experiment_id: String,
    pub sweep_param: Option<&'static str>,
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub loss_kind: &'static str,
    pub gamma: Option<f64>,
    pub n_samples: usize,
    pub dim: usize,
    pub alpha: Option<f64>,
    pub sigma_l2: f64,
    pub noise_kind: &'static str,
    pub est_error_l2: f64,
    pub excess_risk: f64,
    pub converged: bool,
    pub runtime_ms: f64,
}

fn to_row(point: &ResolvedPoint, t: &TrialResult) -> TrialRow {
    TrialRow {
        experiment_id: point.experiment_id.clone(),
        sweep_param: point.sweep_param.map(|p| p.name()),
        sweep_value: point.sweep_value,
        trial: t.trial_index,
        seed: t.seed,
        loss_kind: t.loss_label,
        gamma: t.gamma,
        n_samples: point.n_samples,
        dim: point.dim,
        alpha: point.set.alpha(),
        sigma_l2: point.sigma_l2,
        noise_kind: point.noise_kind_name,
        est_error_l2: t.est_error_l2,
        excess_risk: t.excess_risk,
        converged: t.converged,
        runtime_ms: t.runtime_ms,
    }
}

/// Error quantiles of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sweep_value: Option<f64>,
    pub loss_kind: &'static str,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q99: f64,
    pub flagged: usize,
}

fn summarize(point: &ResolvedPoint, loss_label: &'static str, trials: &[TrialResult]) -> SweepSummary {
    let errs: Vec<f64> = trials.iter().map(|t| t.est_error_l2).collect();
    SweepSummary {
        sweep_value: point.sweep_value,
        loss_kind: loss_label,
        q25: quantile(&errs, 0.25),
        median: quantile(&errs, 0.5),
        q75: quantile(&errs, 0.75),
        q99: quantile(&errs, 0.99),
        flagged: trials.iter().filter(|t| !t.converged).count(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<SweepSummary>,
}

fn run_point(point: &ResolvedPoint, trials: usize, directive: &LossDirective) -> Result<Vec<TrialResult>> {
    (0..trials)
        .into_par_iter()
        .map(|k| run_trial_with_loss(point, k, directive))
        .collect()
}

/// Run the configured experiment: every sweep point, every trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let points = resolve_points(cfg)?;
    let mut rows = Vec::with_capacity(points.len() * cfg.trials);
    let mut summaries = Vec::with_capacity(points.len());
    for point in &points {
        let trials = run_point(point, cfg.trials, &point.loss)?;
        summaries.push(summarize(point, point.loss.label(), &trials));
        rows.extend(trials.iter().map(|t| to_row(point, t)));
    }
    Ok(ExperimentOutput { rows, summaries })
}

/// Sigma sweep with per-value quantiles (the two-regime probe).
pub fn regime_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match &cfg.sweep {
        Some(s) if matches!(s.parameter, SweepParam::Sigma) => run_experiment(cfg),
        _ => Err(Error::config(
            "regime_sweep requires a sweep over sigma".to_string(),
        )),
    }
}

/// Fit every loss in `losses` to byte-identical datasets and report error
/// quantiles per loss.
pub fn loss_comparison(
    cfg: &ExperimentConfig,
    losses: &[LossDirective],
) -> Result<ExperimentOutput> {
    if losses.is_empty() {
        return Err(Error::config("loss_comparison needs at least one loss".to_string()));
    }
    for l in losses {
        l.validate()?;
    }
    let points = resolve_points(cfg)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for point in &points {
        for directive in losses {
            // the calibration radius estimate is loss-independent, but only
            // computed when the point's own loss was auto; recompute when the
            // comparison adds an auto entry
            let mut point = point.clone();
            if matches!(directive, LossDirective::HuberAuto { .. })
                && !matches!(cfg.loss, LossDirective::HuberAuto { .. })
            {
                let fp_cfg = FixedPointConfig {
                    mc_budget: cfg.rq_budget.max(2),
                    seed: derive_seed(cfg.master_seed, &[0x5f12, point.sweep_index as u64]),
                    ..Default::default()
                };
                point.rq_estimate = solve_fixed_point(
                    &point.set,
                    point.n_samples,
                    &FixedPointSpec::GaussianQ { zeta: cfg.rq_zeta },
                    &fp_cfg,
                )?
                .r;
            }
            let trials = run_point(&point, cfg.trials, directive)?;
            summaries.push(summarize(&point, directive.label(), &trials));
            rows.extend(trials.iter().map(|t| to_row(&point, t)));
        }
    }
    Ok(ExperimentOutput { rows, summaries })
}

/// Least-squares fit of log(median error) against log N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Set when some median is numerically zero and the log-log fit is
    /// meaningless (interpolation regime).
    pub degenerate: bool,
}

pub fn fit_log_log(n_values: &[f64], medians: &[f64]) -> Result<RateFit> {
    if n_values.len() != medians.len() || n_values.len() < 2 {
        return Err(Error::invalid(
            "rate fit needs at least two (N, median) pairs".to_string(),
        ));
    }
    if medians.iter().any(|m| *m <= 1e-12) {
        return Ok(RateFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r2: f64::NAN,
            degenerate: true,
        });
    }
    let xs: Vec<f64> = n_values.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = medians.iter().map(|v| v.ln()).collect();
    let mx = crate::util::mean(&xs);
    let my = crate::util::mean(&ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        degenerate: false,
    })
}

/// Run an N-sweep and fit the log-log rate of the median error.
pub fn rate_fit(cfg: &ExperimentConfig) -> Result<(ExperimentOutput, RateFit)> {
    match &cfg.sweep {
        Some(s) if matches!(s.parameter, SweepParam::NSamples) => {
            let out = run_experiment(cfg)?;
            let ns: Vec<f64> = cfg.sweep.as_ref().unwrap().values.clone();
            let medians: Vec<f64> = out.summaries.iter().map(|s| s.median).collect();
            let fit = fit_log_log(&ns, &medians)?;
            Ok((out, fit))
        }
        _ => Err(Error::config("rate_fit requires a sweep over N".to_string())),
    }
}

/// One cell of the persistence comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceRow {
    pub dim: usize,
    pub alpha: f64,
    pub achieved_median_error: f64,
    pub achieved_median_excess: f64,
    pub intrinsic_pred: f64,
    pub noise_pred: f64,
    pub classical_pred: f64,
}

#[derive(Debug, Clone)]
pub struct PersistenceParams {
    pub dims: Vec<usize>,
    pub n_samples: usize,
    /// l1 radius per dimension.
    pub alpha_of_dim: fn(usize) -> f64,
    pub noise: NoiseConfig,
    pub loss: LossDirective,
    pub trials: usize,
    pub master_seed: u64,
    pub holdout: usize,
}

/// Cube-design experiment over the l1-ball hierarchy, reporting achieved
/// error next to the closed-form predictions for each dimension.
pub fn persistence_experiment(params: &PersistenceParams) -> Result<Vec<PersistenceRow>> {
    use crate::complexity::{predict_rates, RateConstants, RateExample, RateLoss, RateParams};
    let mut out = Vec::with_capacity(params.dims.len());
    for (i, &dim) in params.dims.iter().enumerate() {
        let alpha = (params.alpha_of_dim)(dim);
        let cfg = ExperimentConfig {
            experiment_id: format!("persistence_n{dim}"),
            dim,
            n_samples: params.n_samples,
            trials: params.trials,
            master_seed: derive_seed(params.master_seed, &[i as u64]),
            design: DesignKind::RademacherCube,
            noise: params.noise,
            target: TargetRule::Axis {
                index: 0,
                scale: alpha / 2.0,
            },
            set: ConstraintSet::L1Ball { dim, alpha },
            loss: params.loss,
            solver: SolverOptions::default(),
            sweep: None,
            holdout: params.holdout,
            rq_zeta: default_rq_zeta(),
            rq_budget: default_rq_budget(),
        };
        let res = run_experiment(&cfg)?;
        let errs: Vec<f64> = res.rows.iter().map(|r| r.est_error_l2).collect();
        let excesses: Vec<f64> = res.rows.iter().map(|r| r.excess_risk).collect();
        let noise_kind = cfg.noise.to_noise_kind(None)?;
        let moments = noise_kind.moments();
        let pred = predict_rates(
            RateExample::PersistenceCube,
            &RateParams {
                dim,
                n_samples: params.n_samples,
                alpha,
                sigma_l2: moments.l2,
                sigma_l4: moments.l4,
                delta: 0.05,
                loss: match params.loss {
                    LossDirective::Squared => RateLoss::Squared,
                    LossDirective::Logistic => RateLoss::Logistic,
                    _ => RateLoss::Huber,
                },
                constants: RateConstants::default(),
            },
        )?;
        out.push(PersistenceRow {
            dim,
            alpha,
            achieved_median_error: median(&errs),
            achieved_median_excess: median(&excesses),
            intrinsic_pred: pred.r_q_pred,
            noise_pred: pred.r_m_pred,
            classical_pred: pred.classical.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            experiment_id: "test".to_string(),
            dim: 8,
            n_samples: 64,
            trials: 8,
            master_seed: 42,
            design: DesignKind::GaussianIsotropic,
            noise: NoiseConfig::Gaussian { sigma: 0.5 },
            target: TargetRule::Axis {
                index: 0,
                scale: 1.0,
            },
            set: ConstraintSet::FullSpace { dim: 8 },
            loss: LossDirective::Squared,
            solver: SolverOptions::default(),
            sweep: None,
            holdout: 4000,
            rq_zeta: 1.0,
            rq_budget: 100,
        }
    }

    #[test]
    fn interpolation_regime_recovers_target() {
        let mut cfg = base_config();
        cfg.noise = NoiseConfig::None;
        cfg.n_samples = 2 * cfg.dim;
        let points = resolve_points(&cfg).unwrap();
        let t = run_trial(&points[0], 0).unwrap();
        assert!(t.est_error_l2 <= 1e-6, "error {}", t.est_error_l2);
        assert!(t.converged);
    }

    #[test]
    fn excess_risk_centered_at_reference() {
        // with the fitted vector forced to t0 the excess risk is exactly 0
        // pointwise; the MC check is that a good fit stays within noise of 0
        let cfg = base_config();
        let points = resolve_points(&cfg).unwrap();
        let t = run_trial(&points[0], 1).unwrap();
        assert!(
            t.excess_risk >= -4.0 * t.excess_risk_se,
            "excess {} below -4 se {}",
            t.excess_risk,
            t.excess_risk_se
        );
    }

    #[test]
    fn least_squares_error_tracks_classical_rate() {
        let mut cfg = base_config();
        cfg.trials = 200;
        cfg.noise = NoiseConfig::Gaussian { sigma: 1.0 };
        cfg.dim = 8;
        cfg.set = ConstraintSet::FullSpace { dim: 8 };
        cfg.n_samples = 128;
        cfg.holdout = 100;
        let out = run_experiment(&cfg).unwrap();
        let med = out.summaries[0].median;
        let classical = (8.0f64 / 128.0).sqrt();
        assert!(
            med >= classical / 2.0 && med <= 2.0 * classical,
            "median {med} vs sigma*sqrt(n/N) = {classical}"
        );
    }

    #[test]
    fn shared_seeds_in_loss_comparison() {
        let mut cfg = base_config();
        cfg.trials = 3;
        cfg.holdout = 500;
        let out = loss_comparison(
            &cfg,
            &[LossDirective::Squared, LossDirective::Huber { gamma: 1.0 }],
        )
        .unwrap();
        // same trial index, different loss: identical seed
        let squared: Vec<&TrialRow> = out.rows.iter().filter(|r| r.loss_kind == "squared").collect();
        let huber: Vec<&TrialRow> = out.rows.iter().filter(|r| r.loss_kind == "huber").collect();
        assert_eq!(squared.len(), huber.len());
        for (a, b) in squared.iter().zip(&huber) {
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn output_is_thread_count_invariant() {
        let mut cfg = base_config();
        cfg.trials = 6;
        cfg.holdout = 300;
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| run_experiment(&cfg)).unwrap();
        let b = pool4.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.est_error_l2, y.est_error_l2);
            assert_eq!(x.excess_risk, y.excess_risk);
        }
    }

    #[test]
    fn sweep_validation_rejects_bad_values() {
        let mut cfg = base_config();
        cfg.sweep = Some(Sweep {
            parameter: SweepParam::Sigma,
            values: vec![1.0, 0.5],
        });
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(Sweep {
            parameter: SweepParam::NSamples,
            values: vec![16.5, 32.0],
        });
        assert!(cfg.validate().is_err());
        cfg.sweep = None;
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sigma_zero_entry_matches_noise_free_error() {
        let mut cfg = base_config();
        cfg.n_samples = 32;
        cfg.trials = 4;
        cfg.holdout = 200;
        cfg.sweep = Some(Sweep {
            parameter: SweepParam::Sigma,
            values: vec![0.0, 1.0],
        });
        let out = regime_sweep(&cfg).unwrap();
        let zero = &out.summaries[0];
        assert!(zero.median <= 1e-6, "sigma=0 median {}", zero.median);
        assert!(out.summaries[1].median > zero.median);
    }

    #[test]
    fn rate_fit_slope_and_shifts() {
        // exact power law in, exact slope out
        let ns = vec![128.0, 256.0, 512.0, 1024.0];
        let med: Vec<f64> = ns.iter().map(|n| 3.0 * n.powf(-0.5)).collect();
        let fit = fit_log_log(&ns, &med).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        // doubling the scale shifts the intercept by log 2
        let med2: Vec<f64> = med.iter().map(|m| 2.0 * m).collect();
        let fit2 = fit_log_log(&ns, &med2).unwrap();
        assert!((fit2.intercept - fit.intercept - 2.0f64.ln()).abs() < 1e-12);
        assert!((fit2.slope - fit.slope).abs() < 1e-12);
        // degenerate when errors vanish
        let z = fit_log_log(&ns, &vec![0.0; 4]).unwrap();
        assert!(z.degenerate);
    }

    #[test]
    fn plugin_calibration_produces_positive_gamma() {
        let mut cfg = base_config();
        cfg.loss = LossDirective::HuberAuto {
            c0: 1.0,
            mode: CalibrationMode::Plugin,
        };
        cfg.trials = 2;
        cfg.holdout = 200;
        let points = resolve_points(&cfg).unwrap();
        let t = run_trial(&points[0], 0).unwrap();
        let gamma = t.gamma.unwrap();
        assert!(gamma > 0.0 && gamma < 10.0, "plugin gamma {gamma}");
        assert_eq!(t.loss_label, "huber_auto");
    }

    #[test]
    fn persistence_predictions_shrink_with_radius() {
        // r -> 0 sends both prediction and achieved error to zero
        let params = PersistenceParams {
            dims: vec![16],
            n_samples: 64,
            alpha_of_dim: |_| 1e-4,
            noise: NoiseConfig::None,
            loss: LossDirective::Squared,
            trials: 3,
            master_seed: 7,
            holdout: 200,
        };
        let rows = persistence_experiment(&params).unwrap();
        assert!(rows[0].achieved_median_error <= 2e-4);
        assert!(rows[0].intrinsic_pred <= 1e-6);
        assert!(rows[0].classical_pred <= 1e-6);
    }
}
