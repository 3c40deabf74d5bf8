//! Empirical risk minimization over a constraint set by projected gradient
//! descent.
//!
//! The objective `t -> (1/N) sum_i l(<t, X_i> - Y_i)` is convex and smooth
//! with gradient Lipschitz constant `sup l'' * lambda_max(X^T X / N)`, so a
//! fixed step of its inverse descends monotonically; a backtracking rule is
//! available as an alternative. All supported sets have cheap exact
//! projections, which is why no second-order machinery is needed.

use serde::{Deserialize, Serialize};

use crate::geometry::ConstraintSet;
use crate::losses::LossSpec;
use crate::synthdata::Sample;
use crate::util::{dot, norm2, sub};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    FixedInverseSmoothness,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_step_rule")]
    pub step_rule: StepRule,
    #[serde(default = "default_shrink")]
    pub backtracking_shrink: f64,
}

fn default_max_iters() -> usize {
    5000
}
fn default_tol() -> f64 {
    1e-10
}
fn default_step_rule() -> StepRule {
    StepRule::FixedInverseSmoothness
}
fn default_shrink() -> f64 {
    0.5
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: default_max_iters(),
            tol: default_tol(),
            step_rule: default_step_rule(),
            backtracking_shrink: default_shrink(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("solver.max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config(format!(
                "solver.tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.backtracking_shrink > 0.0 && self.backtracking_shrink < 1.0) {
            return Err(Error::config(format!(
                "solver.backtracking_shrink must lie in (0,1), got {}",
                self.backtracking_shrink
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub t_hat: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `(1/N) sum_i l(<t, X_i> - Y_i)`.
pub fn empirical_risk(spec: &LossSpec, t: &[f64], sample: &Sample) -> Result<f64> {
    if t.len() != sample.n_cols() {
        return Err(Error::DimensionMismatch {
            op: "empirical_risk",
            expected: sample.n_cols(),
            got: t.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..sample.n_rows() {
        acc += spec.value(dot(t, sample.row(i)) - sample.response(i))?;
    }
    Ok(acc / sample.n_rows() as f64)
}

/// Gradient of the empirical risk.
fn gradient(spec: &LossSpec, t: &[f64], sample: &Sample) -> Result<Vec<f64>> {
    let rows = sample.n_rows();
    let mut derivs = Vec::with_capacity(rows);
    for i in 0..rows {
        derivs.push(spec.deriv(dot(t, sample.row(i)) - sample.response(i))?);
    }
    Ok(sample.xt_v_over_n(&derivs))
}

/// Largest eigenvalue of `X^T X / N` by 50 power iterations from a
/// deterministic pseudo-random start.
fn design_spectral_norm(sample: &Sample) -> f64 {
    let n = sample.n_cols();
    let mut v: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = (j as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ 0x517cc1b727220a95;
            s ^= s >> 29;
            s = s.wrapping_mul(0xbf58476d1ce4e5b9);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    let mut lambda = 0.0;
    for _ in 0..50 {
        let xv = sample.x_t(&v);
        let w = sample.xt_v_over_n(&xv);
        lambda = norm2(&w);
        if lambda == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / lambda).collect();
    }
    lambda
}

/// Conjugate gradient for `(X^T X / N) t = X^T y / N`, the fast path for the
/// unconstrained squared loss. Started at zero it converges to the
/// minimum-norm least-squares solution even when the system is singular.
fn least_squares_cg(sample: &Sample, tol: f64, max_iters: usize) -> Vec<f64> {
    let n = sample.n_cols();
    let b = sample.xt_v_over_n(sample.responses());
    let mut t = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let b_norm = norm2(&b).max(1e-300);
    for _ in 0..max_iters {
        if rs.sqrt() <= tol * b_norm {
            break;
        }
        let xp = sample.x_t(&p);
        let ap = sample.xt_v_over_n(&xp);
        let denom = dot(&p, &ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        for j in 0..n {
            t[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for j in 0..n {
            p[j] = r[j] + beta * p[j];
        }
        rs = rs_new;
    }
    t
}

/// Minimize the empirical risk over the set, starting from `t_init`.
pub fn fit(
    spec: &LossSpec,
    set: &ConstraintSet,
    sample: &Sample,
    opts: &SolverOptions,
    t_init: &[f64],
) -> Result<FitResult> {
    opts.validate()?;
    spec.validate()?;
    let n = sample.n_cols();
    if set.dim() != n {
        return Err(Error::DimensionMismatch {
            op: "fit set",
            expected: n,
            got: set.dim(),
        });
    }
    if t_init.len() != n {
        return Err(Error::DimensionMismatch {
            op: "fit t_init",
            expected: n,
            got: t_init.len(),
        });
    }
    if !set.contains(t_init, 1e-10) {
        return Err(Error::invalid(
            "t_init is not feasible for the constraint set".to_string(),
        ));
    }

    // unconstrained squared loss short-circuits to least squares
    if matches!(
        (spec, set),
        (LossSpec::Squared, ConstraintSet::FullSpace { .. })
    ) {
        let t_hat = least_squares_cg(sample, 1e-12, (4 * n).max(200));
        let objective = empirical_risk(spec, &t_hat, sample)?;
        return Ok(FitResult {
            t_hat,
            objective,
            iterations: 0,
            converged: true,
        });
    }

    let lambda_max = design_spectral_norm(sample);
    let l_smooth = spec.sup_second_deriv() * lambda_max;
    let base_step = if l_smooth > 0.0 { 1.0 / l_smooth } else { 1.0 };

    let mut t = t_init.to_vec();
    let mut f = empirical_risk(spec, &t, sample)?;
    if !f.is_finite() {
        return Err(Error::Numeric(format!(
            "empirical risk at the initial point is not finite: {f}"
        )));
    }
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let g = gradient(spec, &t, sample)?;
        let (t_next, f_next) = match opts.step_rule {
            StepRule::FixedInverseSmoothness => {
                let cand: Vec<f64> = t.iter().zip(&g).map(|(ti, gi)| ti - base_step * gi).collect();
                let proj = set.project(&cand)?;
                let fp = empirical_risk(spec, &proj, sample)?;
                (proj, fp)
            }
            StepRule::Backtracking => {
                let mut step = base_step.max(1e-3);
                let mut chosen = None;
                for _ in 0..60 {
                    let cand: Vec<f64> = t.iter().zip(&g).map(|(ti, gi)| ti - step * gi).collect();
                    let proj = set.project(&cand)?;
                    let fp = empirical_risk(spec, &proj, sample)?;
                    let d = sub(&proj, &t);
                    let model = f + dot(&g, &d) + dot(&d, &d) / (2.0 * step);
                    if fp <= model + 1e-15 * (1.0 + f.abs()) {
                        chosen = Some((proj, fp));
                        break;
                    }
                    step *= opts.backtracking_shrink;
                }
                chosen.ok_or_else(|| {
                    Error::Numeric("backtracking failed to find a decreasing step".to_string())
                })?
            }
        };
        if !f_next.is_finite() {
            return Err(Error::Numeric(format!(
                "empirical risk became non-finite after {iterations} iterations"
            )));
        }
        iterations += 1;
        let decrease = f - f_next;
        t = t_next;
        let f_prev = f;
        f = f_next;
        if decrease.abs() <= opts.tol * (1.0 + f_prev.abs()) {
            converged = true;
            break;
        }
    }

    let objective = empirical_risk(spec, &t, sample)?;
    Ok(FitResult {
        t_hat: t,
        objective,
        iterations,
        converged,
    })
}
