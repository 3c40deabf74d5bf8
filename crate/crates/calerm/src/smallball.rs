//! Small-ball constants and the diagnostics built on them.
//!
//! A law satisfies a small-ball condition with constants `(kappa0, eps)` when
//! `Pr(|Z| >= kappa0 ||Z||_L2) >= eps`; this weak anti-concentration property
//! replaces two-sided concentration everywhere in the lower bounds. The
//! module estimates the empirical curve `kappa -> Pr(|Z| >= kappa ||Z||)`,
//! certifies constants from moment ratios via Paley–Zygmund, runs the
//! directional second-moment check over a constraint set, and verifies the
//! order-statistics tail bound used by the upper estimates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::ConstraintSet;
use crate::synthdata::Sample;
use crate::util::{dot, norm2, rng_for};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallParams {
    pub kappa0: f64,
    pub eps: f64,
}

impl SmallBallParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0 > 0.0) || !self.kappa0.is_finite() {
            return Err(Error::invalid(format!(
                "kappa0 must be positive, got {}",
                self.kappa0
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::invalid(format!(
                "eps must lie in (0,1), got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Empirical small-ball curve: for each `kappa` in the grid, the fraction of
/// draws with `|Z_i| >= kappa * ||Z||_L2(empirical)`.
pub fn smallball_curve(draws: &[f64], kappa_grid: &[f64]) -> Result<Vec<f64>> {
    if draws.len() < 100 {
        return Err(Error::invalid(format!(
            "smallball_curve needs at least 100 draws, got {}",
            draws.len()
        )));
    }
    let n = draws.len() as f64;
    let l2 = (draws.iter().map(|z| z * z).sum::<f64>() / n).sqrt();
    if l2 == 0.0 {
        return Err(Error::Degenerate(
            "all draws are zero; the small-ball curve is undefined".to_string(),
        ));
    }
    Ok(kappa_grid
        .iter()
        .map(|&k| draws.iter().filter(|z| z.abs() >= k * l2).count() as f64 / n)
        .collect())
}

/// Paley–Zygmund certificate from the L4/L2 moment ratio, applied to `Z^2`:
///
/// `Pr(Z^2 >= theta E Z^2) >= (1-theta)^2 (E Z^2)^2 / E Z^4`,
///
/// so `kappa0 = sqrt(theta)` and `eps = (1-theta)^2 / (L4/L2)^4`. Guaranteed
/// but typically conservative.
pub fn paley_zygmund_certificate(l4_over_l2: f64, theta: f64) -> Result<SmallBallParams> {
    if !(l4_over_l2 >= 1.0) || !l4_over_l2.is_finite() {
        return Err(Error::invalid(format!(
            "L4/L2 ratio must be >= 1, got {l4_over_l2}"
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0,1), got {theta}")));
    }
    Ok(SmallBallParams {
        kappa0: theta.sqrt(),
        eps: (1.0 - theta) * (1.0 - theta) / l4_over_l2.powi(4),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallCheck {
    pub pass: bool,
    pub min_value: f64,
}

/// Minimum of `(1/N) sum_i <d, X_i>^2` over the given unit directions.
pub fn directional_second_moment_min(sample: &Sample, directions: &[Vec<f64>]) -> Result<f64> {
    if directions.is_empty() {
        return Err(Error::invalid("need at least one direction".to_string()));
    }
    let n = sample.n_rows() as f64;
    let mut min_val = f64::INFINITY;
    for d in directions {
        if d.len() != sample.n_cols() {
            return Err(Error::DimensionMismatch {
                op: "directional_second_moment_min",
                expected: sample.n_cols(),
                got: d.len(),
            });
        }
        let mut acc = 0.0;
        for i in 0..sample.n_rows() {
            let v = dot(d, sample.row(i));
            acc += v * v;
        }
        min_val = min_val.min(acc / n);
    }
    Ok(min_val)
}

/// Empirical lower-bound check for the design: over random unit directions
/// from the radius-`r` slice of the set, the normalized second moment
/// `(1/N) sum <d, X_i>^2` must clear `eps * kappa0^2 / 16`.
pub fn empirical_smallball_check(
    sample: &Sample,
    set: &ConstraintSet,
    r: f64,
    params: &SmallBallParams,
    num_directions: usize,
    seed: u64,
) -> Result<SmallBallCheck> {
    params.validate()?;
    if num_directions == 0 {
        return Err(Error::invalid("num_directions must be at least 1".to_string()));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    if r > set.max_l2_norm() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "no feasible direction at norm {r}: the set has max Euclidean norm {}",
            set.max_l2_norm()
        )));
    }
    let n = set.dim();
    if sample.n_cols() != n {
        return Err(Error::DimensionMismatch {
            op: "empirical_smallball_check",
            expected: n,
            got: sample.n_cols(),
        });
    }
    let loc = set.localize(r);
    let mut directions = Vec::with_capacity(num_directions);
    let mut rng = rng_for(seed, &[]);
    let mut rejected = 0usize;
    while directions.len() < num_directions {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let gn = norm2(&g).max(1e-300);
        let probe: Vec<f64> = g.iter().map(|x| r * x / gn).collect();
        if set.contains(&probe, 1e-12) {
            directions.push(probe.iter().map(|x| x / r).collect());
            continue;
        }
        // pull the sphere point into the slice; keep it only if it still has
        // norm r (i.e. the direction genuinely lies in the r-slice)
        let h = loc.project(&probe)?;
        let hn = norm2(&h);
        if hn >= r * (1.0 - 1e-9) {
            directions.push(h.iter().map(|x| x / hn).collect());
            continue;
        }
        rejected += 1;
        if rejected > 200 * num_directions {
            // thin slice: fall back to signed axis directions, which are the
            // extreme points of every supported set at norm <= r
            for j in 0..n {
                if directions.len() == num_directions {
                    break;
                }
                let mut d = vec![0.0; n];
                d[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let probe: Vec<f64> = d.iter().map(|x| r * x).collect();
                if set.contains(&probe, 1e-12) {
                    directions.push(d);
                }
            }
            if directions.is_empty() {
                return Err(Error::invalid(format!(
                    "no feasible direction found at norm {r}"
                )));
            }
            while directions.len() < num_directions {
                let d = directions[directions.len() % n].clone();
                directions.push(d);
            }
            break;
        }
    }
    let min_value = directional_second_moment_min(sample, &directions)?;
    Ok(SmallBallCheck {
        pass: min_value > params.eps * params.kappa0 * params.kappa0 / 16.0,
        min_value,
    })
}

/// Order-statistics tail bound: with `Z*_k` the k-th largest of `|Z_i|`,
/// check `Z*_k <= u (N/k)^{1/q} ||Z||_{L_r}` for every `k <= N/2`, the
/// empirical `L_r` norm standing in for the true one.
pub fn order_statistics_check(draws: &[f64], q: f64, r_moment: f64, u: f64) -> Result<bool> {
    if !(q >= 1.0) {
        return Err(Error::invalid(format!("q must be >= 1, got {q}")));
    }
    if !(r_moment >= q) {
        return Err(Error::invalid(format!(
            "r_moment must be >= q, got {r_moment} < {q}"
        )));
    }
    if !(u >= 2.0) {
        return Err(Error::invalid(format!("u must be >= 2, got {u}")));
    }
    let n = draws.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 draws".to_string()));
    }
    let lr = (draws.iter().map(|z| z.abs().powf(r_moment)).sum::<f64>() / n as f64)
        .powf(1.0 / r_moment);
    if !lr.is_finite() {
        return Err(Error::Degenerate("empirical L_r norm is not finite".to_string()));
    }
    let mut sorted: Vec<f64> = draws.iter().map(|z| z.abs()).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for k in 1..=(n / 2) {
        let bound = u * (n as f64 / k as f64).powf(1.0 / q) * lr;
        if sorted[k - 1] > bound {
            return Ok(false);
        }
    }
    Ok(true)
}
