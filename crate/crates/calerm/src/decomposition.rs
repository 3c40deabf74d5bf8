//! Pointwise decomposition of the excess loss into a multiplier part that is
//! linear in `f - f*` and a nonnegative quadratic (Bregman) remainder.
//!
//! With residual `xi_i = <t*, X_i> - Y_i` and increment `h_i = <t - t*, X_i>`:
//!
//! ```text
//! excess_i     = l(xi_i + h_i) - l(xi_i)
//! multiplier_i = l'(xi_i) * h_i
//! quadratic_i  = l(xi_i + h_i) - l(xi_i) - l'(xi_i) * h_i   (>= 0 by convexity)
//! ```
//!
//! The quadratic term equals the integral of `l'(w) - l'(xi)` from `xi` to
//! `xi + h`; it is evaluated through per-loss closed forms arranged so no
//! catastrophic cancellation can push it below zero.

use crate::losses::LossSpec;
use crate::synthdata::Sample;
use crate::util::{dot, mean};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTerms {
    pub excess: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub quadratic: Vec<f64>,
    /// Residuals of the reference point: `xi_i = <t*, X_i> - Y_i`.
    pub residuals_star: Vec<f64>,
}

/// Bregman remainder of the Huber loss, via the signed overlap of the moved
/// interval with the quadratic region `[-gamma, gamma]`. Every term is
/// nonnegative, so the result cannot round below zero.
fn quad_huber(gamma: f64, xi: f64, h: f64) -> f64 {
    let (a, h) = if h >= 0.0 { (xi, h) } else { (-xi, -h) };
    // start of the quadratic overlap, measured from a
    let s = a.max(-gamma);
    if gamma <= s {
        // a >= gamma: derivative is already saturated in the move direction
        return 0.0;
    }
    let u0 = s - a; // ramp starts (0 unless a < -gamma)
    let u1 = gamma - a; // ramp saturates
    if h <= u0 {
        0.0
    } else if h <= u1 {
        let d = h - u0;
        0.5 * d * d
    } else {
        let d = u1 - u0;
        0.5 * d * d + d * (h - u1)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bregman remainder of the logistic loss: twice the softplus Bregman
/// divergence. Reflected into the half-line where softplus is small so the
/// subtraction is well conditioned.
fn quad_logistic(xi: f64, h: f64) -> f64 {
    let (a, h) = if 2.0 * xi + h > 0.0 {
        (-xi - h, h)
    } else {
        (xi, h)
    };
    let b = a + h;
    2.0 * (softplus(b) - softplus(a) - sigmoid(a) * h)
}

/// Excess, multiplier and quadratic terms for a single observation.
pub fn scalar_terms(spec: &LossSpec, xi: f64, h: f64) -> Result<(f64, f64, f64)> {
    let excess = spec.value(xi + h)? - spec.value(xi)?;
    let multiplier = spec.deriv(xi)? * h;
    let quadratic = match spec {
        LossSpec::Squared => h * h,
        LossSpec::Huber { gamma } => quad_huber(*gamma, xi, h),
        LossSpec::Logistic => quad_logistic(xi, h),
    };
    Ok((excess, multiplier, quadratic))
}

/// Decompose the excess loss of `t` against the reference `t_star` over the
/// whole sample.
pub fn decompose(
    spec: &LossSpec,
    t: &[f64],
    t_star: &[f64],
    sample: &Sample,
) -> Result<DecompositionTerms> {
    let n = sample.n_cols();
    if t.len() != n {
        return Err(Error::DimensionMismatch {
            op: "decompose t",
            expected: n,
            got: t.len(),
        });
    }
    if t_star.len() != n {
        return Err(Error::DimensionMismatch {
            op: "decompose t_star",
            expected: n,
            got: t_star.len(),
        });
    }
    let rows = sample.n_rows();
    let mut terms = DecompositionTerms {
        excess: Vec::with_capacity(rows),
        multiplier: Vec::with_capacity(rows),
        quadratic: Vec::with_capacity(rows),
        residuals_star: Vec::with_capacity(rows),
    };
    let diff: Vec<f64> = t.iter().zip(t_star).map(|(a, b)| a - b).collect();
    for i in 0..rows {
        let row = sample.row(i);
        let xi = dot(t_star, row) - sample.response(i);
        let h = dot(&diff, row);
        let (e, m, q) = scalar_terms(spec, xi, h)?;
        terms.excess.push(e);
        terms.multiplier.push(m);
        terms.quadratic.push(q);
        terms.residuals_star.push(xi);
    }
    Ok(terms)
}

/// Empirical means `(P_N excess, P_N multiplier, P_N quadratic)`.
pub fn empirical_means(terms: &DecompositionTerms) -> (f64, f64, f64) {
    (
        mean(&terms.excess),
        mean(&terms.multiplier),
        mean(&terms.quadratic),
    )
}

/// Exclusion diagnostic: a candidate at distance `h_norm` from the reference
/// is excluded when the empirical quadratic mean clears `theta * h_norm^2`
/// while the empirical multiplier mean stays within
/// `theta/4 * max(h_norm^2, r^2)` of its expectation surrogate.
///
/// On that event the empirical excess risk is strictly positive, so the
/// candidate cannot be an empirical minimizer.
pub fn check_exclusion(
    terms: &DecompositionTerms,
    theta: f64,
    r: f64,
    h_norm: f64,
    multiplier_mean_surrogate: f64,
) -> bool {
    let (_, pm, pq) = empirical_means(terms);
    let quad_ok = pq >= theta * h_norm * h_norm;
    let band = 0.25 * theta * (h_norm * h_norm).max(r * r);
    let mult_ok = (pm - multiplier_mean_surrogate).abs() <= band;
    quad_ok && mult_ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{sample_dataset, DesignKind, NoiseKind, TargetSpec};
    use crate::util::{mean, rng_for, std_error};
    use rand::Rng;

    fn all_losses() -> Vec<LossSpec> {
        vec![
            LossSpec::Squared,
            LossSpec::Huber { gamma: 1.0 },
            LossSpec::Logistic,
        ]
    }

    fn additivity_scale(spec: &LossSpec, xi: f64, h: f64) -> f64 {
        1.0 + spec.value(xi + h).unwrap().abs() + spec.value(xi).unwrap().abs()
    }

    #[test]
    fn squared_loss_quadratic_is_h_squared() {
        let mut rng = rng_for(0xDEC0, &[]);
        for _ in 0..1000 {
            let xi: f64 = rng.random_range(-50.0..50.0);
            let h: f64 = rng.random_range(-50.0..50.0);
            let (e, m, q) = scalar_terms(&LossSpec::Squared, xi, h).unwrap();
            assert_eq!(q, h * h);
            assert_eq!(m, 2.0 * xi * h);
            let scale = additivity_scale(&LossSpec::Squared, xi, h);
            assert!((e - (m + q)).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn reference_point_decomposes_to_zero() {
        let t0 = vec![0.5, -1.0, 2.0];
        let target = TargetSpec {
            t0: t0.clone(),
            noise: NoiseKind::Gaussian { sigma: 1.0 },
            dependent_sign_noise: false,
        };
        let s = sample_dataset(&DesignKind::GaussianIsotropic, &target, 32, 9).unwrap();
        for spec in all_losses() {
            let terms = decompose(&spec, &t0, &t0, &s).unwrap();
            assert!(terms.excess.iter().all(|&v| v == 0.0));
            assert!(terms.multiplier.iter().all(|&v| v == 0.0));
            assert!(terms.quadratic.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn huber_hand_value() {
        // xi = 0, h = 0.5, gamma = 1: quadratic = l(0.5) = 0.125, multiplier = 0
        let (e, m, q) = scalar_terms(&LossSpec::Huber { gamma: 1.0 }, 0.0, 0.5).unwrap();
        assert!((q - 0.125).abs() < 1e-15);
        assert_eq!(m, 0.0);
        assert!((e - 0.125).abs() < 1e-15);
    }

    #[test]
    fn additivity_and_nonnegativity_random_draws() {
        let mut rng = rng_for(0xDEC1, &[]);
        for spec in all_losses() {
            for _ in 0..100_000 {
                let xi: f64 = rng.random_range(-50.0..50.0);
                let h: f64 = rng.random_range(-50.0..50.0);
                let (e, m, q) = scalar_terms(&spec, xi, h).unwrap();
                assert!(q >= -1e-12, "{spec:?} negative quadratic {q} at ({xi}, {h})");
                let scale = additivity_scale(&spec, xi, h);
                assert!(
                    (e - (m + q)).abs() <= 1e-10 * scale,
                    "{spec:?} additivity off at ({xi}, {h}): e={e} m={m} q={q}"
                );
            }
        }
    }

    #[test]
    fn quadratic_scaling_superadditivity() {
        let mut rng = rng_for(0xDEC2, &[]);
        for spec in all_losses() {
            for &lambda in &[1.5f64, 2.0, 3.7] {
                for _ in 0..10_000 {
                    let xi: f64 = rng.random_range(-10.0..10.0);
                    let h: f64 = rng.random_range(-10.0..10.0);
                    let (_, _, q1) = scalar_terms(&spec, xi, h).unwrap();
                    let (_, _, ql) = scalar_terms(&spec, xi, lambda * h).unwrap();
                    assert!(
                        ql >= lambda.floor() * q1 - 1e-10,
                        "{spec:?} scaling failed at ({xi}, {h}, {lambda}): {ql} < {}",
                        lambda.floor() * q1
                    );
                }
            }
        }
    }

    #[test]
    fn multiplier_is_linear_in_h() {
        let mut rng = rng_for(0xDEC3, &[]);
        for spec in all_losses() {
            for _ in 0..5000 {
                let xi: f64 = rng.random_range(-20.0..20.0);
                let h: f64 = rng.random_range(-20.0..20.0);
                let lambda: f64 = rng.random_range(0.1..5.0);
                let (_, m1, _) = scalar_terms(&spec, xi, h).unwrap();
                let (_, ml, _) = scalar_terms(&spec, xi, lambda * h).unwrap();
                assert!(
                    (ml - lambda * m1).abs() <= 1e-12 * ml.abs().max(1.0),
                    "{spec:?} multiplier not linear"
                );
            }
        }
    }

    #[test]
    fn symmetric_noise_has_centered_multiplier() {
        // E l'(xi) h is zero for independent symmetric noise; check the Monte
        // Carlo mean sits within 4 standard errors of zero.
        let mut rng = rng_for(0xDEC4, &[]);
        for spec in all_losses() {
            let n_draws = 1_000_000;
            let mut vals = Vec::with_capacity(n_draws);
            for _ in 0..n_draws {
                let w: f64 = rng.random_range(-3.0..3.0); // symmetric noise
                let h = 0.7; // fixed direction value
                vals.push(spec.deriv(-w).unwrap() * h);
            }
            let m = mean(&vals);
            let se = std_error(&vals);
            assert!(m.abs() <= 4.0 * se, "{spec:?} multiplier mean {m} se {se}");
        }
    }

    #[test]
    fn empirical_means_add_up() {
        let t0 = vec![1.0, 0.0, -0.5, 2.0];
        let t = vec![0.5, 0.2, 0.0, 1.0];
        let target = TargetSpec {
            t0: t0.clone(),
            noise: NoiseKind::StudentT { df: 5.0, scale: 1.0 },
            dependent_sign_noise: false,
        };
        let s = sample_dataset(&DesignKind::GaussianIsotropic, &target, 200, 17).unwrap();
        for spec in all_losses() {
            let terms = decompose(&spec, &t, &t0, &s).unwrap();
            let (pl, pm, pq) = empirical_means(&terms);
            assert!((pl - (pm + pq)).abs() <= 1e-10 * (1.0 + pl.abs() + pm.abs() + pq.abs()));
            assert!(pq >= 0.0);
        }
    }

    #[test]
    fn empirical_means_trivial_cases() {
        let terms = DecompositionTerms {
            excess: vec![1.0, 3.0],
            multiplier: vec![0.5, 1.5],
            quadratic: vec![0.5, 1.5],
            residuals_star: vec![0.0, 0.0],
        };
        let (pl, pm, pq) = empirical_means(&terms);
        assert_eq!(pl, 2.0);
        assert_eq!(pm, 1.0);
        assert_eq!(pq, 1.0);
    }

    #[test]
    fn exclusion_quadratic_threshold() {
        let mk = |pq: f64| DecompositionTerms {
            excess: vec![pq],
            multiplier: vec![0.0],
            quadratic: vec![pq],
            residuals_star: vec![0.0],
        };
        assert!(check_exclusion(&mk(1.0), 0.5, 1.0, 1.0, 0.0));
        assert!(!check_exclusion(&mk(0.1), 0.5, 1.0, 1.0, 0.0));
    }

    #[test]
    fn exclusion_holds_for_noise_free_squared_loss() {
        // Noise-free squared loss, isotropic Gaussian design, N >> n: the
        // quadratic mean concentrates at h_norm^2, far above theta/2.
        let n = 4;
        let n_samples = 64;
        let t0 = vec![0.0; n];
        let target = TargetSpec {
            t0: t0.clone(),
            noise: NoiseKind::None,
            dependent_sign_noise: false,
        };
        let mut passes = 0;
        let trials = 1000;
        let mut rng = rng_for(0xDEC5, &[7]);
        for trial in 0..trials {
            let s = sample_dataset(&DesignKind::GaussianIsotropic, &target, n_samples, trial).unwrap();
            let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = crate::util::norm2(&t);
            for v in &mut t {
                *v /= norm;
            }
            let terms = decompose(&LossSpec::Squared, &t, &t0, &s).unwrap();
            if check_exclusion(&terms, 0.5, 1.0, 1.0, 0.0) {
                passes += 1;
            }
        }
        assert!(
            passes as f64 >= 0.99 * trials as f64,
            "exclusion passed only {passes}/{trials}"
        );
    }
}
