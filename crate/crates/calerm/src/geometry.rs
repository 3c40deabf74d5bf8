//! Constraint sets `T ⊂ ℝⁿ` and the two primitives everything else is built
//! on: Euclidean projection (for the projected-gradient solver) and the
//! support function `sup_{t∈T} ⟨w,t⟩` (for exact evaluation of suprema of
//! linear processes).
//!
//! All sets are convex and symmetric about the origin. The `l1_l2`
//! intersection shows up naturally as the localization `T ∩ rB₂ⁿ` of an
//! `ℓ₁` ball.

use serde::{Deserialize, Serialize};

use crate::util::{dot, norm1, norm2, norm_inf};
use crate::{Error, Result};

/// Absolute feasibility tolerance on norm constraints.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    FullSpace { dim: usize },
    L2Ball { dim: usize, r: f64 },
    L1Ball { dim: usize, alpha: f64 },
    L1L2Intersection { dim: usize, alpha: f64, r: f64 },
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        match *self {
            ConstraintSet::FullSpace { dim }
            | ConstraintSet::L2Ball { dim, .. }
            | ConstraintSet::L1Ball { dim, .. }
            | ConstraintSet::L1L2Intersection { dim, .. } => dim,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConstraintSet::FullSpace { .. } => "full_space",
            ConstraintSet::L2Ball { .. } => "l2_ball",
            ConstraintSet::L1Ball { .. } => "l1_ball",
            ConstraintSet::L1L2Intersection { .. } => "l1_l2_intersection",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            ConstraintSet::L1Ball { alpha, .. } | ConstraintSet::L1L2Intersection { alpha, .. } => {
                Some(alpha)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::config("set.dim must be at least 1"));
        }
        match *self {
            ConstraintSet::FullSpace { .. } => {}
            ConstraintSet::L2Ball { r, .. } => {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::config(format!("set.r must be positive, got {r}")));
                }
            }
            ConstraintSet::L1Ball { alpha, .. } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::config(format!(
                        "set.alpha must be positive, got {alpha}"
                    )));
                }
            }
            ConstraintSet::L1L2Intersection { alpha, r, .. } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::config(format!(
                        "set.alpha must be positive, got {alpha}"
                    )));
                }
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::config(format!("set.r must be positive, got {r}")));
                }
            }
        }
        Ok(())
    }

    fn check_dim(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// L2 diameter; `+∞` for the full space.
    pub fn diameter(&self) -> f64 {
        match *self {
            ConstraintSet::FullSpace { .. } => f64::INFINITY,
            ConstraintSet::L2Ball { r, .. } => 2.0 * r,
            ConstraintSet::L1Ball { alpha, .. } => 2.0 * alpha,
            ConstraintSet::L1L2Intersection { alpha, r, .. } => 2.0 * alpha.min(r),
        }
    }

    /// Largest Euclidean norm attained inside the set (= diameter/2).
    pub fn max_l2_norm(&self) -> f64 {
        0.5 * self.diameter()
    }

    /// The set intersected with the Euclidean ball of radius `r`.
    pub fn localize(&self, r: f64) -> ConstraintSet {
        let dim = self.dim();
        match *self {
            ConstraintSet::FullSpace { .. } => ConstraintSet::L2Ball { dim, r },
            ConstraintSet::L2Ball { r: r0, .. } => ConstraintSet::L2Ball { dim, r: r0.min(r) },
            ConstraintSet::L1Ball { alpha, .. } => ConstraintSet::L1L2Intersection { dim, alpha, r },
            ConstraintSet::L1L2Intersection { alpha, r: r0, .. } => {
                ConstraintSet::L1L2Intersection {
                    dim,
                    alpha,
                    r: r0.min(r),
                }
            }
        }
    }

    /// Membership up to `tol` on each norm constraint.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match *self {
            ConstraintSet::FullSpace { .. } => true,
            ConstraintSet::L2Ball { r, .. } => norm2(p) <= r + tol,
            ConstraintSet::L1Ball { alpha, .. } => norm1(p) <= alpha + tol,
            ConstraintSet::L1L2Intersection { alpha, r, .. } => {
                norm1(p) <= alpha + tol && norm2(p) <= r + tol
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("project", p)?;
        Ok(match *self {
            ConstraintSet::FullSpace { .. } => p.to_vec(),
            ConstraintSet::L2Ball { r, .. } => project_l2(p, r),
            ConstraintSet::L1Ball { alpha, .. } => project_l1(p, alpha),
            ConstraintSet::L1L2Intersection { alpha, r, .. } => project_l1_l2(p, alpha, r),
        })
    }

    /// Support function `sup_{t∈T} ⟨w,t⟩`.
    pub fn support_value(&self, w: &[f64]) -> Result<f64> {
        self.check_dim("support_value", w)?;
        match *self {
            ConstraintSet::FullSpace { .. } => Err(Error::Unbounded),
            ConstraintSet::L2Ball { r, .. } => Ok(r * norm2(w)),
            ConstraintSet::L1Ball { alpha, .. } => Ok(alpha * norm_inf(w)),
            ConstraintSet::L1L2Intersection { alpha, r, .. } => Ok(support_l1_l2(w, alpha, r)),
        }
    }

    /// `sup_{t∈T} |⟨w,t⟩|` — equal to the plain support value for these
    /// origin-symmetric sets, kept explicit for the absolute-value suprema.
    pub fn symmetric_support(&self, w: &[f64]) -> Result<f64> {
        let plus = self.support_value(w)?;
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let minus = self.support_value(&neg)?;
        Ok(plus.max(minus))
    }
}

fn project_l2(p: &[f64], r: f64) -> Vec<f64> {
    let n = norm2(p);
    if n <= r {
        p.to_vec()
    } else {
        let s = r / n;
        p.iter().map(|x| x * s).collect()
    }
}

/// Sort-and-threshold projection onto the l1 ball of radius `alpha`.
fn project_l1(p: &[f64], alpha: f64) -> Vec<f64> {
    if norm1(p) <= alpha {
        return p.to_vec();
    }
    let tau = l1_threshold(p, alpha);
    soft_threshold(p, tau)
}

/// The soft threshold `tau >= 0` such that `|| soft(p, tau) ||_1 = alpha`,
/// assuming `||p||_1 > alpha`. O(n log n) and exact up to rounding.
fn l1_threshold(p: &[f64], alpha: f64) -> f64 {
    let mut u: Vec<f64> = p.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cssv = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cssv += uk;
        let t = (cssv - alpha) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

fn soft_threshold(p: &[f64], tau: f64) -> Vec<f64> {
    p.iter()
        .map(|&x| x.signum() * (x.abs() - tau).max(0.0))
        .collect()
}

/// Projection onto `alpha*B1 ∩ r*B2`.
///
/// KKT: the minimizer has the form `soft(p, lambda) / (1 + mu)` with
/// `lambda, mu >= 0`. If one single-ball projection is feasible for the other
/// ball it is optimal; otherwise both constraints are active and `lambda`
/// solves `||soft(p,lambda)||_1 / ||soft(p,lambda)||_2 = alpha / r`, a
/// monotone 1-D root problem handled by bisection.
fn project_l1_l2(p: &[f64], alpha: f64, r: f64) -> Vec<f64> {
    if norm1(p) <= alpha && norm2(p) <= r {
        return p.to_vec();
    }
    let x2 = project_l2(p, r);
    if norm1(&x2) <= alpha * (1.0 + 1e-15) {
        return x2;
    }
    let x1 = project_l1(p, alpha);
    if norm2(&x1) <= r * (1.0 + 1e-15) {
        return x1;
    }

    // Both constraints active.
    let target = alpha / r;
    let ratio = |lambda: f64| -> f64 {
        let s = soft_threshold(p, lambda);
        let n2 = norm2(&s);
        if n2 == 0.0 { 1.0 } else { norm1(&s) / n2 }
    };
    let mut lo = 0.0;
    let mut hi = norm_inf(p);
    // ratio is non-increasing in lambda: ratio(lo) >= target >= ratio(hi-)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.max(1e-300) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let s = soft_threshold(p, lambda);
    let n2 = norm2(&s);
    if n2 == 0.0 {
        return vec![0.0; p.len()];
    }
    let scale = r / n2;
    let mut x: Vec<f64> = s.iter().map(|v| v * scale).collect();
    // snap residual bisection slack onto the l1 constraint
    let n1 = norm1(&x);
    if n1 > alpha {
        let s2 = alpha / n1;
        for v in &mut x {
            *v *= s2;
        }
    }
    x
}

/// Support function of `alpha*B1 ∩ r*B2` via the infimal convolution
/// `min_{tau >= 0} [ alpha*tau + r*||soft(w, tau)||_2 ]`, a convex 1-D
/// problem solved by golden-section search on `[0, ||w||_inf]`.
fn support_l1_l2(w: &[f64], alpha: f64, r: f64) -> f64 {
    let hi = norm_inf(w);
    if hi == 0.0 {
        return 0.0;
    }
    let g = |tau: f64| -> f64 { alpha * tau + r * norm2(&soft_threshold(w, tau)) };
    let inv_phi = 0.618_033_988_749_894_9; // 1/golden ratio
    let mut a = 0.0;
    let mut b = hi;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a) > 1e-10 * hi {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    g(0.5 * (a + b)).min(g(0.0)).min(g(hi))
}
