//! Erlang-B blocking probability and its inverse in the offered load.
//!
//! For an M/M/N/N loss system with `N` servers and offered load `a = λ/μ`
//! erlangs, the steady-state blocking probability is
//!
//! ```text
//! B(N, a) = (a^N / N!) / Σ_{j=0}^{N} a^j / j!
//! ```
//!
//! The factorial form overflows in naive floating point near `N = 170`, so
//! [`erlang_b`] uses the standard stable recurrence
//!
//! ```text
//! B(0, a) = 1,    B(m, a) = a·B(m−1, a) / (m + a·B(m−1, a)),
//! ```
//!
//! which is mathematically identical and stays in `[0, 1]` at every step.
//!
//! `B(N, ·)` is strictly increasing on `(0, ∞)` for `N ≥ 1`, which makes the
//! inverse problem (find `a` with `B(N, a) = b`) a bracketing exercise;
//! [`inverse_erlang_b`] grows a geometric bracket from `a = 1` and bisects.
//! Bisection is slower than Newton but converges unconditionally, and speed
//! is irrelevant at the scale this crate operates.

use crate::{Error, Result};

/// Offered load `a = λ/μ` in erlangs. Non-negative and finite by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct OfferedLoad(f64);

impl OfferedLoad {
    /// Validates `value ≥ 0` and finite.
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Domain(format!(
                "offered load must be finite and non-negative, got {value}"
            )));
        }
        Ok(OfferedLoad(value))
    }

    /// The load in erlangs.
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Blocking probability `B(servers, load)` of an M/M/N/N loss system.
///
/// Returns a value in `[0, 1]`. Zero servers block everything; zero load
/// blocks nothing (for `servers ≥ 1`). Strictly increasing in the load and
/// strictly decreasing in the server count wherever the result does not
/// underflow.
pub fn erlang_b(servers: u32, load: OfferedLoad) -> f64 {
    let a = load.value();
    let mut b = 1.0_f64;
    for m in 1..=servers {
        b = a * b / (f64::from(m) + a * b);
    }
    b
}

/// Convenience wrapper validating the raw load before evaluating.
pub fn erlang_b_checked(servers: u32, load: f64) -> Result<f64> {
    Ok(erlang_b(servers, OfferedLoad::new(load)?))
}

/// Maximum bisection iterations for [`inverse_erlang_b`]. Unreachable in
/// practice given strict monotonicity.
const INVERSE_MAX_ITER: usize = 200;

/// Inverse of [`erlang_b`] in the load: the unique `a` with
/// `B(servers, a) = target_b`.
///
/// Requires `servers ≥ 1` and `target_b ∈ (0, 1)`. The bracket is grown
/// geometrically from `a = 1`, then bisected until the bracket collapses to
/// adjacent floats, which leaves `|B(servers, a) − target_b| ≤ 1e-12`.
pub fn inverse_erlang_b(servers: u32, target_b: f64) -> Result<OfferedLoad> {
    if servers == 0 {
        return Err(Error::Domain(
            "inverse Erlang-B needs at least one server".into(),
        ));
    }
    if !(target_b > 0.0 && target_b < 1.0) {
        return Err(Error::Domain(format!(
            "target blocking probability must lie in (0, 1), got {target_b}"
        )));
    }

    let eval = |a: f64| erlang_b(servers, OfferedLoad(a));

    // Geometric bracket around a = 1. Doubling (or halving) spans the whole
    // f64 range in ~1100 steps each way.
    let mut lo;
    let mut hi;
    if eval(1.0) >= target_b {
        hi = 1.0;
        lo = 0.5;
        while eval(lo) > target_b {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-320 {
                // target below anything representable; lo is the best answer
                break;
            }
        }
    } else {
        lo = 1.0;
        hi = 2.0;
        while eval(hi) < target_b {
            lo = hi;
            hi *= 2.0;
            if hi > 1e307 {
                return Err(Error::NoConvergence {
                    what: "inverse Erlang-B bracketing",
                    iterations: INVERSE_MAX_ITER,
                });
            }
        }
    }

    for _ in 0..INVERSE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket collapsed to adjacent floats
        }
        if eval(mid) < target_b {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let a = 0.5 * (lo + hi);
    if (eval(a) - target_b).abs() <= 1e-12 {
        Ok(OfferedLoad(a))
    } else {
        Err(Error::NoConvergence {
            what: "inverse Erlang-B bisection",
            iterations: INVERSE_MAX_ITER,
        })
    }
}

/// `ln m!` by direct summation. Exact enough for the server counts handled
/// here (error grows like m·ε, negligible below m ~ 1e6).
pub(crate) fn ln_factorial(m: u32) -> f64 {
    (1..=m).map(|i| f64::from(i).ln()).sum()
}

/// `ln Σ_i exp(x_i)` guarded against overflow; `-inf` inputs are ignored.
pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = terms.collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
