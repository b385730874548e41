//! Heavy- and light-traffic approximations of the duopoly split and the
//! closed-form utilization maximizers at both traffic extremes.
//!
//! Equating reciprocal blocking probabilities of the two sides of a
//! (k, N−k) split and truncating to first order gives `λ₁ = kΛ/N`: the
//! per-server rate is then k-independent, which says nothing about which
//! duopoly wins. The second-order truncation keeps one more term and leads
//! to the fixed-point equation
//!
//! ```text
//! λ₁/k = (λ₂/(N−k)) · (1 + k/λ₁ − 1/λ₁) / (1 + (N−k)/λ₂ − 1/λ₂),   λ₂ = Λ − λ₁,
//! ```
//!
//! whose per-server solution ψ(k) = λ̂_k/k is strictly increasing in k once
//! Λ is large. Consequences used here:
//!
//! * heavy traffic — the unique maximizer of per-server utilization is
//!   `k* = N − N_n` (everyone but the smallest agent),
//! * light traffic — it is the least achievable size above N/2,
//!   `k̲* = min { N_C : N_C > N/2 }`.
//!
//! [`regime_crosscheck`] sweeps a Λ grid with the exact solver and flags
//! where the closed forms take over.

use std::collections::BTreeSet;

use crate::erlang::{erlang_b, OfferedLoad};
use crate::model::{CoalitionSet, SystemSpec};
use crate::stability::{k_star, KStarResult};
use crate::{Error, Result};

/// First-order heavy-traffic split: the k-server side of a (k, N−k) duopoly
/// attracts `kΛ/N`. Requires `0 < k < N`.
pub fn first_order_we(k: f64, total_servers: f64, total_rate: f64) -> f64 {
    debug_assert!(k > 0.0 && k < total_servers);
    k * total_rate / total_servers
}

/// Which truncation produced an approximate split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxOrder {
    First,
    Second,
}

/// Approximate equilibrium rate of the larger duopoly side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxWE {
    pub lambda_hat: f64,
    pub order: ApproxOrder,
    pub iterations: usize,
    /// Achieved |λ/k − G(λ)/k| of the fixed-point map.
    pub residual: f64,
}

const FIXED_POINT_MAX_ITER: usize = 10_000;
const FIXED_POINT_TOL: f64 = 1e-10;
const DAMPING: f64 = 0.5;

/// Solves the second-order fixed point for the k-server side of a (k, N−k)
/// split. `k` may be real; it must satisfy `N/2 ≤ k ≤ N−1` (the symmetric
/// point is the exact fixed point Λ/2).
///
/// Above `k = N−1` the complement holds less than one server and the
/// truncated equation loses its interior solution, so that corner is
/// rejected rather than solved.
///
/// Damped iteration from the first-order value, with a bisection fallback on
/// the residual when the iteration stalls.
pub fn second_order_we(k: f64, total_servers: f64, total_rate: f64) -> Result<ApproxWE> {
    let n = total_servers;
    if !(k >= n / 2.0 && k <= n - 1.0) {
        return Err(Error::Domain(format!(
            "second-order split needs N/2 <= k <= N-1, got k={k}, N={n}"
        )));
    }

    // G maps λ₁ to the right-hand side of the fixed-point equation, scaled
    // back to a rate.
    let g = |l1: f64| -> f64 {
        let l2 = total_rate - l1;
        let num = 1.0 + (k - 1.0) / l1;
        let den = 1.0 + (n - k - 1.0) / l2;
        k * (l2 / (n - k)) * (num / den)
    };
    let residual_of = |l1: f64| (l1 - g(l1)).abs() / k;

    let mut x = first_order_we(k, n, total_rate);
    if (2.0 * k - n).abs() < 1e-12 {
        // symmetric split: Λ/2 satisfies the equation identically
        return Ok(ApproxWE {
            lambda_hat: total_rate / 2.0,
            order: ApproxOrder::Second,
            iterations: 0,
            residual: residual_of(total_rate / 2.0),
        });
    }

    for it in 0..FIXED_POINT_MAX_ITER {
        let next = g(x);
        if !next.is_finite() || next <= 0.0 || next >= total_rate {
            break; // leave the rest to bisection
        }
        let moved = (1.0 - DAMPING) * x + DAMPING * next;
        x = moved;
        let r = residual_of(x);
        if r <= FIXED_POINT_TOL {
            return Ok(ApproxWE {
                lambda_hat: x,
                order: ApproxOrder::Second,
                iterations: it + 1,
                residual: r,
            });
        }
    }

    // Bisection fallback on F(λ) = λ/k − G(λ)/k, which is negative near 0
    // and positive near Λ.
    let f = |l1: f64| (l1 - g(l1)) / k;
    let eps = 1e-9 * total_rate;
    let mut lo = eps;
    let mut hi = total_rate - eps;
    let grid = 1 << 12;
    if f(lo) > 0.0 || f(hi) < 0.0 {
        // scan for a sign change on a fine grid
        let mut found = None;
        let mut prev = lo;
        let mut prev_f = f(lo);
        for i in 1..=grid {
            let x = eps + (total_rate - 2.0 * eps) * f64::from(i) / f64::from(grid);
            let fx = f(x);
            if prev_f <= 0.0 && fx >= 0.0 {
                found = Some((prev, x));
                break;
            }
            prev = x;
            prev_f = fx;
        }
        let (a, b) = found.ok_or(Error::NoConvergence {
            what: "second-order fixed point",
            iterations: FIXED_POINT_MAX_ITER,
        })?;
        lo = a;
        hi = b;
    }
    let mut iterations = FIXED_POINT_MAX_ITER;
    for it in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            iterations += it;
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let r = residual_of(x);
    if r <= FIXED_POINT_TOL {
        Ok(ApproxWE {
            lambda_hat: x,
            order: ApproxOrder::Second,
            iterations,
            residual: r,
        })
    } else {
        Err(Error::NoConvergence {
            what: "second-order fixed point",
            iterations: FIXED_POINT_MAX_ITER,
        })
    }
}

/// Heavy-traffic maximizer: every agent but the smallest, `N − N_n`.
pub fn heavy_k_star(spec: &SystemSpec) -> Result<u32> {
    if spec.n_agents() < 2 {
        return Err(Error::Domain(
            "the heavy-traffic maximizer needs at least two agents".into(),
        ));
    }
    let smallest = *spec.server_counts().last().expect("non-empty spec");
    Ok(spec.total_servers() - smallest)
}

/// Light-traffic maximizer: the least subset sum strictly above N/2 over
/// proper subsets. Errors with [`Error::NoFeasibleK`] when no proper subset
/// crosses the half mark (for example a symmetric duopoly).
pub fn light_k_star(spec: &SystemSpec) -> Result<u32> {
    let n = spec.n_agents();
    let n_total = spec.total_servers();
    let mut best: Option<u32> = None;
    for bits in 1u32..(1 << n) {
        let c = CoalitionSet::from_bits(bits);
        if c == spec.all_agents() {
            continue;
        }
        let sum = spec.coalition_servers(c);
        if 2 * sum > n_total && best.map_or(true, |b| sum < b) {
            best = Some(sum);
        }
    }
    best.ok_or(Error::NoFeasibleK)
}

/// One grid entry of [`regime_crosscheck`].
#[derive(Debug, Clone)]
pub struct RegimeRow {
    pub total_rate: f64,
    /// Exact maximizer set at this Λ.
    pub k_star: BTreeSet<u32>,
    /// Smallest maximizer, used as the representative when plotting k*(Λ).
    pub representative: u32,
    /// Grand-coalition blocking probability at this Λ.
    pub gc_blocking: f64,
    pub matches_heavy: bool,
    pub matches_light: bool,
}

/// Evaluates the exact maximizer set across a sorted Λ grid and compares the
/// ends against the closed-form heavy/light values.
pub fn regime_crosscheck(spec: &SystemSpec, lambda_grid: &[f64]) -> Result<Vec<RegimeRow>> {
    if lambda_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("the Λ grid must be sorted ascending".into()));
    }
    let heavy = heavy_k_star(spec)?;
    let light = light_k_star(spec).ok();
    let n_total = spec.total_servers();

    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let at = spec.with_total_rate(lambda)?;
        let ks: KStarResult = k_star(&at)?;
        let representative = ks
            .maximizers
            .iter()
            .copied()
            .next()
            .ok_or_else(|| Error::Domain("no achievable duopoly size".into()))?;
        let gc_blocking = erlang_b(n_total, OfferedLoad::new(lambda / spec.service_rate())?);
        rows.push(RegimeRow {
            total_rate: lambda,
            matches_heavy: ks.maximizers.len() == 1 && ks.maximizers.contains(&heavy),
            matches_light: light
                .map(|l| ks.maximizers.len() == 1 && ks.maximizers.contains(&l))
                .unwrap_or(false),
            representative,
            k_star: ks.maximizers,
            gc_blocking,
        });
    }
    Ok(rows)
}
