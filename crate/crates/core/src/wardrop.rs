//! The equal-blocking market split and per-server utilization.
//!
//! Given a partition, customers distribute themselves so that every
//! coalition sees the same steady-state blocking probability:
//!
//! ```text
//! B(N_C, λ_C/μ) = B*  for every block C,    Σ_C λ_C = Λ.
//! ```
//!
//! Such a split exists and is unique, with every λ_C strictly positive. The
//! solver parametrizes by the common blocking probability: define
//!
//! ```text
//! S(B) = Σ_C μ · a_{N_C}(B),      a_n(B) = inverse Erlang-B load,
//! ```
//!
//! which is strictly increasing in B, and bisect (in log space, since light
//! traffic drives B* toward underflow scale) until S(B*) = Λ. This reduces
//! the (|P|−1)-dimensional equalization problem to a one-dimensional root
//! with guaranteed monotone structure.
//!
//! Only the multiset of block server counts matters — all servers are
//! identical — so solves are memoized by (Λ, μ, sorted block sizes). The
//! stability scans revisit the same partitions heavily and hit this cache
//! almost always.
//!
//! [`psi`] exposes the per-server utilization Ψ(k; Λ) = λ_k/k of a k-server
//! coalition facing a fully merged complement, and [`h_residual`] evaluates
//! (in log form) the function whose unique zero is λ_k, for use as an
//! independent oracle on the solver.

use std::collections::HashMap;
use std::sync::{LazyLock, RwLock};

use crate::erlang::{erlang_b, inverse_erlang_b, ln_factorial, log_sum_exp, OfferedLoad};
use crate::model::{validate_partition, Partition, SystemSpec, WardropResult};
use crate::{Error, Result};

/// One point of the utilization curve: a coalition of `k` servers facing a
/// merged complement of `N - k` servers attracts `lambda_k`, i.e.
/// `psi = lambda_k / k` per server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiPoint {
    pub k: u32,
    pub psi: f64,
    pub lambda_k: f64,
}

type SizeKey = (u64, u64, Vec<u32>);

/// size-multiset solve: common blocking, rate per sorted-size entry, residual
type SizeSolution = (f64, Vec<f64>, f64);

static WE_CACHE: LazyLock<RwLock<HashMap<SizeKey, SizeSolution>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

fn cache_key(total_rate: f64, service_rate: f64, sizes: &[u32]) -> SizeKey {
    (total_rate.to_bits(), service_rate.to_bits(), sizes.to_vec())
}

/// Computes the unique equal-blocking split of Λ across the blocks of `p`.
///
/// Rates are returned in the partition's canonical block order. The achieved
/// residual |Σλ_C − Λ| is far below [`crate::tol_feas`]; per-block blocking
/// probabilities match `common_blocking` to the inverse-Erlang tolerance.
pub fn wardrop_split(spec: &SystemSpec, p: &Partition) -> Result<WardropResult> {
    validate_partition(spec, p)?;

    let sizes: Vec<u32> = p.blocks().iter().map(|b| spec.coalition_servers(*b)).collect();
    let order: Vec<usize> = {
        let mut ix: Vec<usize> = (0..sizes.len()).collect();
        ix.sort_by_key(|&i| sizes[i]);
        ix
    };
    let sorted: Vec<u32> = order.iter().map(|&i| sizes[i]).collect();

    let (common_blocking, sorted_rates, residual) =
        solve_by_sizes(spec.total_rate(), spec.service_rate(), &sorted)?;

    // scatter the sorted rates back to block order; equal sizes get equal rates
    let mut rates = vec![0.0; sizes.len()];
    for (pos, &block_ix) in order.iter().enumerate() {
        rates[block_ix] = sorted_rates[pos];
    }

    Ok(WardropResult::new(rates, common_blocking, residual))
}

/// Number of outer bisection steps; each halves the log-space bracket.
const SPLIT_MAX_ITER: usize = 2000;

fn solve_by_sizes(total_rate: f64, service_rate: f64, sorted_sizes: &[u32]) -> Result<SizeSolution> {
    let key = cache_key(total_rate, service_rate, sorted_sizes);
    if let Some(hit) = WE_CACHE.read().expect("cache lock").get(&key) {
        return Ok(hit.clone());
    }

    let solution = solve_by_sizes_uncached(total_rate, service_rate, sorted_sizes)?;
    WE_CACHE
        .write()
        .expect("cache lock")
        .insert(key, solution.clone());
    Ok(solution)
}

fn solve_by_sizes_uncached(
    total_rate: f64,
    service_rate: f64,
    sorted_sizes: &[u32],
) -> Result<SizeSolution> {
    let n_total: u32 = sorted_sizes.iter().sum();
    let gc_load = OfferedLoad::new(total_rate / service_rate)?;

    // Single block: the whole market, no equalization needed.
    if sorted_sizes.len() == 1 {
        let b = erlang_b(n_total, gc_load);
        return Ok((b, vec![total_rate], 0.0));
    }

    // All blocks the same size: the symmetric split is exact.
    if sorted_sizes.windows(2).all(|w| w[0] == w[1]) {
        let m = sorted_sizes.len() as f64;
        let rate = total_rate / m;
        let b = erlang_b(
            sorted_sizes[0],
            OfferedLoad::new(rate / service_rate)?,
        );
        return Ok((b, vec![rate; sorted_sizes.len()], 0.0));
    }

    let rates_at = |b: f64| -> Result<Vec<f64>> {
        sorted_sizes
            .iter()
            .map(|&n| Ok(service_rate * inverse_erlang_b(n, b)?.value()))
            .collect()
    };
    let excess = |rates: &[f64]| rates.iter().sum::<f64>() - total_rate;

    // Pooling everything gives the least blocking, so the grand-coalition
    // value brackets B* from below; 1 - 1e-12 brackets it from above.
    let mut lo = erlang_b(n_total, gc_load).max(1e-300);
    let mut hi: f64 = 1.0 - 1e-12;
    let mut lo_excess = excess(&rates_at(lo)?);
    while lo_excess > 0.0 {
        // only reachable through float noise right at the bracket edge
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoConvergence {
                what: "equal-blocking split bracketing",
                iterations: 0,
            });
        }
        lo_excess = excess(&rates_at(lo)?);
    }

    let tol = crate::solver_tol(total_rate);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for _ in 0..SPLIT_MAX_ITER {
        // geometric midpoint: light traffic puts B* hundreds of decades
        // below 1, where an arithmetic midpoint would stall
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        let rates = rates_at(mid)?;
        let e = excess(&rates);
        if best.as_ref().map_or(true, |(_, _, r)| e.abs() < *r) {
            best = Some((mid, rates.clone(), e.abs()));
        }
        if e.abs() <= tol {
            break;
        }
        if e < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (b_star, rates, residual) = best.ok_or(Error::NoConvergence {
        what: "equal-blocking split bisection",
        iterations: SPLIT_MAX_ITER,
    })?;
    if residual > crate::tol_feas(total_rate) {
        return Err(Error::NoConvergence {
            what: "equal-blocking split bisection",
            iterations: SPLIT_MAX_ITER,
        });
    }
    Ok((b_star, rates, residual))
}

/// Per-server utilization Ψ(k; Λ) of a k-server coalition facing the merged
/// remaining N−k servers. Requires `0 < k < N`.
///
/// Identical servers make only the counts matter, so this is the two-block
/// split with sizes (k, N−k) regardless of which agents contribute.
pub fn psi(spec: &SystemSpec, k: u32) -> Result<PsiPoint> {
    let n_total = spec.total_servers();
    if k == 0 || k >= n_total {
        return Err(Error::Domain(format!(
            "utilization point needs 0 < k < {n_total}, got {k}"
        )));
    }
    let mut sizes = [k, n_total - k];
    sizes.sort_unstable();
    let (_, rates, _) = solve_by_sizes(spec.total_rate(), spec.service_rate(), &sizes)?;
    let lambda_k = if sizes[0] == sizes[1] {
        rates[0]
    } else if sizes[0] == k {
        rates[0]
    } else {
        rates[1]
    };
    Ok(PsiPoint {
        k,
        psi: lambda_k / f64::from(k),
        lambda_k,
    })
}

/// Log-form residual of the polynomial identity satisfied by λ_k, the rate of
/// the k-server side of a (k, N−k) split:
///
/// ```text
/// h(λ) = λ^k/k! · Σ_{j=0}^{N-k} (Λ−λ)^j/j!  −  (Λ−λ)^{N-k}/(N−k)! · Σ_{j=0}^{k} λ^j/j!
/// ```
///
/// The value returned is `ln T₁ − ln T₂` for the two (positive) terms, which
/// has the same sign and the same unique zero as `h` but never overflows.
/// Negative at λ = 0, positive at λ = Λ; a sign change brackets λ_k, so this
/// serves as an oracle that is independent of the bisection solver.
pub fn h_residual(spec: &SystemSpec, k: u32, lam: f64) -> f64 {
    let n_total = spec.total_servers();
    let rest = n_total - k;
    let lambda = spec.total_rate();
    let ln_lam = lam.ln();
    let ln_other = (lambda - lam).ln();

    // the j = 0 summand is exactly 1; writing it as 0·ln(0) would be NaN
    let log_term = |j: u32, ln_x: f64| {
        if j == 0 {
            0.0
        } else {
            f64::from(j) * ln_x - ln_factorial(j)
        }
    };
    let term1 = log_term(k, ln_lam)
        + log_sum_exp((0..=rest).map(|j| log_term(j, ln_other)));
    let term2 = log_term(rest, ln_other)
        + log_sum_exp((0..=k).map(|j| log_term(j, ln_lam)));
    term1 - term2
}
