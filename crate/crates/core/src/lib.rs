//! Coalition formation analysis for competing Erlang-B loss systems.
//!
//! A fixed market of service requests (Poisson, total rate Λ) is shared by a
//! set of providers, each bringing some number of servers. Providers may pool
//! their servers into coalitions; the customer base then splits across the
//! coalitions of the resulting partition according to a Wardrop equilibrium
//! that equalizes steady-state blocking probabilities. Because the total
//! market is fixed, the game is constant sum: pooling buys economies of
//! scale, but only at the expense of the outside coalitions.
//!
//! The crate provides:
//!
//! * [`erlang`] — a numerically stable Erlang-B blocking formula and its
//!   inverse in the offered load,
//! * [`wardrop`] — the unique equal-blocking split of Λ for any partition,
//!   and the per-server utilization Ψ(k; Λ) of a k-server coalition facing a
//!   merged complement,
//! * [`stability`] — pessimistic anticipated values, blocking predicates for
//!   the RB-IA / RB-PA / GB-PA rules, whole-space stability scans, the
//!   utilization-maximizing coalition sizes k*(Λ), grand-coalition analysis,
//!   and a payoff-perturbation stability radius,
//! * [`dynamics`] — random merge/split dynamics with payoff updates, run
//!   until a stable configuration (or a step cap) is reached,
//! * [`asymptotics`] — first/second-order heavy-traffic approximations of the
//!   duopoly split and closed-form k* in both traffic extremes,
//! * [`mc`] — discrete-event Monte-Carlo simulation of M/M/N/N loss systems
//!   used to validate the analytic layers end to end.

pub mod asymptotics;
pub mod dynamics;
pub mod erlang;
pub mod mc;
pub mod model;
pub mod stability;
pub mod wardrop;

pub use model::{
    BlockWitness, CoalitionSet, Configuration, MoveKind, Partition, PayoffVector, StabilityRule,
    SystemSpec, WardropResult,
};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two partition blocks share an agent.
    #[error("agent {agent} appears in more than one block")]
    Overlap { agent: usize },
    /// An agent is not assigned to any block.
    #[error("agent {agent} is not covered by any block")]
    Coverage { agent: usize },
    /// An enumeration or scan was asked for more agents than it supports.
    #[error("{what} supports at most {max} agents, got {n}")]
    SizeLimit {
        what: &'static str,
        n: usize,
        max: usize,
    },
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative solver exhausted its iteration budget.
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },
    /// A stability-radius query was made on a configuration that is blocked.
    #[error("configuration is not stable: {0}")]
    NotStable(String),
    /// A constructed grand-coalition payoff failed its verification scan.
    /// This signals a bug in the construction, not a domain case.
    #[error("constructed grand-coalition payoff failed stability verification")]
    WitnessVerification,
    /// No proper subset of agents holds strictly more than half the servers.
    #[error("no proper subset sum exceeds half the total server count")]
    NoFeasibleK,
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Feasibility tolerance for rate sums: `1e-9 * max(1, Λ)`.
///
/// The equilibrium solver drives residuals well below this; a fixed relative
/// tolerance keeps downstream validation deterministic.
pub fn tol_feas(total_rate: f64) -> f64 {
    1e-9 * total_rate.max(1.0)
}

/// Absolute tolerance for blocking-probability equalization across blocks.
pub const BLOCKING_EQ_TOL: f64 = 1e-10;

/// Internal solver target, three orders tighter than the strictness margin
/// so that blocking comparisons are never decided by solver noise. Purely
/// relative: rates live on the scale of Λ whatever that scale is.
pub(crate) fn solver_tol(total_rate: f64) -> f64 {
    1e-12 * total_rate
}

/// Relative margin for deciding strict inequalities between solved rates.
pub(crate) const STRICT_REL_MARGIN: f64 = 1e-9;

/// Whether `a` strictly exceeds `b`, beyond float noise.
///
/// Exact theoretical ties (for example the grand-coalition merger, whose
/// pessimal value equals the prevailing worth identically) must not flip
/// into witnesses on solver noise, so the comparison demands a gap relative
/// to the larger magnitude. Light traffic pushes minority rates many orders
/// of magnitude below Λ, which is why the margin scales with the operands
/// rather than with the market.
pub(crate) fn strictly_exceeds(a: f64, b: f64) -> bool {
    a > b + STRICT_REL_MARGIN * a.abs().max(b.abs())
}
