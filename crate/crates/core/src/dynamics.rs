//! Random coalition-formation dynamics.
//!
//! Starting from some configuration, agents repeatedly look for blocking
//! moves. All blocking coalitions (mergers and splits together) form one
//! urn; one is drawn uniformly at random, the partition is rewritten, and
//! payoffs are updated so that every member of the moving coalition strictly
//! gains. The walk stops at a stable configuration, at the step cap, or when
//! a (partition, quantized payoff) state repeats.
//!
//! The payoff update is the equal-surplus rule: every block of the new
//! partition — the mover, a split's residual, and each surviving block —
//! spreads the difference between its new rate and its members' previous
//! payoff total evenly over its members. Any rule giving movers a strict
//! gain works; this one is the simplest and is isolated in
//! [`apply_equal_surplus`] so it can be swapped.
//!
//! Convergence is guaranteed under RB-IA when assumption [`check_a1`]
//! verifies: every coalition not containing a utilization-maximizing
//! coalition must beat all of its strict subsets in pessimal per-server
//! value. Heavy and light traffic satisfy it; [`check_a1`] decides any
//! instance exhaustively.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{
    BlockWitness, CoalitionSet, Configuration, MoveKind, Partition, PayoffVector, StabilityRule,
    SystemSpec,
};
use crate::stability::{blocks_config, candidate_moves, k_star, MAX_SCAN_AGENTS};
use crate::wardrop::{psi, wardrop_split};
use crate::{Error, Result};

/// Default step cap for [`run`].
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Outcome of the exhaustive convergence-assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct A1Report {
    pub holds: bool,
    /// A violating pair (coalition, strict subset) when the assumption fails.
    pub counterexample: Option<(CoalitionSet, CoalitionSet)>,
}

/// Verifies, for every coalition `C` that does not contain any
/// utilization-maximizing coalition as a subset, that each strict non-empty
/// subset `S ⊂ C` has strictly lower pessimal per-server value than `C`.
///
/// Near-ties (within the strictness margin) are reported as violations: the
/// assumption certifies convergence, so it is only claimed when it clearly
/// holds.
pub fn check_a1(spec: &SystemSpec) -> Result<A1Report> {
    let n = spec.n_agents();
    if n > MAX_SCAN_AGENTS {
        return Err(Error::SizeLimit {
            what: "convergence-assumption check",
            n,
            max: MAX_SCAN_AGENTS,
        });
    }
    let maximizers = k_star(spec)?.maximizers;
    let n_total = spec.total_servers();
    let lambda = spec.total_rate();

    // pessimal per-server value depends only on the server count
    let mut per_server = vec![0.0_f64; n_total as usize + 1];
    for k in 1..n_total {
        per_server[k as usize] = psi(spec, k)?.psi;
    }
    per_server[n_total as usize] = lambda / f64::from(n_total);

    let full = spec.all_agents();
    for bits in 1u32..=full.bits() {
        let c = CoalitionSet::from_bits(bits);
        if !c.is_subset_of(full) || c.len() < 2 {
            continue;
        }
        let contains_maximizer = c
            .proper_nonempty_subsets()
            .chain(std::iter::once(c))
            .any(|s| maximizers.contains(&spec.coalition_servers(s)));
        if contains_maximizer {
            continue;
        }
        let own = per_server[spec.coalition_servers(c) as usize];
        for s in c.proper_nonempty_subsets() {
            let sub = per_server[spec.coalition_servers(s) as usize];
            // the assumption needs strict dominance; a near-tie cannot
            // certify it, so anything not clearly below counts as a breach
            if !crate::strictly_exceeds(own, sub) {
                return Ok(A1Report {
                    holds: false,
                    counterexample: Some((c, s)),
                });
            }
        }
    }
    Ok(A1Report {
        holds: true,
        counterexample: None,
    })
}

/// Result of one dynamics step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    /// No coalition blocks: the configuration is stable under the rule.
    Stable,
    /// A blocking coalition was drawn and applied.
    Moved {
        next: Configuration,
        witness: BlockWitness,
    },
}

/// Collects every blocking coalition under the rule, draws one uniformly,
/// and applies it (new partition, equal-surplus payoff update).
///
/// Only the restricted rules drive dynamics; `GbPa` is rejected.
pub fn step(
    spec: &SystemSpec,
    cfg: &Configuration,
    rule: StabilityRule,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    if rule == StabilityRule::GbPa {
        return Err(Error::Domain(
            "dynamics are defined for the restricted rules only".into(),
        ));
    }

    let mut blocking = Vec::new();
    for (q, kind) in candidate_moves(cfg.partition(), rule) {
        if let Some(w) = blocks_config(spec, cfg, q, kind, rule)? {
            blocking.push(w);
        }
    }
    if blocking.is_empty() {
        return Ok(StepOutcome::Stable);
    }
    let witness = blocking[rng.random_range(0..blocking.len())].clone();
    let next = apply_move(spec, cfg, &witness)?;
    Ok(StepOutcome::Moved { next, witness })
}

/// Rewrites the partition for a chosen blocking coalition and updates
/// payoffs with the equal-surplus rule.
fn apply_move(spec: &SystemSpec, cfg: &Configuration, witness: &BlockWitness) -> Result<Configuration> {
    let p = cfg.partition();
    let next_partition = match witness.move_kind {
        MoveKind::Merger => p.merge_union(witness.blocker)?,
        MoveKind::Split => p.split_block(witness.blocker)?,
        MoveKind::General => {
            return Err(Error::Domain(
                "general moves do not occur in restricted dynamics".into(),
            ))
        }
    };
    let payoff = apply_equal_surplus(spec, cfg.payoff(), &next_partition)?;
    Configuration::new(spec, next_partition, payoff)
}

/// Equal-surplus payoff update: each block of `next` adds
/// `(λ_B_new − Σ_{j∈B} φ_j_old) / |B|` to every member.
///
/// A block that lost value can push a member below zero; the deficit is then
/// redistributed inside that block (clamping at zero) so the vector stays
/// non-negative while block totals are preserved. Members of a coalition
/// that moved always gained, so they are never clamped.
fn apply_equal_surplus(
    spec: &SystemSpec,
    old: &PayoffVector,
    next: &Partition,
) -> Result<PayoffVector> {
    let we = wardrop_split(spec, next)?;
    let mut values = vec![0.0; spec.n_agents()];
    for (block, &rate) in next.blocks().iter().zip(we.rates()) {
        let members: Vec<usize> = block.members().collect();
        let previous: f64 = members.iter().map(|&i| old.get(i)).sum();
        let share = (rate - previous) / members.len() as f64;
        let mut updated: Vec<f64> = members.iter().map(|&i| old.get(i) + share).collect();

        // clamp-and-redistribute: keep the block total while staying >= 0
        for _ in 0..members.len() {
            let deficit: f64 = updated.iter().filter(|v| **v < 0.0).sum();
            if deficit == 0.0 {
                break;
            }
            let positive: f64 = updated.iter().filter(|v| **v > 0.0).sum();
            for v in updated.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                } else if *v > 0.0 {
                    *v += deficit * (*v / positive);
                }
            }
        }
        for (m, v) in members.iter().zip(updated) {
            values[*m] = v.max(0.0);
        }
    }
    PayoffVector::new(values)
}

/// Why a trace ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// The final configuration passes the stability predicate.
    Stable,
    /// The step cap was exhausted.
    StepCapReached,
    /// A previously visited (partition, quantized payoff) state recurred.
    Cycling,
}

impl std::fmt::Display for Terminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Terminal::Stable => "stable",
            Terminal::StepCapReached => "step-cap-reached",
            Terminal::Cycling => "cycling",
        };
        f.write_str(s)
    }
}

/// One applied move: the state after it, and the witness that drove it.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub partition: Partition,
    pub payoff: PayoffVector,
    pub witness: BlockWitness,
}

/// A full dynamics run. Consecutive states differ by exactly one merger or
/// split; `terminal == Stable` if and only if the final configuration passes
/// the stability predicate.
#[derive(Debug, Clone)]
pub struct DynamicsTrace {
    pub initial: Configuration,
    pub steps: Vec<TraceStep>,
    pub terminal: Terminal,
    pub seed: u64,
    pub rule: StabilityRule,
}

impl DynamicsTrace {
    /// The configuration the trace ended in.
    pub fn final_configuration(&self) -> Configuration {
        match self.steps.last() {
            Some(s) => Configuration::from_parts(s.partition.clone(), s.payoff.clone()),
            None => self.initial.clone(),
        }
    }

    /// Plain-text export: one comma-separated line per state. Line 0 is the
    /// initial configuration (kind `init`, empty blocker); each later line
    /// holds the step index, the partition's restricted growth string, the
    /// chosen blocker's bitmask, the move kind, and the per-agent payoffs.
    pub fn export(&self) -> String {
        let fmt_payoffs = |phi: &PayoffVector| {
            phi.values()
                .iter()
                .map(|v| format!("{v:.12e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        out.push_str(&format!(
            "0,{},0,init,{}\n",
            self.initial.partition().rgs_string(),
            fmt_payoffs(self.initial.payoff())
        ));
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                s.partition.rgs_string(),
                s.witness.blocker.bits(),
                s.witness.move_kind,
                fmt_payoffs(&s.payoff)
            ));
        }
        out
    }
}

/// Quantized state key for cycle detection. Payoffs are rounded to
/// `1e-9 · Λ` before hashing so that near-repeats register as revisits.
fn state_key(lambda: f64, partition: &Partition, payoff: &PayoffVector) -> (String, Vec<i64>) {
    let unit = 1e-9 * lambda;
    let q = payoff
        .values()
        .iter()
        .map(|v| (v / unit).round() as i64)
        .collect();
    (partition.rgs_string(), q)
}

/// Runs the dynamics from `cfg0` until stability, a revisited state, or
/// `max_steps`. Fully deterministic for a given seed.
pub fn run(
    spec: &SystemSpec,
    cfg0: Configuration,
    rule: StabilityRule,
    seed: u64,
    max_steps: usize,
) -> Result<DynamicsTrace> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = spec.total_rate();

    let mut visited: HashSet<(String, Vec<i64>)> = HashSet::new();
    visited.insert(state_key(lambda, cfg0.partition(), cfg0.payoff()));

    let mut steps = Vec::new();
    let mut current = cfg0.clone();
    let mut terminal = Terminal::StepCapReached;
    for _ in 0..max_steps {
        match step(spec, &current, rule, &mut rng)? {
            StepOutcome::Stable => {
                terminal = Terminal::Stable;
                break;
            }
            StepOutcome::Moved { next, witness } => {
                steps.push(TraceStep {
                    partition: next.partition().clone(),
                    payoff: next.payoff().clone(),
                    witness,
                });
                let key = state_key(lambda, next.partition(), next.payoff());
                current = next;
                if !visited.insert(key) {
                    terminal = Terminal::Cycling;
                    break;
                }
            }
        }
    }

    Ok(DynamicsTrace {
        initial: cfg0,
        steps,
        terminal,
        seed,
        rule,
    })
}
