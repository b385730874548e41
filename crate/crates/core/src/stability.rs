//! Blocking predicates and stable-set classification under the three rules.
//!
//! A candidate coalition judges a move against its *pessimistic* anticipated
//! value: the least equilibrium rate it can obtain over all arrangements of
//! the outside agents. That minimum is attained when the outsiders merge
//! into a single block, so the fast path solves one two-block split; an
//! exhaustive oracle mode exists to test that reduction rather than assume
//! it.
//!
//! The rules differ in which coalitions may challenge and what they compare
//! against:
//!
//! * **RB-PA** — mergers of prevailing coalitions and splits of a single
//!   prevailing coalition; blocks when the pessimal rate strictly exceeds the
//!   members' current payoff total.
//! * **RB-IA** — same candidates, but a split is vetted in two stages: first
//!   against a proportional (imprecise) estimate of the members' prevailing
//!   worth, `(N_Q/N_C)·λ_C`, then against their true payoff total under the
//!   post-split partition. For a merger the payoff total equals the merged
//!   blocks' rate sum, so only the first comparison matters.
//! * **GB-PA** — any coalition outside the partition may challenge, compared
//!   against current payoffs.
//!
//! On top of the predicates this module provides whole-space scans, the
//! utilization-maximizing sizes k*(Λ) with the coalition family ℂ*, the
//! proportional payoff, grand-coalition analysis, and a payoff-perturbation
//! stability radius for RB-PA.

use std::collections::BTreeSet;

use crate::model::{
    enumerate_partitions, enumerate_partitions_containing, validate_partition, BlockWitness,
    CoalitionSet, Configuration, MoveKind, Partition, PayoffVector, StabilityRule, SystemSpec,
};
use crate::wardrop::{psi, wardrop_split, PsiPoint};
use crate::{Error, Result};

/// How the pessimistic anticipated value is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PessimalMode {
    /// Solve the single two-block split where all outside agents merge.
    Fast,
    /// Take the exact minimum over every partition containing the coalition.
    Oracle,
}

/// Agent-count cap for the oracle mode (it enumerates partitions of the
/// complement) and for whole-space scans.
pub const MAX_SCAN_AGENTS: usize = 10;

/// Tie tolerance used when collecting the argmax set of Ψ: `1e-9 · Λ`.
pub fn tie_tol(total_rate: f64) -> f64 {
    1e-9 * total_rate
}

/// Margin added to the grand-coalition payoff witness so its strict
/// inequalities survive floating point: `1e-6 · Λ`.
fn gc_margin(total_rate: f64) -> f64 {
    1e-6 * total_rate
}

use crate::strictly_exceeds;

/// The least equilibrium rate coalition `q` can be held to by the outside
/// agents; equivalently its pessimistic worth as an independent unit.
///
/// `Fast` solves the split `{q, everyone else merged}`. `Oracle` minimizes
/// over every partition containing `q` and errors above
/// [`MAX_SCAN_AGENTS`] outside agents.
pub fn pessimal_rate(spec: &SystemSpec, q: CoalitionSet, mode: PessimalMode) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Domain("a coalition must be non-empty".into()));
    }
    let n = spec.n_agents();
    let all = spec.all_agents();
    if !q.is_subset_of(all) {
        return Err(Error::Domain(format!("{q} is not within 0..{n}")));
    }
    if q == all {
        // no outside agents: the whole market, under any rule
        return Ok(spec.total_rate());
    }

    let merged_outside = Partition::new(n, vec![q, all.minus(q)])?;
    let fast = rate_of(spec, &merged_outside, q)?;
    match mode {
        PessimalMode::Fast => Ok(fast),
        PessimalMode::Oracle => {
            let outside = n - q.len();
            if outside > MAX_SCAN_AGENTS {
                return Err(Error::SizeLimit {
                    what: "oracle pessimal enumeration",
                    n: outside,
                    max: MAX_SCAN_AGENTS,
                });
            }
            let mut min = f64::INFINITY;
            for p in enumerate_partitions_containing(n, q)? {
                min = min.min(rate_of(spec, &p, q)?);
            }
            Ok(min)
        }
    }
}

/// Equilibrium rate of one block of `p`.
fn rate_of(spec: &SystemSpec, p: &Partition, block: CoalitionSet) -> Result<f64> {
    let we = wardrop_split(spec, p)?;
    let ix = p
        .blocks()
        .iter()
        .position(|b| *b == block)
        .ok_or_else(|| Error::Domain(format!("{block} is not a block of {p}")))?;
    Ok(we.rates()[ix])
}

/// Splits each block's value among its members in proportion to the servers
/// they bring: `φ_i = (N_i / N_C) · λ_C`.
pub fn proportional_payoff(spec: &SystemSpec, p: &Partition) -> Result<PayoffVector> {
    validate_partition(spec, p)?;
    let we = wardrop_split(spec, p)?;
    let mut values = vec![0.0; spec.n_agents()];
    for (block, &rate) in p.blocks().iter().zip(we.rates()) {
        let pooled = f64::from(spec.coalition_servers(*block));
        for i in block.members() {
            // divide first: a lone member's share is then exactly its rate
            values[i] = rate * (f64::from(spec.servers_of(i)) / pooled);
        }
    }
    PayoffVector::new(values)
}

/// Candidate blocking coalitions for a partition under a rule, in a fixed
/// deterministic order.
///
/// Restricted rules: every union of two or more blocks (mergers, ascending by
/// block-subset bitmask) followed by every proper non-empty subset of each
/// block (splits, blocks in canonical order). General rule: every non-empty
/// coalition that is not already a block, ascending by bitmask.
pub fn candidate_moves(p: &Partition, rule: StabilityRule) -> Vec<(CoalitionSet, MoveKind)> {
    let mut out = Vec::new();
    match rule {
        StabilityRule::RbIa | StabilityRule::RbPa => {
            let k = p.size();
            for mask in 1u32..(1 << k) {
                if mask.count_ones() < 2 {
                    continue;
                }
                let mut union = CoalitionSet::EMPTY;
                for (i, b) in p.blocks().iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        union = union.union(*b);
                    }
                }
                out.push((union, MoveKind::Merger));
            }
            for block in p.blocks() {
                for q in block.proper_nonempty_subsets() {
                    out.push((q, MoveKind::Split));
                }
            }
        }
        StabilityRule::GbPa => {
            let full = CoalitionSet::full(p.n_agents()).bits();
            for bits in 1u32..=full {
                let q = CoalitionSet::from_bits(bits);
                if q.is_subset_of(CoalitionSet::from_bits(full)) && !p.contains_block(q) {
                    out.push((q, MoveKind::General));
                }
            }
        }
    }
    out
}

/// Evaluates whether `q` (produced by [`candidate_moves`] for this rule)
/// blocks the configuration; returns the witness if it does.
pub fn blocks_config(
    spec: &SystemSpec,
    cfg: &Configuration,
    q: CoalitionSet,
    kind: MoveKind,
    rule: StabilityRule,
) -> Result<Option<BlockWitness>> {
    blocks_config_with_mode(spec, cfg, q, kind, rule, PessimalMode::Fast)
}

/// [`blocks_config`] with an explicit pessimal-value mode.
pub fn blocks_config_with_mode(
    spec: &SystemSpec,
    cfg: &Configuration,
    q: CoalitionSet,
    kind: MoveKind,
    rule: StabilityRule,
    mode: PessimalMode,
) -> Result<Option<BlockWitness>> {
    let lambda = spec.total_rate();
    let p = cfg.partition();
    let pessimal = pessimal_rate(spec, q, mode)?;
    let witness = |anticipated: f64, prevailing: f64| BlockWitness {
        blocker: q,
        move_kind: kind,
        anticipated_value: anticipated,
        prevailing_worth: prevailing,
    };

    match (rule, kind) {
        (StabilityRule::RbPa, MoveKind::Merger | MoveKind::Split)
        | (StabilityRule::GbPa, MoveKind::General) => {
            let worth = cfg.payoff().coalition_total(q);
            Ok(strictly_exceeds(pessimal, worth).then(|| witness(pessimal, worth)))
        }
        (StabilityRule::RbIa, MoveKind::Merger) => {
            // consistent payoffs make the members' total equal the merged
            // blocks' rate sum, so the second-stage check is automatic
            let we = wardrop_split(spec, p)?;
            let before: f64 = p
                .blocks()
                .iter()
                .zip(we.rates())
                .filter(|(b, _)| b.is_subset_of(q))
                .map(|(_, &r)| r)
                .sum();
            Ok(strictly_exceeds(pessimal, before).then(|| witness(pessimal, before)))
        }
        (StabilityRule::RbIa, MoveKind::Split) => {
            let host = p
                .blocks()
                .iter()
                .find(|b| q.is_subset_of(**b))
                .copied()
                .ok_or_else(|| Error::Domain(format!("{q} is not inside any block of {p}")))?;
            let host_rate = rate_of(spec, p, host)?;
            let estimate = host_rate * f64::from(spec.coalition_servers(q))
                / f64::from(spec.coalition_servers(host));
            if !strictly_exceeds(pessimal, estimate) {
                return Ok(None);
            }
            // stage two: the realized post-split rate against true payoffs
            let post = p.split_block(q)?;
            let realized = rate_of(spec, &post, q)?;
            let worth = cfg.payoff().coalition_total(q);
            Ok(strictly_exceeds(realized, worth).then(|| witness(pessimal, estimate)))
        }
        (rule, kind) => Err(Error::Domain(format!(
            "move kind {kind} is not a candidate under rule {rule}"
        ))),
    }
}

/// Stability verdict for one configuration under one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub witness: Option<BlockWitness>,
    pub rule: StabilityRule,
}

/// Scans all candidate moves; the first blocking coalition in canonical
/// order becomes the witness.
pub fn is_stable(
    spec: &SystemSpec,
    cfg: &Configuration,
    rule: StabilityRule,
) -> Result<StabilityVerdict> {
    is_stable_with_mode(spec, cfg, rule, PessimalMode::Fast)
}

/// [`is_stable`] with an explicit pessimal-value mode.
pub fn is_stable_with_mode(
    spec: &SystemSpec,
    cfg: &Configuration,
    rule: StabilityRule,
    mode: PessimalMode,
) -> Result<StabilityVerdict> {
    for (q, kind) in candidate_moves(cfg.partition(), rule) {
        if let Some(w) = blocks_config_with_mode(spec, cfg, q, kind, rule, mode)? {
            return Ok(StabilityVerdict {
                stable: false,
                witness: Some(w),
                rule,
            });
        }
    }
    Ok(StabilityVerdict {
        stable: true,
        witness: None,
        rule,
    })
}

/// The utilization-maximizing larger-coalition sizes.
///
/// `achievable_ks` collects every subset-sum of the server counts strictly
/// between N/2 and N. `maximizers` is the argmax set of Ψ over those sizes,
/// within [`tie_tol`]. A realizable even split (k = N/2, where Ψ = Λ/N
/// exactly) never beats an interior point, so it is reported separately in
/// `half_split` and only promoted to `maximizers` when no interior size
/// exists at all.
#[derive(Debug, Clone, PartialEq)]
pub struct KStarResult {
    pub maximizers: BTreeSet<u32>,
    pub psi_max: Option<f64>,
    pub achievable_ks: BTreeSet<u32>,
    pub half_split: Option<PsiPoint>,
}

/// Computes [`KStarResult`] by evaluating Ψ at every achievable size.
pub fn k_star(spec: &SystemSpec) -> Result<KStarResult> {
    let n = spec.n_agents();
    let n_total = spec.total_servers();
    let mut sums: BTreeSet<u32> = BTreeSet::new();
    for bits in 1u32..(1 << n) {
        let c = CoalitionSet::from_bits(bits);
        if c != spec.all_agents() {
            sums.insert(spec.coalition_servers(c));
        }
    }

    let achievable_ks: BTreeSet<u32> = sums
        .iter()
        .copied()
        .filter(|&k| 2 * k > n_total && k < n_total)
        .collect();
    let half_achievable = n_total % 2 == 0 && sums.contains(&(n_total / 2));
    let half_split = if half_achievable {
        Some(psi(spec, n_total / 2)?)
    } else {
        None
    };

    if achievable_ks.is_empty() {
        // only the even split (if even that) is realizable
        let maximizers = half_split.iter().map(|p| p.k).collect();
        return Ok(KStarResult {
            maximizers,
            psi_max: half_split.map(|p| p.psi),
            achievable_ks,
            half_split,
        });
    }

    let points: Vec<PsiPoint> = achievable_ks
        .iter()
        .map(|&k| psi(spec, k))
        .collect::<Result<_>>()?;
    let best = points.iter().map(|p| p.psi).fold(f64::MIN, f64::max);
    let tol = tie_tol(spec.total_rate());
    let maximizers: BTreeSet<u32> = points
        .iter()
        .filter(|p| p.psi >= best - tol)
        .map(|p| p.k)
        .collect();

    Ok(KStarResult {
        maximizers,
        psi_max: Some(best),
        achievable_ks,
        half_split,
    })
}

/// The coalitions realizing a maximizing size: `{C : N_C ∈ maximizers}`.
pub fn c_star(spec: &SystemSpec) -> Result<Vec<CoalitionSet>> {
    let ks = k_star(spec)?;
    let n = spec.n_agents();
    let mut out = Vec::new();
    for bits in 1u32..(1 << n) {
        let c = CoalitionSet::from_bits(bits);
        if ks.maximizers.contains(&spec.coalition_servers(c)) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Whole-partition verdict produced by [`stable_set_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVerdict {
    /// No candidate passes the payoff-independent checks: stable for every
    /// consistent payoff vector.
    StableAllPayoffs,
    /// Stable at the proportional payoff; some candidate passes a
    /// payoff-independent stage, so other payoffs may be blocked.
    StableAtProportional,
    /// Blocked (at the proportional payoff, where the verdict is
    /// payoff-dependent).
    Blocked,
}

impl std::fmt::Display for ScanVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScanVerdict::StableAllPayoffs => "stable-all-payoffs",
            ScanVerdict::StableAtProportional => "stable-at-proportional",
            ScanVerdict::Blocked => "blocked",
        };
        f.write_str(s)
    }
}

/// One scanned partition.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub partition: Partition,
    pub verdict: ScanVerdict,
    pub witness: Option<BlockWitness>,
    /// Whether the verdict hinges on the payoff vector (true unless it was
    /// decided entirely by payoff-independent comparisons).
    pub payoff_dependent: bool,
}

/// Classifies every partition of the system under one rule.
///
/// RB-IA verdicts are payoff-free wherever the theory permits: merger
/// blocking and the first split stage do not involve payoffs, so a partition
/// with no candidate passing them is stable for all payoffs. A partition
/// whose fate rests on the second split stage is evaluated at the
/// proportional payoff and flagged `payoff_dependent`. RB-PA and GB-PA are
/// evaluated at the proportional payoff; their merger verdicts are still
/// payoff-independent because block payoff totals are pinned by consistency.
pub fn stable_set_scan(spec: &SystemSpec, rule: StabilityRule) -> Result<Vec<ScanRow>> {
    stable_set_scan_with_mode(spec, rule, PessimalMode::Fast)
}

/// [`stable_set_scan`] with an explicit pessimal-value mode.
pub fn stable_set_scan_with_mode(
    spec: &SystemSpec,
    rule: StabilityRule,
    mode: PessimalMode,
) -> Result<Vec<ScanRow>> {
    let n = spec.n_agents();
    if n > MAX_SCAN_AGENTS {
        return Err(Error::SizeLimit {
            what: "stability scan",
            n,
            max: MAX_SCAN_AGENTS,
        });
    }
    let mut rows = Vec::new();

    for p in enumerate_partitions(n)? {
        let payoff = proportional_payoff(spec, &p)?;
        let cfg = Configuration::new(spec, p.clone(), payoff)?;

        let mut verdict = ScanVerdict::StableAllPayoffs;
        let mut witness = None;
        let mut payoff_dependent = false;

        match rule {
            StabilityRule::RbIa => {
                'moves: for (q, kind) in candidate_moves(&p, rule) {
                    match kind {
                        MoveKind::Merger => {
                            if let Some(w) = blocks_config_with_mode(spec, &cfg, q, kind, rule, mode)? {
                                verdict = ScanVerdict::Blocked;
                                witness = Some(w);
                                break 'moves;
                            }
                        }
                        MoveKind::Split => {
                            // payoff-independent first stage
                            let host = p
                                .blocks()
                                .iter()
                                .find(|b| q.is_subset_of(**b))
                                .copied()
                                .expect("split candidate lies in a block");
                            let host_rate = rate_of(spec, &p, host)?;
                            let estimate = host_rate * f64::from(spec.coalition_servers(q))
                                / f64::from(spec.coalition_servers(host));
                            let pessimal = pessimal_rate(spec, q, mode)?;
                            if !strictly_exceeds(pessimal, estimate) {
                                continue;
                            }
                            // the verdict now depends on the payoff vector
                            payoff_dependent = true;
                            if let Some(w) = blocks_config_with_mode(spec, &cfg, q, kind, rule, mode)? {
                                verdict = ScanVerdict::Blocked;
                                witness = Some(w);
                                break 'moves;
                            }
                            verdict = ScanVerdict::StableAtProportional;
                        }
                        MoveKind::General => unreachable!("not an RB candidate"),
                    }
                }
            }
            StabilityRule::RbPa | StabilityRule::GbPa => {
                let v = is_stable_with_mode(spec, &cfg, rule, mode)?;
                if let Some(w) = v.witness {
                    payoff_dependent = w.move_kind != MoveKind::Merger;
                    verdict = ScanVerdict::Blocked;
                    witness = Some(w);
                } else {
                    verdict = ScanVerdict::StableAtProportional;
                    payoff_dependent = true;
                }
            }
        }

        rows.push(ScanRow {
            partition: p,
            verdict,
            witness,
            payoff_dependent,
        });
    }
    Ok(rows)
}

/// Decides whether any payoff vector makes the grand coalition stable under
/// RB-IA, and constructs one when it exists.
///
/// Without a dominant agent (largest holding strictly more than half the
/// servers) no such payoff exists and `None` is returned. With one, agent 0
/// is paid the largest pessimal value over all split candidates that pass
/// the first-stage check — every such candidate must contain the dominant
/// agent — plus a finite margin; the remainder is spread equally. The
/// construction is re-verified by a full candidate scan before returning.
pub fn gc_analysis(spec: &SystemSpec) -> Result<Option<PayoffVector>> {
    let n = spec.n_agents();
    let lambda = spec.total_rate();
    let n_total = spec.total_servers();
    let dominant = spec.servers_of(0);
    if 2 * dominant <= n_total {
        return Ok(None);
    }
    if n == 1 {
        // a single agent: the grand coalition is trivially stable
        return Ok(Some(PayoffVector::new(vec![lambda])?));
    }

    // Split candidates from the grand coalition that pass the first-stage
    // check; with a dominant agent each must contain agent 0.
    let mut needed = f64::NEG_INFINITY;
    for q in spec.all_agents().proper_nonempty_subsets() {
        let estimate = lambda * f64::from(spec.coalition_servers(q)) / f64::from(n_total);
        let pessimal = pessimal_rate(spec, q, PessimalMode::Fast)?;
        if strictly_exceeds(pessimal, estimate) {
            debug_assert!(q.contains(0), "stage-one passer without the dominant agent");
            needed = needed.max(pessimal);
        }
    }
    if needed == f64::NEG_INFINITY {
        // nothing can even pass stage one; any consistent payoff works
        return Ok(Some(proportional_payoff(
            spec,
            &Partition::grand_coalition(n),
        )?));
    }

    let phi_dominant = needed + gc_margin(lambda);
    let remainder = lambda - phi_dominant;
    if remainder < 0.0 {
        return Err(Error::WitnessVerification);
    }
    let mut values = vec![remainder / (n as f64 - 1.0); n];
    values[0] = phi_dominant;

    let payoff = PayoffVector::new(values)?;
    let cfg = Configuration::new(spec, Partition::grand_coalition(n), payoff.clone())?;
    let verdict = is_stable(spec, &cfg, StabilityRule::RbIa)?;
    if !verdict.stable {
        return Err(Error::WitnessVerification);
    }
    Ok(Some(payoff))
}

/// Sup-norm radius around a payoff vector within which every consistent
/// payoff stays unblocked under RB-PA.
///
/// Only split candidates enter the minimum: a perturbation that keeps the
/// payoff consistent with the partition cannot change any block's total, so
/// merger comparisons are invariant (they are checked once, up front). Each
/// split constraint degrades by at most |Q| times the sup-norm move, hence
/// `r = min_Q (Σ_{i∈Q} φ_i − pessimal(Q)) / |Q|`. Returns infinity when no
/// block can split.
pub fn rb_pa_stability_radius(
    spec: &SystemSpec,
    p: &Partition,
    phi: &PayoffVector,
) -> Result<f64> {
    let cfg = Configuration::new(spec, p.clone(), phi.clone())?;
    let mut radius = f64::INFINITY;
    for (q, kind) in candidate_moves(p, StabilityRule::RbPa) {
        let pessimal = pessimal_rate(spec, q, PessimalMode::Fast)?;
        let worth = cfg.payoff().coalition_total(q);
        let slack = worth - pessimal;
        if strictly_exceeds(pessimal, worth) {
            return Err(Error::NotStable(format!(
                "{q} already blocks: pessimal {pessimal} exceeds payoff total {worth}"
            )));
        }
        if kind == MoveKind::Split {
            radius = radius.min((slack / q.len() as f64).max(0.0));
        }
    }
    Ok(radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn set(ix: &[usize]) -> CoalitionSet {
        CoalitionSet::from_indices(ix)
    }

    fn figure_spec(lambda: f64) -> SystemSpec {
        SystemSpec::new(&[9, 7, 6, 5, 3], lambda, 1.0).unwrap()
    }

    fn proportional_cfg(spec: &SystemSpec, p: &Partition) -> Configuration {
        let phi = proportional_payoff(spec, p).unwrap();
        Configuration::new(spec, p.clone(), phi).unwrap()
    }

    /// A random payoff consistent with the partition: each block's value is
    /// split by normalized exponentials.
    fn random_consistent_payoff(
        spec: &SystemSpec,
        p: &Partition,
        rng: &mut ChaCha8Rng,
    ) -> PayoffVector {
        let we = wardrop_split(spec, p).unwrap();
        let mut values = vec![0.0; spec.n_agents()];
        for (block, &rate) in p.blocks().iter().zip(we.rates()) {
            let members: Vec<usize> = block.members().collect();
            let weights: Vec<f64> = members.iter().map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = weights.iter().sum();
            for (m, w) in members.iter().zip(&weights) {
                values[*m] = rate * w / total;
            }
        }
        PayoffVector::new(values).unwrap()
    }

    #[test]
    fn pessimal_of_everyone_is_the_whole_market() {
        let spec = figure_spec(15.0);
        let r = pessimal_rate(&spec, spec.all_agents(), PessimalMode::Fast).unwrap();
        assert_eq!(r, 15.0);
    }

    #[test]
    fn majority_coalitions_beat_their_server_share() {
        let spec = figure_spec(15.0);
        for bits in 1u32..31 {
            let q = CoalitionSet::from_bits(bits);
            let nq = spec.coalition_servers(q);
            if 2 * nq <= 30 || nq == 30 {
                continue;
            }
            let r = pessimal_rate(&spec, q, PessimalMode::Fast).unwrap();
            assert!(r > 15.0 * f64::from(nq) / 30.0, "{q}");
        }
    }

    #[test]
    fn fast_pessimal_matches_oracle() {
        for lambda in [0.3, 15.0, 300.0] {
            let spec = figure_spec(lambda);
            for bits in 1u32..32 {
                let q = CoalitionSet::from_bits(bits);
                let fast = pessimal_rate(&spec, q, PessimalMode::Fast).unwrap();
                let oracle = pessimal_rate(&spec, q, PessimalMode::Oracle).unwrap();
                assert!(
                    (fast - oracle).abs() <= 1e-9,
                    "Λ={lambda} {q}: fast {fast} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn oracle_guard_on_large_complements() {
        let spec = SystemSpec::new(&[1; 12], 3.0, 1.0).unwrap();
        let err = pessimal_rate(&spec, set(&[0]), PessimalMode::Oracle).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { .. }));
    }

    #[test]
    fn proportional_payoff_shapes() {
        let spec = figure_spec(15.0);
        // grand coalition: φ_i = (N_i/N)·Λ
        let gc = Partition::grand_coalition(5);
        let phi = proportional_payoff(&spec, &gc).unwrap();
        for (i, &n_i) in spec.server_counts().iter().enumerate() {
            assert!((phi.get(i) - 15.0 * f64::from(n_i) / 30.0).abs() < 1e-12);
        }
        // singleton blocks keep their whole value
        let singles = Partition::singletons(5);
        let we = wardrop_split(&spec, &singles).unwrap();
        let phi = proportional_payoff(&spec, &singles).unwrap();
        for i in 0..5 {
            assert_eq!(phi.get(i), we.rates()[i]);
        }
        // within a block, shares scale exactly with servers
        let p = Partition::new(5, vec![set(&[0, 1]), set(&[2, 3, 4])]).unwrap();
        let phi = proportional_payoff(&spec, &p).unwrap();
        assert!((phi.get(0) / phi.get(1) - 9.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_counts() {
        let gc = Partition::grand_coalition(5);
        let moves = candidate_moves(&gc, StabilityRule::RbIa);
        assert_eq!(moves.len(), (1 << 5) - 2); // splits only
        assert!(moves.iter().all(|(_, k)| *k == MoveKind::Split));

        let singles = Partition::singletons(5);
        let moves = candidate_moves(&singles, StabilityRule::RbIa);
        assert_eq!(moves.len(), (1 << 5) - 5 - 1); // mergers only
        assert!(moves.iter().all(|(_, k)| *k == MoveKind::Merger));

        let duo = Partition::new(5, vec![set(&[0, 1]), set(&[2, 3, 4])]).unwrap();
        let moves = candidate_moves(&duo, StabilityRule::GbPa);
        assert_eq!(moves.len(), (1 << 5) - 1 - 2);
    }

    #[test]
    fn merging_all_but_one_blocks_multi_partitions() {
        let spec = figure_spec(15.0);
        let p = Partition::new(5, vec![set(&[0, 1]), set(&[2, 3]), set(&[4])]).unwrap();
        let cfg = proportional_cfg(&spec, &p);
        let q = set(&[0, 1, 2, 3]); // all blocks but {4}
        let w = blocks_config(&spec, &cfg, q, MoveKind::Merger, StabilityRule::RbIa)
            .unwrap()
            .expect("merger of all but one must block");
        assert!(w.anticipated_value > w.prevailing_worth);
    }

    #[test]
    fn kstar_duopoly_resists_splits_under_rbia() {
        let spec = figure_spec(15.0);
        let ks = k_star(&spec).unwrap();
        let c = c_star(&spec)
            .unwrap()
            .into_iter()
            .find(|c| c.len() < 5)
            .expect("a maximizing coalition exists");
        let p = Partition::new(5, vec![c, spec.all_agents().minus(c)]).unwrap();
        let cfg = proportional_cfg(&spec, &p);
        for q in c.proper_nonempty_subsets() {
            let w = blocks_config(&spec, &cfg, q, MoveKind::Split, StabilityRule::RbIa).unwrap();
            assert!(w.is_none(), "split {q} of a Ψ-maximizing block {c}");
        }
        assert!(ks.maximizers.contains(&spec.coalition_servers(c)));
    }

    #[test]
    fn equal_halves_with_proportional_payoff_resist_rbpa() {
        let spec = figure_spec(15.0);
        let c = set(&[0, 2]); // 9 + 6 = 15 = N/2
        let p = Partition::new(5, vec![c, spec.all_agents().minus(c)]).unwrap();
        let cfg = proportional_cfg(&spec, &p);
        for (q, kind) in candidate_moves(&p, StabilityRule::RbPa) {
            let w = blocks_config(&spec, &cfg, q, kind, StabilityRule::RbPa).unwrap();
            assert!(w.is_none(), "{q} blocks the even split");
        }
    }

    #[test]
    fn three_plus_partitions_never_stable_under_rbia() {
        let spec = figure_spec(15.0);
        for p in enumerate_partitions(5).unwrap() {
            if p.size() < 3 {
                continue;
            }
            let cfg = proportional_cfg(&spec, &p);
            let v = is_stable(&spec, &cfg, StabilityRule::RbIa).unwrap();
            assert!(!v.stable, "{p} should be blocked");
        }
    }

    #[test]
    fn grand_coalition_never_stable_under_rbpa() {
        let spec = figure_spec(15.0);
        let gc = Partition::grand_coalition(5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let phi = random_consistent_payoff(&spec, &gc, &mut rng);
            let cfg = Configuration::new(&spec, gc.clone(), phi).unwrap();
            let v = is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap();
            assert!(!v.stable);
        }
    }

    #[test]
    fn kstar_duopoly_stable_under_rbia_any_payoff() {
        let spec = figure_spec(15.0);
        let c = c_star(&spec)
            .unwrap()
            .into_iter()
            .find(|c| c.len() < 5)
            .unwrap();
        let p = Partition::new(5, vec![c, spec.all_agents().minus(c)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let phi = random_consistent_payoff(&spec, &p, &mut rng);
            let cfg = Configuration::new(&spec, p.clone(), phi).unwrap();
            let v = is_stable(&spec, &cfg, StabilityRule::RbIa).unwrap();
            assert!(v.stable, "payoff changed an RB-IA partition verdict");
        }
    }

    #[test]
    fn kstar_anchors_across_regimes() {
        // heavy traffic: everyone but the smallest agent
        let ks = k_star(&figure_spec(300.0)).unwrap();
        assert_eq!(ks.maximizers.iter().copied().collect::<Vec<_>>(), vec![27]);

        // moderate-light load: still far from the asymptotic regime; the
        // exact maximizer is 19 here (brute-force high-precision check:
        // Ψ(19) = 0.014984, Ψ(16) = 0.012238)
        let ks = k_star(&figure_spec(0.3)).unwrap();
        assert_eq!(ks.maximizers.iter().copied().collect::<Vec<_>>(), vec![19]);
        assert!(ks.achievable_ks.contains(&16) && !ks.achievable_ks.contains(&15));

        // genuinely light traffic: the least achievable majority size wins
        let ks = k_star(&figure_spec(1e-9)).unwrap();
        assert_eq!(ks.maximizers.iter().copied().collect::<Vec<_>>(), vec![16]);
    }

    #[test]
    fn kstar_symmetric_duopoly_reports_the_tie() {
        let spec = SystemSpec::new(&[5, 5], 4.0, 1.0).unwrap();
        let ks = k_star(&spec).unwrap();
        assert!(ks.achievable_ks.is_empty());
        let half = ks.half_split.expect("even split is achievable");
        assert_eq!(half.k, 5);
        assert!((half.psi - 4.0 / 10.0).abs() < 1e-12);
        assert_eq!(ks.maximizers.iter().copied().collect::<Vec<_>>(), vec![5]);
    }

    #[test]
    fn kstar_invariant_under_joint_rate_rescaling() {
        for c in [0.5, 2.0] {
            let base = figure_spec(15.0);
            let scaled = SystemSpec::new(&[9, 7, 6, 5, 3], 15.0 * c, c).unwrap();
            assert_eq!(
                k_star(&base).unwrap().maximizers,
                k_star(&scaled).unwrap().maximizers
            );
        }
    }

    #[test]
    fn merger_blocking_ignores_the_payoff() {
        let spec = figure_spec(15.0);
        let p = Partition::new(5, vec![set(&[0]), set(&[1, 2]), set(&[3, 4])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = set(&[1, 2, 3, 4]);
        let baseline = {
            let cfg = proportional_cfg(&spec, &p);
            blocks_config(&spec, &cfg, q, MoveKind::Merger, StabilityRule::RbIa)
                .unwrap()
                .is_some()
        };
        for _ in 0..10 {
            let phi = random_consistent_payoff(&spec, &p, &mut rng);
            let cfg = Configuration::new(&spec, p.clone(), phi).unwrap();
            let again = blocks_config(&spec, &cfg, q, MoveKind::Merger, StabilityRule::RbIa)
                .unwrap()
                .is_some();
            assert_eq!(baseline, again);
        }
    }

    #[test]
    fn scan_agrees_with_the_subset_criterion() {
        // A 2-partition is stable for every payoff exactly when neither
        // block has a subset whose pessimal per-server value beats the
        // block's own per-server rate; everything else is blocked or
        // payoff-dependent. Recompute that criterion directly from the Ψ
        // table and compare with the scan.
        let spec = figure_spec(15.0);
        let lambda = spec.total_rate();
        let rows = stable_set_scan(&spec, StabilityRule::RbIa).unwrap();
        for row in &rows {
            let p = &row.partition;
            if p.size() != 2 {
                assert_eq!(row.verdict, ScanVerdict::Blocked, "{p}");
                continue;
            }
            let we = wardrop_split(&spec, p).unwrap();
            let mut has_stage_one = false;
            for (block, &rate) in p.blocks().iter().zip(we.rates()) {
                let per_server = rate / f64::from(spec.coalition_servers(*block));
                for s in block.proper_nonempty_subsets() {
                    let pess = pessimal_rate(&spec, s, PessimalMode::Fast).unwrap();
                    let per_server_s = pess / f64::from(spec.coalition_servers(s));
                    if !crate::strictly_exceeds(per_server, per_server_s) {
                        has_stage_one = true;
                    }
                }
            }
            if has_stage_one {
                assert_ne!(row.verdict, ScanVerdict::StableAllPayoffs, "{p}");
                assert!(row.payoff_dependent, "{p}");
            } else {
                assert_eq!(row.verdict, ScanVerdict::StableAllPayoffs, "{p}");
            }
        }

        // Spot checks. The maximizer side (23 servers) is stable; so is the
        // 24-server side, which exceeds k* but contains no subset able to
        // out-utilize it; a partition of three or more blocks is not.
        let by_partition = |blocks: &[CoalitionSet]| {
            let target = Partition::new(5, blocks.to_vec()).unwrap();
            rows.iter().find(|r| r.partition == target).unwrap().verdict
        };
        assert_eq!(
            by_partition(&[set(&[0, 2, 3, 4]), set(&[1])]),
            ScanVerdict::StableAllPayoffs
        );
        assert_eq!(
            by_partition(&[set(&[0, 1, 3, 4]), set(&[2])]),
            ScanVerdict::StableAllPayoffs
        );
        assert_eq!(
            by_partition(&[set(&[0]), set(&[1]), set(&[2]), set(&[3]), set(&[4])]),
            ScanVerdict::Blocked
        );
    }

    #[test]
    fn rbpa_blocked_implies_gbpa_blocked() {
        let spec = figure_spec(15.0);
        let rb: Vec<ScanRow> = stable_set_scan(&spec, StabilityRule::RbPa).unwrap();
        let gb: Vec<ScanRow> = stable_set_scan(&spec, StabilityRule::GbPa).unwrap();
        for (r, g) in rb.iter().zip(&gb) {
            assert_eq!(r.partition, g.partition);
            if r.verdict == ScanVerdict::Blocked {
                assert_eq!(g.verdict, ScanVerdict::Blocked, "{}", r.partition);
            }
            if g.verdict != ScanVerdict::Blocked {
                assert_ne!(r.verdict, ScanVerdict::Blocked, "{}", r.partition);
            }
        }
    }

    #[test]
    fn gc_analysis_dichotomy() {
        // no dominant agent: no stabilizing payoff exists
        let spec = figure_spec(15.0);
        assert!(gc_analysis(&spec).unwrap().is_none());

        // dominant agent: a verified witness comes back
        let spec = SystemSpec::new(&[20, 3, 2], 10.0, 1.0).unwrap();
        let phi = gc_analysis(&spec).unwrap().expect("dominant agent case");
        let cfg = Configuration::new(&spec, Partition::grand_coalition(3), phi.clone()).unwrap();
        assert!(is_stable(&spec, &cfg, StabilityRule::RbIa).unwrap().stable);
        // the same payoff cannot survive perfect anticipation
        assert!(!is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap().stable);
    }

    #[test]
    fn radius_positive_on_stable_duopolies_and_zero_on_the_boundary() {
        let spec = figure_spec(15.0);
        let c = set(&[0, 2]); // equal halves
        let p = Partition::new(5, vec![c, spec.all_agents().minus(c)]).unwrap();
        let phi = proportional_payoff(&spec, &p).unwrap();
        let r = rb_pa_stability_radius(&spec, &p, &phi).unwrap();
        assert!(r > 0.0, "slack expected, got {r}");

        // transfer r/2 within a block: still stable
        let mut values = phi.values().to_vec();
        values[0] += r / 2.0;
        values[2] -= r / 2.0;
        let moved = PayoffVector::new(values).unwrap();
        let cfg = Configuration::new(&spec, p.clone(), moved.clone()).unwrap();
        assert!(is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap().stable);
        assert!(rb_pa_stability_radius(&spec, &p, &moved).unwrap() >= 0.0);

        // push one split constraint onto its boundary: radius collapses to 0
        let q = set(&[0]); // subset of block {0,2}
        let pess = pessimal_rate(&spec, q, PessimalMode::Fast).unwrap();
        let we = wardrop_split(&spec, &p).unwrap();
        let block_ix = p.blocks().iter().position(|b| *b == c).unwrap();
        let rate = we.rates()[block_ix];
        let boundary =
            PayoffVector::new(vec![pess, phi.get(1), rate - pess, phi.get(3), phi.get(4)]).unwrap();
        let r0 = rb_pa_stability_radius(&spec, &p, &boundary).unwrap();
        assert!(r0.abs() <= 1e-9, "boundary radius {r0}");
    }

    #[test]
    fn radius_rejects_blocked_configurations() {
        let spec = figure_spec(15.0);
        let gc = Partition::grand_coalition(5);
        let phi = proportional_payoff(&spec, &gc).unwrap();
        let err = rb_pa_stability_radius(&spec, &gc, &phi).unwrap_err();
        assert!(matches!(err, Error::NotStable(_)));
    }
}
