//! Domain types shared by every analysis: system descriptions, coalitions as
//! bitsets, partitions with a canonical order, payoff vectors, and the
//! verdict/witness types emitted by the stability layer.
//!
//! Agents are identified by index after a canonicalizing sort that puts
//! server counts in non-increasing order; the original index order is kept on
//! the [`SystemSpec`] so front ends can report user labels. All types are
//! immutable after construction and safe to share across threads.

use crate::{Error, Result};

/// Hard cap on the number of agents for whole-space enumeration. Bell(12) is
/// ~4.2 million partitions; beyond that the scans stop being interactive.
pub const MAX_ENUM_AGENTS: usize = 12;

/// System description: per-agent server counts, total market arrival rate Λ,
/// and per-server service rate μ.
///
/// Server counts are stored in non-increasing order. The constructor records
/// the mapping back to the caller's ordering so that reports can use the
/// original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    server_counts: Vec<u32>,
    total_rate: f64,
    service_rate: f64,
    /// canonical index -> index in the caller-supplied order
    to_original: Vec<usize>,
}

impl SystemSpec {
    /// Validates and canonicalizes a system description.
    ///
    /// Every count must be at least 1, the list non-empty, and both rates
    /// strictly positive and finite.
    pub fn new(server_counts: &[u32], total_rate: f64, service_rate: f64) -> Result<Self> {
        if server_counts.is_empty() {
            return Err(Error::Domain("at least one agent is required".into()));
        }
        if server_counts.len() > 8 * std::mem::size_of::<u32>() {
            return Err(Error::SizeLimit {
                what: "SystemSpec",
                n: server_counts.len(),
                max: 32,
            });
        }
        if server_counts.iter().any(|&c| c == 0) {
            return Err(Error::Domain("every agent needs at least one server".into()));
        }
        if !(total_rate.is_finite() && total_rate > 0.0) {
            return Err(Error::Domain(format!(
                "total arrival rate must be positive and finite, got {total_rate}"
            )));
        }
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(Error::Domain(format!(
                "service rate must be positive and finite, got {service_rate}"
            )));
        }

        let mut order: Vec<usize> = (0..server_counts.len()).collect();
        // Stable sort: ties keep the caller's relative order.
        order.sort_by_key(|&i| std::cmp::Reverse(server_counts[i]));
        let sorted = order.iter().map(|&i| server_counts[i]).collect();

        Ok(SystemSpec {
            server_counts: sorted,
            total_rate,
            service_rate,
            to_original: order,
        })
    }

    /// Number of agents.
    pub fn n_agents(&self) -> usize {
        self.server_counts.len()
    }

    /// Canonically sorted (non-increasing) server counts.
    pub fn server_counts(&self) -> &[u32] {
        &self.server_counts
    }

    /// Servers owned by one agent (canonical index).
    pub fn servers_of(&self, agent: usize) -> u32 {
        self.server_counts[agent]
    }

    /// Total server count N.
    pub fn total_servers(&self) -> u32 {
        self.server_counts.iter().sum()
    }

    /// Total market arrival rate Λ.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Per-server service rate μ.
    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    /// Copy of this system with a different total arrival rate.
    pub fn with_total_rate(&self, total_rate: f64) -> Result<Self> {
        if !(total_rate.is_finite() && total_rate > 0.0) {
            return Err(Error::Domain(format!(
                "total arrival rate must be positive and finite, got {total_rate}"
            )));
        }
        let mut out = self.clone();
        out.total_rate = total_rate;
        Ok(out)
    }

    /// Pooled server count N_C of a coalition. Recomputed on demand, never
    /// stored, so it can't go stale.
    pub fn coalition_servers(&self, c: CoalitionSet) -> u32 {
        c.members().map(|i| self.server_counts[i]).sum()
    }

    /// Maps a canonical agent index back to the caller-supplied position.
    pub fn original_index(&self, canonical: usize) -> usize {
        self.to_original[canonical]
    }

    /// Maps a caller-supplied position to the canonical agent index.
    pub fn canonical_index(&self, original: usize) -> Option<usize> {
        self.to_original.iter().position(|&o| o == original)
    }

    /// The coalition of all agents.
    pub fn all_agents(&self) -> CoalitionSet {
        CoalitionSet::full(self.n_agents())
    }
}

/// A subset of agents encoded as a bitset over canonical indices `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoalitionSet(u32);

impl CoalitionSet {
    /// The empty set. Not a valid coalition, but useful as a builder seed.
    pub const EMPTY: CoalitionSet = CoalitionSet(0);

    /// Coalition from explicit agent indices.
    pub fn from_indices(indices: &[usize]) -> Self {
        let mut bits = 0u32;
        for &i in indices {
            bits |= 1 << i;
        }
        CoalitionSet(bits)
    }

    /// Coalition from a raw bitmask.
    pub fn from_bits(bits: u32) -> Self {
        CoalitionSet(bits)
    }

    /// All agents `0..n`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= 32);
        if n == 32 {
            CoalitionSet(u32::MAX)
        } else {
            CoalitionSet((1u32 << n) - 1)
        }
    }

    /// Raw bitmask.
    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Number of member agents |C|.
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, agent: usize) -> bool {
        self.0 & (1 << agent) != 0
    }

    pub fn insert(self, agent: usize) -> Self {
        CoalitionSet(self.0 | (1 << agent))
    }

    pub fn union(self, other: CoalitionSet) -> Self {
        CoalitionSet(self.0 | other.0)
    }

    pub fn intersection(self, other: CoalitionSet) -> Self {
        CoalitionSet(self.0 & other.0)
    }

    /// Set difference `self \ other`.
    pub fn minus(self, other: CoalitionSet) -> Self {
        CoalitionSet(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: CoalitionSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Member indices in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32usize).filter(move |i| bits & (1 << i) != 0)
    }

    /// Smallest member index, if any.
    pub fn min_member(self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0.trailing_zeros() as usize)
        }
    }

    /// Proper non-empty subsets, in ascending bitmask order.
    pub fn proper_nonempty_subsets(self) -> impl Iterator<Item = CoalitionSet> {
        let full = self.0;
        // Enumerate submasks by counting through the compressed index space.
        let n_sub = 1u64 << self.len();
        (1..n_sub.saturating_sub(1)).map(move |idx| {
            let mut bits = 0u32;
            let mut rest = full;
            let mut sel = idx;
            while rest != 0 {
                let low = rest & rest.wrapping_neg();
                if sel & 1 == 1 {
                    bits |= low;
                }
                rest ^= low;
                sel >>= 1;
            }
            CoalitionSet(bits)
        })
    }
}

impl std::fmt::Display for CoalitionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (pos, m) in self.members().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// An exhaustive, disjoint list of coalitions covering all agents.
///
/// Blocks are kept sorted by smallest member index, which gives every
/// partition a unique representation and a stable restricted-growth-string
/// key for hashing and memoization.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    blocks: Vec<CoalitionSet>,
    n_agents: usize,
}

impl Partition {
    /// Builds a partition of `{0..n_agents-1}`, validating disjointness and
    /// coverage and canonicalizing the block order.
    pub fn new(n_agents: usize, blocks: Vec<CoalitionSet>) -> Result<Self> {
        let mut seen = CoalitionSet::EMPTY;
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::Domain("empty block in partition".into()));
            }
            let overlap = seen.intersection(*b);
            if let Some(agent) = overlap.min_member() {
                return Err(Error::Overlap { agent });
            }
            seen = seen.union(*b);
        }
        let full = CoalitionSet::full(n_agents);
        let missing = full.minus(seen);
        if let Some(agent) = missing.min_member() {
            return Err(Error::Coverage { agent });
        }
        if let Some(agent) = seen.minus(full).min_member() {
            return Err(Error::Domain(format!(
                "block member {agent} is outside the agent range 0..{n_agents}"
            )));
        }
        let mut blocks = blocks;
        blocks.sort_by_key(|b| b.min_member());
        Ok(Partition { blocks, n_agents })
    }

    /// The all-singletons partition.
    pub fn singletons(n_agents: usize) -> Self {
        let blocks = (0..n_agents)
            .map(|i| CoalitionSet::from_indices(&[i]))
            .collect();
        Partition { blocks, n_agents }
    }

    /// The single-block partition containing every agent.
    pub fn grand_coalition(n_agents: usize) -> Self {
        Partition {
            blocks: vec![CoalitionSet::full(n_agents)],
            n_agents,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Blocks in canonical order.
    pub fn blocks(&self) -> &[CoalitionSet] {
        &self.blocks
    }

    /// Partition size |P| (number of coalitions).
    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    /// Index of the block containing `agent`.
    pub fn block_index_of(&self, agent: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(agent))
    }

    /// Whether `c` is one of the blocks.
    pub fn contains_block(&self, c: CoalitionSet) -> bool {
        self.blocks.contains(&c)
    }

    /// Restricted growth string: agent `i` maps to the label of its block,
    /// labels assigned by first appearance. Unique per partition, so it
    /// doubles as a hash key. Labels use `0-9a-z` (enough for the agent cap).
    pub fn rgs_string(&self) -> String {
        let mut labels = vec![usize::MAX; self.n_agents];
        let mut next = 0usize;
        for agent in 0..self.n_agents {
            if labels[agent] == usize::MAX {
                let bi = self.block_index_of(agent).expect("partition covers agents");
                for m in self.blocks[bi].members() {
                    labels[m] = next;
                }
                next += 1;
            }
        }
        labels
            .iter()
            .map(|&l| std::char::from_digit(l as u32, 36).expect("label fits base-36"))
            .collect()
    }

    /// New partition with the blocks inside `merged` fused into one.
    ///
    /// `merged` must be a union of existing blocks.
    pub fn merge_union(&self, merged: CoalitionSet) -> Result<Partition> {
        let mut covered = CoalitionSet::EMPTY;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            if b.is_subset_of(merged) {
                covered = covered.union(*b);
            } else if b.intersection(merged).is_empty() {
                blocks.push(*b);
            } else {
                return Err(Error::Domain(format!(
                    "{merged} is not a union of existing blocks"
                )));
            }
        }
        if covered != merged {
            return Err(Error::Domain(format!(
                "{merged} is not a union of existing blocks"
            )));
        }
        blocks.push(merged);
        Partition::new(self.n_agents, blocks)
    }

    /// New partition with block `host ⊇ q` split into `q` and `host \ q`.
    pub fn split_block(&self, q: CoalitionSet) -> Result<Partition> {
        let host = self
            .blocks
            .iter()
            .find(|b| q.is_subset_of(**b))
            .copied()
            .ok_or_else(|| Error::Domain(format!("{q} is not inside any block")))?;
        if q.is_empty() || q == host {
            return Err(Error::Domain(format!(
                "{q} is not a proper non-empty subset of its block"
            )));
        }
        let mut blocks: Vec<CoalitionSet> =
            self.blocks.iter().filter(|b| **b != host).copied().collect();
        blocks.push(q);
        blocks.push(host.minus(q));
        Partition::new(self.n_agents, blocks)
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            for (pos, m) in b.members().enumerate() {
                if pos > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{m}")?;
            }
        }
        Ok(())
    }
}

/// Checks that `p` partitions exactly the agents of `spec`.
///
/// `Partition::new` already guarantees disjointness and coverage for its own
/// agent count; this entry point additionally pins that count to the spec.
pub fn validate_partition(spec: &SystemSpec, p: &Partition) -> Result<()> {
    if p.n_agents() != spec.n_agents() {
        return Err(Error::Domain(format!(
            "partition is over {} agents, spec has {}",
            p.n_agents(),
            spec.n_agents()
        )));
    }
    // Re-validate in case the partition was produced by unchecked means.
    Partition::new(p.n_agents(), p.blocks().to_vec()).map(|_| ())
}

/// Iterator over all set partitions of `{0..n-1}` in restricted-growth-string
/// order.
pub struct PartitionIter {
    rgs: Vec<u8>,
    n: usize,
    started: bool,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        if self.started {
            // Advance to the next restricted growth string: find the
            // rightmost position (>= 1) that can be incremented, i.e. whose
            // value is at most the max of the prefix; reset the suffix.
            let mut i = self.n;
            loop {
                if i <= 1 {
                    self.done = true;
                    return None;
                }
                i -= 1;
                let prefix_max = *self.rgs[..i].iter().max().expect("non-empty prefix");
                if self.rgs[i] <= prefix_max {
                    self.rgs[i] += 1;
                    for j in i + 1..self.n {
                        self.rgs[j] = 0;
                    }
                    break;
                }
            }
        }
        self.started = true;

        let n_blocks = usize::from(*self.rgs.iter().max().expect("non-empty rgs")) + 1;
        let mut blocks = vec![CoalitionSet::EMPTY; n_blocks];
        for (agent, &label) in self.rgs.iter().enumerate() {
            blocks[usize::from(label)] = blocks[usize::from(label)].insert(agent);
        }
        Some(Partition {
            blocks,
            n_agents: self.n,
        })
    }
}

/// Streams every set partition of `{0..n-1}` exactly once.
///
/// Guarded at [`MAX_ENUM_AGENTS`] agents; the count of yielded partitions is
/// the Bell number B(n).
pub fn enumerate_partitions(n: usize) -> Result<PartitionIter> {
    if n == 0 {
        return Err(Error::Domain("cannot partition zero agents".into()));
    }
    if n > MAX_ENUM_AGENTS {
        return Err(Error::SizeLimit {
            what: "partition enumeration",
            n,
            max: MAX_ENUM_AGENTS,
        });
    }
    Ok(PartitionIter {
        rgs: vec![0; n],
        n,
        started: false,
        done: false,
    })
}

/// Streams every partition of `{0..n-1}` that has `q` as one of its blocks.
///
/// Equivalent to partitioning the complement of `q` and adjoining `q`.
pub fn enumerate_partitions_containing(
    n: usize,
    q: CoalitionSet,
) -> Result<impl Iterator<Item = Partition>> {
    if q.is_empty() {
        return Err(Error::Domain("a coalition must be non-empty".into()));
    }
    if !q.is_subset_of(CoalitionSet::full(n)) {
        return Err(Error::Domain(format!("{q} is not within 0..{n}")));
    }
    let complement: Vec<usize> = CoalitionSet::full(n).minus(q).members().collect();
    let m = complement.len();
    if m > MAX_ENUM_AGENTS {
        return Err(Error::SizeLimit {
            what: "partition enumeration",
            n: m,
            max: MAX_ENUM_AGENTS,
        });
    }

    // Partition the complement as a virtual 0..m index set, then translate
    // back to real agent indices and adjoin q.
    let iter: Box<dyn Iterator<Item = Partition>> = if m == 0 {
        Box::new(std::iter::once(Partition {
            blocks: vec![q],
            n_agents: n,
        }))
    } else {
        Box::new(enumerate_partitions(m)?.map(move |sub| {
            let mut blocks: Vec<CoalitionSet> = sub
                .blocks()
                .iter()
                .map(|b| {
                    let mut real = CoalitionSet::EMPTY;
                    for v in b.members() {
                        real = real.insert(complement[v]);
                    }
                    real
                })
                .collect();
            blocks.push(q);
            Partition::new(n, blocks).expect("translated blocks partition the agents")
        }))
    };
    Ok(iter)
}

/// Per-agent payoff vector Φ. Entries are non-negative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffVector {
    values: Vec<f64>,
}

impl PayoffVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(
                "payoffs must be finite and non-negative".into(),
            ));
        }
        Ok(PayoffVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, agent: usize) -> f64 {
        self.values[agent]
    }

    /// Total payoff of a coalition, Σ_{i∈C} φ_i.
    pub fn coalition_total(&self, c: CoalitionSet) -> f64 {
        c.members().map(|i| self.values[i]).sum()
    }

    /// Checks Σ_{i∈C} φ_i = λ_C for every block, within [`crate::tol_feas`].
    pub fn verify_consistent(
        &self,
        spec: &SystemSpec,
        partition: &Partition,
        rates: &WardropResult,
    ) -> Result<()> {
        if self.values.len() != spec.n_agents() {
            return Err(Error::Domain(format!(
                "payoff vector has {} entries, spec has {} agents",
                self.values.len(),
                spec.n_agents()
            )));
        }
        let tol = crate::tol_feas(spec.total_rate());
        for (bi, block) in partition.blocks().iter().enumerate() {
            let total = self.coalition_total(*block);
            let rate = rates.rates()[bi];
            if (total - rate).abs() > tol {
                return Err(Error::Domain(format!(
                    "block {block} payoff sum {total} differs from its rate {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// Equilibrium split for one partition: per-block rates, the common blocking
/// probability, and the numerical residual |Σλ_C − Λ| actually achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct WardropResult {
    rates: Vec<f64>,
    common_blocking: f64,
    residual: f64,
}

impl WardropResult {
    pub(crate) fn new(rates: Vec<f64>, common_blocking: f64, residual: f64) -> Self {
        WardropResult {
            rates,
            common_blocking,
            residual,
        }
    }

    /// Per-block equilibrium rates λ_C, in the partition's block order.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// The common blocking probability B*.
    pub fn common_blocking(&self) -> f64 {
        self.common_blocking
    }

    /// Achieved |Σλ_C − Λ|.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// The three stability rules.
///
/// * `RbIa` — restricted blocking (mergers and splits of prevailing
///   coalitions) with an imprecise first-stage estimate of a splitter's
///   prevailing worth.
/// * `RbPa` — restricted blocking with perfect anticipation of prevailing
///   payoffs.
/// * `GbPa` — blocking by any coalition whatsoever, with perfect
///   anticipation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilityRule {
    RbIa,
    RbPa,
    GbPa,
}

impl StabilityRule {
    pub const ALL: [StabilityRule; 3] = [StabilityRule::RbIa, StabilityRule::RbPa, StabilityRule::GbPa];
}

impl std::fmt::Display for StabilityRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StabilityRule::RbIa => "rb-ia",
            StabilityRule::RbPa => "rb-pa",
            StabilityRule::GbPa => "gb-pa",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for StabilityRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rb-ia" | "rbia" | "rb_ia" => Ok(StabilityRule::RbIa),
            "rb-pa" | "rbpa" | "rb_pa" => Ok(StabilityRule::RbPa),
            "gb-pa" | "gbpa" | "gb_pa" => Ok(StabilityRule::GbPa),
            other => Err(Error::Domain(format!("unknown stability rule '{other}'"))),
        }
    }
}

/// How a candidate blocking coalition would come into being.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    /// Union of two or more prevailing coalitions.
    Merger,
    /// Proper non-empty subset of a single prevailing coalition.
    Split,
    /// Arbitrary coalition (general blocking only).
    General,
}

impl std::fmt::Display for MoveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MoveKind::Merger => "merger",
            MoveKind::Split => "split",
            MoveKind::General => "general",
        };
        f.write_str(s)
    }
}

/// Records which coalition blocks a configuration and why.
///
/// `anticipated_value` is the rate bound the blocker anticipates and
/// `prevailing_worth` the quantity it must strictly exceed; for an RB-IA
/// split these are the first-stage pair (pessimal rate vs the proportional
/// estimate of prevailing worth).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWitness {
    pub blocker: CoalitionSet,
    pub move_kind: MoveKind,
    pub anticipated_value: f64,
    pub prevailing_worth: f64,
}

/// A partition together with a payoff vector consistent with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    partition: Partition,
    payoff: PayoffVector,
}

impl Configuration {
    /// Validates the payoff against the partition's equilibrium rates under
    /// `spec` before accepting the pair.
    pub fn new(spec: &SystemSpec, partition: Partition, payoff: PayoffVector) -> Result<Self> {
        validate_partition(spec, &partition)?;
        let rates = crate::wardrop::wardrop_split(spec, &partition)?;
        payoff.verify_consistent(spec, &partition, &rates)?;
        Ok(Configuration { partition, payoff })
    }

    /// Assembles a configuration from parts already known to be consistent
    /// (for example a state recorded on a dynamics trace).
    pub(crate) fn from_parts(partition: Partition, payoff: PayoffVector) -> Self {
        Configuration { partition, payoff }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn payoff(&self) -> &PayoffVector {
        &self.payoff
    }
}
