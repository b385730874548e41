//! Discrete-event Monte-Carlo validation of the analytic layers.
//!
//! [`simulate_loss`] runs an M/M/N/N loss system arrival by arrival: Poisson
//! arrivals, exponential (or deterministic, for insensitivity checks)
//! service times, no queue. A job finding all servers busy is dropped. The
//! blocked fraction over arrivals estimates the blocking probability, with a
//! 95% half-width from batch means over 20 batches after a 10% warm-up.
//!
//! [`validate_we`] feeds each block of a partition its analytic equilibrium
//! rate as an independent Poisson stream and checks that the common blocking
//! probability lands inside each block's confidence interval.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{validate_partition, Partition, SystemSpec};
use crate::wardrop::wardrop_split;
use crate::{Error, Result};

/// Blocked-fraction estimate with a 95% confidence half-width (normal
/// approximation over batch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub blocked_fraction: f64,
    pub half_width_95: f64,
    pub arrivals_observed: u64,
}

/// Service-time law for the simulator. Blocking in a loss system is
/// insensitive to the law beyond its mean, which the deterministic variant
/// exists to demonstrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceLaw {
    Exponential,
    Deterministic,
}

const WARMUP_FRACTION: f64 = 0.10;
const BATCHES: usize = 20;
const Z_95: f64 = 1.959_963_984_540_054;

/// Minimum arrival horizon accepted by the simulator.
pub const MIN_HORIZON: u64 = 10_000;

/// Event-driven simulation of an M/M/N/N system with exponential
/// inter-arrivals of rate `arrival_rate` and mean service time
/// `1/service_rate`.
pub fn simulate_loss(
    servers: u32,
    arrival_rate: f64,
    service_rate: f64,
    horizon_arrivals: u64,
    seed: u64,
) -> Result<SimEstimate> {
    simulate_loss_with_law(
        servers,
        arrival_rate,
        service_rate,
        horizon_arrivals,
        seed,
        ServiceLaw::Exponential,
    )
}

/// [`simulate_loss`] with an explicit service-time law (same unit mean).
pub fn simulate_loss_with_law(
    servers: u32,
    arrival_rate: f64,
    service_rate: f64,
    horizon_arrivals: u64,
    seed: u64,
    law: ServiceLaw,
) -> Result<SimEstimate> {
    if servers == 0 {
        return Err(Error::Domain("the simulator needs at least one server".into()));
    }
    if !(arrival_rate > 0.0 && service_rate > 0.0) {
        return Err(Error::Domain("rates must be strictly positive".into()));
    }
    if horizon_arrivals < MIN_HORIZON {
        return Err(Error::Domain(format!(
            "horizon of {horizon_arrivals} arrivals is below the minimum {MIN_HORIZON}"
        )));
    }

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interarrival = Exp::new(arrival_rate)
        .map_err(|e| Error::Domain(format!("bad arrival rate: {e}")))?;
    let service = Exp::new(service_rate)
        .map_err(|e| Error::Domain(format!("bad service rate: {e}")))?;
    let mean_service = 1.0 / service_rate;

    // Completion times of busy servers; capacity never exceeds `servers`.
    let mut busy: Vec<f64> = Vec::with_capacity(servers as usize);
    let mut clock = 0.0_f64;

    let warmup = ((horizon_arrivals as f64) * WARMUP_FRACTION) as u64;
    let measured = horizon_arrivals - warmup;
    let batch_size = measured / BATCHES as u64;
    let observed = batch_size * BATCHES as u64;
    let mut batch_blocked = [0u64; BATCHES];

    for arrival in 0..(warmup + observed) {
        clock += interarrival.sample(&mut rng);
        busy.retain(|&done| done > clock);
        let blocked = busy.len() as u32 >= servers;
        if !blocked {
            let duration = match law {
                ServiceLaw::Exponential => service.sample(&mut rng),
                ServiceLaw::Deterministic => mean_service,
            };
            busy.push(clock + duration);
        }
        if blocked && arrival >= warmup {
            let b = ((arrival - warmup) / batch_size) as usize;
            batch_blocked[b.min(BATCHES - 1)] += 1;
        }
    }

    let fractions: Vec<f64> = batch_blocked
        .iter()
        .map(|&c| c as f64 / batch_size as f64)
        .collect();
    let mean = fractions.iter().sum::<f64>() / BATCHES as f64;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
    let half_width = Z_95 * (var / BATCHES as f64).sqrt();

    Ok(SimEstimate {
        blocked_fraction: mean,
        half_width_95: half_width,
        arrivals_observed: observed,
    })
}

/// Per-block comparison of simulated blocking against the analytic common
/// blocking probability.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub block: crate::model::CoalitionSet,
    pub servers: u32,
    pub analytic_rate: f64,
    pub target_blocking: f64,
    pub estimate: SimEstimate,
    /// Whether the target lies inside the 95% interval.
    pub covered: bool,
}

/// Simulates each block of `p` at its analytic equilibrium rate and checks
/// coverage of the common blocking probability.
pub fn validate_we(
    spec: &SystemSpec,
    p: &Partition,
    horizon_per_block: u64,
    seed: u64,
) -> Result<Vec<BlockReport>> {
    validate_partition(spec, p)?;
    let we = wardrop_split(spec, p)?;
    let target = we.common_blocking();

    let mut reports = Vec::with_capacity(p.size());
    for (i, (block, &rate)) in p.blocks().iter().zip(we.rates()).enumerate() {
        let servers = spec.coalition_servers(*block);
        let block_seed = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let estimate = simulate_loss(
            servers,
            rate,
            spec.service_rate(),
            horizon_per_block,
            block_seed,
        )?;
        let covered = (estimate.blocked_fraction - target).abs() <= estimate.half_width_95;
        reports.push(BlockReport {
            block: *block,
            servers,
            analytic_rate: rate,
            target_blocking: target,
            estimate,
            covered,
        });
    }
    Ok(reports)
}
