//! Acceptance suite: one test per criterion, each printing a PASS line (or
//! panicking with full diagnostics). Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use coalition_core::dynamics::{check_a1, run, Terminal, DEFAULT_MAX_STEPS};
use coalition_core::erlang::{erlang_b, OfferedLoad};
use coalition_core::mc::{simulate_loss, validate_we};
use coalition_core::stability::{
    blocks_config, c_star, gc_analysis, is_stable, k_star, proportional_payoff,
    rb_pa_stability_radius, pessimal_rate, PessimalMode,
};
use coalition_core::wardrop::{psi, wardrop_split};
use coalition_core::{
    CoalitionSet, Configuration, MoveKind, Partition, PayoffVector, StabilityRule, SystemSpec,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn figure_spec(lambda: f64) -> SystemSpec {
    SystemSpec::new(&[9, 7, 6, 5, 3], lambda, 1.0).unwrap()
}

fn second_spec(lambda: f64) -> SystemSpec {
    SystemSpec::new(&[10, 7, 6, 5, 4], lambda, 1.0).unwrap()
}

fn set(ix: &[usize]) -> CoalitionSet {
    CoalitionSet::from_indices(ix)
}

fn random_partition(n: usize, rng: &mut ChaCha8Rng) -> Partition {
    let all: Vec<Partition> = coalition_core::model::enumerate_partitions(n)
        .unwrap()
        .collect();
    all[rng.random_range(0..all.len())].clone()
}

/// Random payoff consistent with the partition: per-block normalized
/// exponential weights.
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
fn criterion_01_wardrop_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for case in 0..200 {
        let n = rng.random_range(2..=6usize);
        let counts: Vec<u32> = (0..n).map(|_| rng.random_range(1..=10)).collect();
        let total: u32 = counts.iter().sum();
        let lambda = f64::from(total) * 10f64.powf(rng.random_range(-1.0..1.0));
        let spec = SystemSpec::new(&counts, lambda, 1.0).unwrap();
        let p = random_partition(n, &mut rng);
        let we = wardrop_split(&spec, &p).unwrap();

        let sum: f64 = we.rates().iter().sum();
        assert!(
            (sum - lambda).abs() <= 1e-9 * lambda,
            "case {case}: rate sum {sum} vs Λ={lambda}"
        );
        let blockings: Vec<f64> = p
            .blocks()
            .iter()
            .zip(we.rates())
            .map(|(b, &r)| erlang_b(spec.coalition_servers(*b), OfferedLoad::new(r).unwrap()))
            .collect();
        let spread = blockings.iter().cloned().fold(f64::MIN, f64::max)
            - blockings.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-8, "case {case}: blocking spread {spread}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("criterion 01 (WE correctness, 200 random systems): PASS ({elapsed:?})");
}

#[test]
fn criterion_02_market_growth_merger_gain_and_per_server_ordering() {
    // (i) every block's rate strictly grows with the market
    let p = Partition::new(5, vec![set(&[0, 1]), set(&[2, 3]), set(&[4])]).unwrap();
    let mut prev: Option<Vec<f64>> = None;
    for i in 1..=10 {
        let spec = figure_spec(1.5 * f64::from(i));
        let we = wardrop_split(&spec, &p).unwrap();
        if let Some(last) = &prev {
            for (b, (now, before)) in we.rates().iter().zip(last).enumerate() {
                assert!(now > before, "block {b} did not grow at grid point {i}");
            }
        }
        prev = Some(we.rates().to_vec());
    }

    // (ii) merger superadditivity, exhaustively at Λ = 15
    let spec = figure_spec(15.0);
    for p in coalition_core::model::enumerate_partitions(5).unwrap() {
        if p.size() < 2 {
            continue;
        }
        let we = wardrop_split(&spec, &p).unwrap();
        for i in 0..p.size() {
            for j in i + 1..p.size() {
                let union = p.blocks()[i].union(p.blocks()[j]);
                if union == spec.all_agents() {
                    continue;
                }
                let merged = p.merge_union(union).unwrap();
                let we2 = wardrop_split(&spec, &merged).unwrap();
                let pos = merged.blocks().iter().position(|b| *b == union).unwrap();
                assert!(
                    we2.rates()[pos] > we.rates()[i] + we.rates()[j],
                    "merger {union} failed to gain in {p}"
                );
            }
        }
    }

    // (iii) per-server ordering across every 2-partition
    for p in coalition_core::model::enumerate_partitions(5).unwrap() {
        if p.size() != 2 {
            continue;
        }
        let n0 = spec.coalition_servers(p.blocks()[0]);
        let n1 = spec.coalition_servers(p.blocks()[1]);
        if n0 == n1 {
            continue;
        }
        let we = wardrop_split(&spec, &p).unwrap();
        let (big, small) = if n0 > n1 { (0usize, 1) } else { (1, 0) };
        let nb = f64::from(spec.coalition_servers(p.blocks()[big]));
        let ns = f64::from(spec.coalition_servers(p.blocks()[small]));
        let even = 15.0 / 30.0;
        assert!(we.rates()[big] / nb > even && even > we.rates()[small] / ns, "{p}");
    }
    println!("criterion 02 (rate growth, merger gain, per-server ordering): PASS");
}

#[test]
fn criterion_03_no_stable_partition_of_three_or_more() {
    let start = Instant::now();
    for lambda in [0.3, 15.0, 300.0] {
        let spec = figure_spec(lambda);
        for p in coalition_core::model::enumerate_partitions(5).unwrap() {
            if p.size() < 3 {
                continue;
            }
            let phi = proportional_payoff(&spec, &p).unwrap();
            let cfg = Configuration::new(&spec, p.clone(), phi).unwrap();
            for rule in StabilityRule::ALL {
                let v = is_stable(&spec, &cfg, rule).unwrap();
                assert!(!v.stable, "Λ={lambda}: {p} survives {rule}");
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!("criterion 03 (three-plus partitions always blocked): PASS ({elapsed:?})");
}

#[test]
fn criterion_04_grand_coalition_dichotomy() {
    // no dominant agent: no stabilizing payoff, and every consistent payoff
    // is blocked under imperfect anticipation
    let spec = figure_spec(15.0);
    assert!(gc_analysis(&spec).unwrap().is_none());
    let gc = Partition::grand_coalition(5);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for trial in 0..50 {
        let phi = random_consistent_payoff(&spec, &gc, &mut rng);
        let cfg = Configuration::new(&spec, gc.clone(), phi).unwrap();
        let v = is_stable(&spec, &cfg, StabilityRule::RbIa).unwrap();
        assert!(!v.stable, "trial {trial}: grand coalition survived");
    }

    // dominant agent: the constructed payoff is verified stable by full scan
    let spec = SystemSpec::new(&[20, 3, 2], 10.0, 1.0).unwrap();
    let phi = gc_analysis(&spec).unwrap().expect("dominant-agent payoff");
    let cfg = Configuration::new(&spec, Partition::grand_coalition(3), phi).unwrap();
    assert!(is_stable(&spec, &cfg, StabilityRule::RbIa).unwrap().stable);
    println!("criterion 04 (grand-coalition dichotomy): PASS");
}

#[test]
fn criterion_05_perfect_anticipation_duopolies() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);

    // the grand coalition never survives perfect anticipation
    for (counts, lambda) in [(vec![9u32, 7, 6, 5, 3], 15.0), (vec![20, 3, 2], 10.0)] {
        let spec = SystemSpec::new(&counts, lambda, 1.0).unwrap();
        let gc = Partition::grand_coalition(spec.n_agents());
        for trial in 0..50 {
            let phi = random_consistent_payoff(&spec, &gc, &mut rng);
            let cfg = Configuration::new(&spec, gc.clone(), phi).unwrap();
            let v = is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap();
            assert!(!v.stable, "{counts:?} trial {trial}: GC survived RB-PA");
        }
    }

    // every even split and every maximizer-containing duopoly is stable at
    // the proportional payoff, with positive room for perturbation
    for (counts, lambda) in [(vec![9u32, 7, 6, 5, 3], 15.0), (vec![20u32, 3, 2], 10.0)] {
        let spec = SystemSpec::new(&counts, lambda, 1.0).unwrap();
        let n = spec.n_agents();
        let n_total = spec.total_servers();
        let maximizers = k_star(&spec).unwrap().maximizers;
        let mut tested = 0;
        for bits in 1u32..(1 << n) - 1 {
            let c = CoalitionSet::from_bits(bits);
            // avoid double-counting {C, complement} pairs
            if !c.contains(0) {
                continue;
            }
            let nc = spec.coalition_servers(c);
            let is_half = 2 * nc == n_total;
            let in_cstar =
                maximizers.contains(&nc) || maximizers.contains(&(n_total - nc));
            if !is_half && !in_cstar {
                continue;
            }
            tested += 1;
            let p = Partition::new(n, vec![c, spec.all_agents().minus(c)]).unwrap();
            let phi = proportional_payoff(&spec, &p).unwrap();
            let cfg = Configuration::new(&spec, p.clone(), phi.clone()).unwrap();
            assert!(
                is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap().stable,
                "{counts:?}: duopoly {p} not RB-PA stable at the proportional payoff"
            );

            let r = rb_pa_stability_radius(&spec, &p, &phi).unwrap();
            assert!(r > 0.0, "{counts:?}: zero radius at {p}");
            if r.is_finite() {
                // transfer r/2 within a splittable block and re-verify
                let block = *p
                    .blocks()
                    .iter()
                    .find(|b| b.len() >= 2)
                    .expect("radius finite only with a splittable block");
                let members: Vec<usize> = block.members().collect();
                let mut values = phi.values().to_vec();
                let (from, to) = (members[0], members[1]);
                let delta = (r / 2.0).min(values[from]);
                values[from] -= delta;
                values[to] += delta;
                let moved = PayoffVector::new(values).unwrap();
                let cfg2 = Configuration::new(&spec, p.clone(), moved).unwrap();
                assert!(
                    is_stable(&spec, &cfg2, StabilityRule::RbPa).unwrap().stable,
                    "{counts:?}: r/2 transfer destabilized {p}"
                );
            }
        }
        assert!(tested > 0, "{counts:?}: no duopoly qualified");
    }
    println!("criterion 05 (perfect-anticipation duopolies and radius): PASS");
}

#[test]
fn criterion_06_asymptotic_anchors() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let cases: [(&str, SystemSpec, Vec<u32>); 4] = [
        ("[9,7,6,5,3] @ Λ=300", figure_spec(300.0), vec![27]),
        ("[9,7,6,5,3] @ Λ=0.3", figure_spec(0.3), vec![16]),
        ("[10,7,6,5,4] @ Λ=300", second_spec(300.0), vec![28]),
        ("[10,7,6,5,4] @ Λ=0.3", second_spec(0.3), vec![17]),
    ];
    for (label, spec, expect) in &cases {
        let got: Vec<u32> = k_star(spec).unwrap().maximizers.into_iter().collect();
        if got != *expect {
            failures.push(format!("{label}: maximizers {got:?}, required {expect:?}"));
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, budget 30 s");
    if failures.is_empty() {
        println!("criterion 06 (asymptotic anchors): PASS ({elapsed:?})");
    } else {
        println!("criterion 06 (asymptotic anchors): FAIL");
        for f in &failures {
            println!("  {f}");
        }
        panic!(
            "criterion 06: the Λ=0.3 anchors presume light-traffic behavior that the exact \
             solver (cross-checked against high-precision brute force and the polynomial-root \
             oracle) refutes; the closed-form values only emerge below Λ ≈ 3e-8 / 1e-8. \
             Failures: {failures:?}"
        );
    }
}

#[test]
fn criterion_07_kstar_monotone_over_the_load_grid() {
    let spec = figure_spec(1.0);
    let grid: Vec<f64> = (0..20)
        .map(|i| 0.3 * (300.0f64 / 0.3).powf(f64::from(i) / 19.0))
        .collect();
    let rows = coalition_core::asymptotics::regime_crosscheck(&spec, &grid).unwrap();
    let mut prev_k = 0u32;
    let mut prev_b = -1.0f64;
    for row in &rows {
        assert!(
            row.representative >= prev_k,
            "k* representative dipped at Λ={}",
            row.total_rate
        );
        assert!(
            row.gc_blocking > prev_b,
            "grand-coalition blocking not strictly increasing at Λ={}",
            row.total_rate
        );
        prev_k = row.representative;
        prev_b = row.gc_blocking;
    }
    println!(
        "criterion 07 (k* non-decreasing, B* increasing over 20-point grid): PASS (k*: {} -> {})",
        rows.first().unwrap().representative,
        rows.last().unwrap().representative
    );
}

#[test]
fn criterion_08_second_order_approximation() {
    // absolute quality at heavy load
    let spec = figure_spec(300.0);
    for k in 16..=29u32 {
        let approx =
            coalition_core::asymptotics::second_order_we(f64::from(k), 30.0, 300.0).unwrap();
        let exact = psi(&spec, k).unwrap().lambda_k;
        let gap = (approx.lambda_hat - exact).abs() / 300.0;
        assert!(gap < 0.01, "k={k}: normalized gap {gap}");
    }
    // the gap closes as the load grows
    let mut prev = f64::MAX;
    for lambda in [30.0, 100.0, 300.0] {
        let spec = figure_spec(lambda);
        let worst = (16..=29u32)
            .map(|k| {
                let approx =
                    coalition_core::asymptotics::second_order_we(f64::from(k), 30.0, lambda)
                        .unwrap();
                (approx.lambda_hat - psi(&spec, k).unwrap().lambda_k).abs() / lambda
            })
            .fold(f64::MIN, f64::max);
        assert!(worst < prev, "Λ={lambda}: worst gap {worst} vs previous {prev}");
        prev = worst;
    }
    println!("criterion 08 (second-order split approximation): PASS");
}

#[test]
fn criterion_09_pessimal_fast_equals_oracle() {
    for counts in [vec![9u32, 7, 6, 5, 3], vec![10, 7, 6, 5, 4], vec![20, 3, 2]] {
        for lambda in [0.3, 15.0, 300.0] {
            let spec = SystemSpec::new(&counts, lambda, 1.0).unwrap();
            let n = spec.n_agents();
            for bits in 1u32..(1 << n) {
                let q = CoalitionSet::from_bits(bits);
                let fast = pessimal_rate(&spec, q, PessimalMode::Fast).unwrap();
                let oracle = pessimal_rate(&spec, q, PessimalMode::Oracle).unwrap();
                assert!(
                    (fast - oracle).abs() <= 1e-9,
                    "{counts:?} Λ={lambda} {q}: fast {fast} vs oracle {oracle}"
                );
            }
        }
    }
    println!("criterion 09 (merged-complement pessimal reduction): PASS");
}

#[test]
fn criterion_10_dynamics_convergence() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    for lambda in [0.3, 300.0] {
        let spec = figure_spec(lambda);
        let a1 = check_a1(&spec).unwrap();
        if !a1.holds {
            failures.push(format!(
                "Λ={lambda}: A.1 does not hold (counterexample {:?}); the criterion presumes \
                 it is satisfied here",
                a1.counterexample
            ));
        }

        let mut init_rng = ChaCha8Rng::seed_from_u64(0xC10);
        let inits: Vec<Partition> = (0..5).map(|_| random_partition(5, &mut init_rng)).collect();
        let mut side_histogram: std::collections::BTreeMap<u32, u32> = Default::default();
        let mut bad = 0u32;
        for (pi, p0) in inits.iter().enumerate() {
            let phi0 = proportional_payoff(&spec, p0).unwrap();
            let cfg0 = Configuration::new(&spec, p0.clone(), phi0).unwrap();
            for seed in 0..200u64 {
                let trace = run(
                    &spec,
                    cfg0.clone(),
                    StabilityRule::RbIa,
                    seed,
                    DEFAULT_MAX_STEPS,
                )
                .unwrap();

                // strict improvement for every mover at every step
                let mut payoffs = cfg0.payoff().clone();
                for (si, step) in trace.steps.iter().enumerate() {
                    for agent in step.witness.blocker.members() {
                        if step.payoff.get(agent) <= payoffs.get(agent) {
                            failures.push(format!(
                                "Λ={lambda} init {pi} seed {seed} step {si}: agent {agent} \
                                 did not strictly gain"
                            ));
                        }
                    }
                    payoffs = step.payoff.clone();
                }

                let last = trace.final_configuration();
                let ok = trace.terminal == Terminal::Stable
                    && last.partition().size() == 2
                    && is_stable(&spec, &last, StabilityRule::RbIa).unwrap().stable;
                if ok {
                    let big = last
                        .partition()
                        .blocks()
                        .iter()
                        .map(|b| spec.coalition_servers(*b))
                        .max()
                        .unwrap();
                    *side_histogram.entry(big).or_insert(0) += 1;
                } else {
                    bad += 1;
                    if bad <= 3 {
                        failures.push(format!(
                            "Λ={lambda} init {pi} seed {seed}: terminal {:?} at {}",
                            trace.terminal,
                            last.partition()
                        ));
                    }
                }
            }
        }
        let ks = k_star(&spec).unwrap().maximizers;
        println!(
            "criterion 10 diagnostics: Λ={lambda}, A.1 holds = {}, k* = {ks:?}, \
             failures = {bad}, larger-side histogram = {side_histogram:?}",
            a1.holds
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}, budget 5 min");
    if failures.is_empty() {
        println!("criterion 10 (dynamics convergence): PASS ({elapsed:?})");
    } else {
        println!("criterion 10 (dynamics convergence): FAIL ({elapsed:?})");
        for f in failures.iter().take(10) {
            println!("  {f}");
        }
        panic!(
            "criterion 10: {} failure(s); the A.1 premise is refuted at Λ=0.3 by exact \
             computation (the criterion presumed the light-traffic regime). Convergence \
             itself is reported in the diagnostics above.",
            failures.len()
        );
    }
}

#[test]
fn criterion_11_general_blocking_fragility() {
    // four identical agents: every 6-server triple maximizes utilization,
    // so the stable duopoly {0,1,2}|{3} can be raided by {0,1}∪{3}
    let spec = SystemSpec::new(&[2, 2, 2, 2], 80.0, 1.0).unwrap();
    let maximizers = k_star(&spec).unwrap().maximizers;
    assert!(maximizers.contains(&6), "k* = {maximizers:?}");

    let c = set(&[0, 1, 2]);
    let cstar: Vec<CoalitionSet> = c_star(&spec).unwrap();
    assert!(cstar.contains(&c));
    let p = Partition::new(4, vec![c, set(&[3])]).unwrap();
    let phi = proportional_payoff(&spec, &p).unwrap();
    let cfg = Configuration::new(&spec, p, phi).unwrap();
    assert!(is_stable(&spec, &cfg, StabilityRule::RbPa).unwrap().stable);

    let raider = set(&[0, 1, 3]); // S ∪ (N \ C) with S = {0,1}
    assert!(cstar.contains(&raider));
    let witness = blocks_config(&spec, &cfg, raider, MoveKind::General, StabilityRule::GbPa)
        .unwrap()
        .expect("the cross-cutting maximizer must block");
    assert!(witness.anticipated_value > witness.prevailing_worth);
    assert!(!is_stable(&spec, &cfg, StabilityRule::GbPa).unwrap().stable);
    println!("criterion 11 (general-blocking fragility of stable duopolies): PASS");
}

#[test]
fn criterion_12_monte_carlo_validation() {
    // coverage calibration on the two-server system
    let mut covered = 0;
    for seed in 0..100u64 {
        let est = simulate_loss(2, 1.0, 1.0, 1_000_000, seed).unwrap();
        if (est.blocked_fraction - 0.2).abs() <= est.half_width_95 {
            covered += 1;
        }
    }
    assert!(covered >= 90, "only {covered}/100 runs covered B(2,1) = 0.2");

    // the analytic split of the reference system reproduces its blocking
    let spec = figure_spec(15.0);
    let p = Partition::singletons(5);
    let reports = validate_we(&spec, &p, 1_000_000, 0).unwrap();
    for r in &reports {
        assert!(
            r.covered,
            "block {} missed: {:?} vs target {}",
            r.block, r.estimate, r.target_blocking
        );
    }
    println!("criterion 12 (Monte-Carlo validation, {covered}/100 coverage): PASS");
}
