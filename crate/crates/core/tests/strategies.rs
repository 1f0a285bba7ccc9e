use proptest::prelude::*;
use rfeh_core::charge_model::{harvested_energy, optimal_residual};
use rfeh_core::offline_scheduler::solve;
use rfeh_core::simulator::{
    generate_scenario, replay, run_rng, ExperimentConfig, Policy, RateFunction,
};
use rfeh_core::strategies::{
    max_harvest_schedule, string_value, tight_string_schedule, tight_string_vertices,
    ClassicTunnel, OnlinePolicy, PredictorPriors, FULL_CHARGE_FRACTION,
};
use rfeh_core::{ChargeCircuit, EnergyPacket, EnergyScenario, TransmissionSchedule};

fn bench_circuit() -> ChargeCircuit {
    ChargeCircuit::new(750.0, 0.68, 2.5).unwrap()
}

/// Packets of `length` seconds every `gap` seconds, deadline one gap after
/// the last.
fn stationary(e0: f64, n: usize, gap: f64, length: f64) -> EnergyScenario {
    let packets = (1..=n)
        .map(|k| EnergyPacket {
            arrival: k as f64 * gap,
            length,
        })
        .collect();
    EnergyScenario::new(e0, packets, (n + 1) as f64 * gap).unwrap()
}

fn two_packet() -> EnergyScenario {
    EnergyScenario::new(
        0.5,
        vec![
            EnergyPacket {
                arrival: 10.0,
                length: 5.0,
            },
            EnergyPacket {
                arrival: 20.0,
                length: 5.0,
            },
        ],
        30.0,
    )
    .unwrap()
}

#[test]
fn max_harvest_holds_the_optimal_residual() {
    // Long packets refill well above the target, so every arrival is
    // unconstrained.
    let c = bench_circuit();
    let s = stationary(1.5, 12, 20.0, 200.0);
    let target = optimal_residual(200.0, &c).unwrap();
    let schedule = max_harvest_schedule(&s, &c).unwrap();
    let out = replay(
        Policy::Schedule(&schedule),
        &s,
        &c,
        &RateFunction::Normalized,
    )
    .unwrap();
    assert!(!out.trace.any_clamped());
    for e in &out.trace.epochs[..12] {
        assert!(
            (e.residual - target).abs() <= 1e-9,
            "{} vs {target}",
            e.residual
        );
    }
    assert!(out.trace.epochs[12].residual.abs() <= 1e-12);
}

#[test]
fn online_policy_matches_max_harvest_on_stationary_streams() {
    let c = bench_circuit();
    for (gap, length) in [(20.0, 200.0), (5.0, 15.0), (60.0, 1.0)] {
        let s = stationary(0.8, 10, gap, length);
        let policy = OnlinePolicy {
            priors: PredictorPriors {
                mean_length: length,
                mean_gap: gap,
            },
        };
        let online = replay(Policy::Online(&policy), &s, &c, &RateFunction::Normalized).unwrap();
        let mh = max_harvest_schedule(&s, &c).unwrap();
        let offline = replay(Policy::Schedule(&mh), &s, &c, &RateFunction::Normalized).unwrap();
        for (a, b) in online.powers.iter().zip(&offline.powers) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-3), "{a} vs {b}");
        }
        assert!((online.throughput - offline.throughput).abs() <= 1e-12);
    }
}

#[test]
fn max_harvest_harvests_the_most_on_two_packets() {
    let c = bench_circuit();
    let s = two_packet();
    let rate = RateFunction::Normalized;
    let harvested = |schedule: &TransmissionSchedule| {
        let out = replay(Policy::Schedule(schedule), &s, &c, &rate).unwrap();
        out.trace.total_harvested()
    };
    let mh = harvested(&max_harvest_schedule(&s, &c).unwrap());
    let optimal = harvested(&solve(&s, &c).unwrap().schedule);
    // Classic harvests: what each packet would deliver into an empty store.
    let classic: Vec<f64> = s
        .packets()
        .iter()
        .map(|p| harvested_energy(0.0, p.length, &c).unwrap())
        .collect();
    let tunnel = ClassicTunnel::for_scenario(&s, &classic, &c).unwrap();
    let ts = harvested(&tight_string_schedule(&tunnel).unwrap());
    assert!(mh >= optimal, "{mh} < {optimal}");
    assert!(mh >= ts, "{mh} < {ts}");
}

#[test]
fn tunnel_uses_the_derated_capacity() {
    let c = bench_circuit();
    let t = ClassicTunnel::for_scenario(&two_packet(), &[0.1, 0.2], &c).unwrap();
    assert_eq!(t.capacity(), FULL_CHARGE_FRACTION * c.e_max());
    assert_eq!(t.upper(0), 0.5);
    assert!((t.upper(2) - 0.8).abs() < 1e-15);
    assert!((t.lower(1) - (0.8 - t.capacity())).abs() < 1e-15);
    assert!(tight_string_schedule(&t).is_ok());
}

#[test]
fn generated_strategies_respect_causality() {
    let config = ExperimentConfig {
        packets: 30,
        ..ExperimentConfig::reference()
    };
    let c = &config.circuit;
    let rate = config.rate_function();
    for run in 0..5 {
        let g = generate_scenario(&config, &mut run_rng(config.seed, run)).unwrap();
        let mh = max_harvest_schedule(&g.scenario, c).unwrap();
        let out = replay(Policy::Schedule(&mh), &g.scenario, c, &rate).unwrap();
        assert!(!out.trace.any_clamped());
        let policy = config.online_policy();
        let out = replay(Policy::Online(&policy), &g.scenario, c, &rate).unwrap();
        assert!(!out.trace.any_clamped());
        for e in &out.trace.epochs {
            assert!(e.residual >= 0.0 && e.residual + e.harvested <= c.e_max());
        }
    }
}

fn tunnel_strategy() -> impl Strategy<Value = ClassicTunnel> {
    (1.0f64..10.0, 0usize..12).prop_flat_map(|(capacity, n)| {
        (
            0.0..=capacity,
            prop::collection::vec((0.1f64..20.0, 0.0..=capacity), n),
            0.1f64..20.0,
        )
            .prop_map(move |(e0, steps, last)| {
                let mut t = 0.0;
                let mut arrivals = Vec::new();
                let mut harvests = Vec::new();
                for (gap, e) in steps {
                    t += gap;
                    arrivals.push(t);
                    harvests.push(e);
                }
                ClassicTunnel::new(e0, arrivals, harvests, t + last, capacity).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn tight_string_stays_in_the_tunnel(tunnel in tunnel_strategy()) {
        let vertices = tight_string_vertices(&tunnel);
        let slack = 1e-9 * tunnel.total_energy().max(1.0);
        prop_assert_eq!(vertices[0].time, 0.0);
        prop_assert_eq!(vertices[0].consumed, 0.0);
        let end = vertices[vertices.len() - 1];
        prop_assert_eq!(end.time, tunnel.deadline());
        prop_assert!((end.consumed - tunnel.total_energy()).abs() <= slack);
        for (i, &t) in tunnel.arrivals().iter().enumerate() {
            let w = string_value(&vertices, t);
            prop_assert!(w <= tunnel.upper(i) + slack);
            prop_assert!(w >= tunnel.lower(i).max(0.0) - slack);
        }
        let schedule = tight_string_schedule(&tunnel).unwrap();
        prop_assert!(schedule.powers().iter().all(|&p| p >= 0.0));
        let spent: f64 = schedule
            .powers()
            .iter()
            .zip(schedule.epoch_lengths())
            .map(|(p, l)| p * l)
            .sum();
        prop_assert!((spent - tunnel.total_energy()).abs() <= slack);
    }

    #[test]
    fn tight_string_bends_only_on_bounds(tunnel in tunnel_strategy()) {
        let vertices = tight_string_vertices(&tunnel);
        let slack = 1e-9 * tunnel.total_energy().max(1.0);
        for k in 1..vertices.len().saturating_sub(1) {
            let v = vertices[k];
            let i = tunnel.arrivals().iter().position(|&t| t == v.time);
            prop_assert!(i.is_some(), "bend at {} is not an arrival", v.time);
            let i = i.unwrap();
            let before = (v.consumed - vertices[k - 1].consumed) / (v.time - vertices[k - 1].time);
            let after = (vertices[k + 1].consumed - v.consumed) / (vertices[k + 1].time - v.time);
            let at_upper = (v.consumed - tunnel.upper(i)).abs() <= slack;
            let at_lower = (v.consumed - tunnel.lower(i).max(0.0)).abs() <= slack;
            prop_assert!((at_upper && after >= before - 1e-12) || (at_lower && after <= before + 1e-12));
        }
    }
}
