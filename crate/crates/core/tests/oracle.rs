use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfeh_core::offline_scheduler::solve;
use rfeh_core::oracle::{brute_force_optimize, default_upper_bound, GridSpec};
use rfeh_core::{ChargeCircuit, EnergyPacket, EnergyScenario};

fn bench_circuit() -> ChargeCircuit {
    ChargeCircuit::new(750.0, 0.68, 2.5).unwrap()
}

fn random_scenario(rng: &mut ChaCha8Rng, n: usize) -> EnergyScenario {
    let e0 = rng.gen_range(0.05..1.5);
    let mut t = 0.0;
    let packets = (0..n)
        .map(|_| {
            t += rng.gen_range(5.0..40.0);
            EnergyPacket {
                arrival: t,
                length: rng.gen_range(1.0..200.0),
            }
        })
        .collect();
    EnergyScenario::new(e0, packets, t + rng.gen_range(5.0..40.0)).unwrap()
}

#[test]
fn refinement_converges_towards_the_solver() {
    let c = bench_circuit();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=3 {
        for _ in 0..5 {
            let s = random_scenario(&mut rng, n);
            let optimum = solve(&s, &c).unwrap().throughput;
            let mut previous: Option<f64> = None;
            for resolution in [15, 30, 60] {
                let r =
                    brute_force_optimize(&s, &c, &GridSpec::default().with_resolution(resolution))
                        .unwrap();
                // Halving the step keeps every earlier grid point.
                if let Some(p) = previous {
                    assert!(r.throughput >= p, "{} < {p}", r.throughput);
                }
                previous = Some(r.throughput);
                assert!(r.throughput <= optimum + 1e-12);
                assert!(optimum <= r.throughput + r.grid_error);
            }
        }
    }
}

#[test]
fn winners_never_fill_the_capacitor() {
    let c = bench_circuit();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=3 {
        let s = random_scenario(&mut rng, n);
        let r = brute_force_optimize(&s, &c, &GridSpec::default().with_resolution(30)).unwrap();
        assert!(r.peak_stored.iter().all(|&e| e < c.e_max()));
        assert_eq!(r.peak_stored.len(), n);
    }
}

#[test]
fn upper_bound_covers_every_feasible_power() {
    let c = bench_circuit();
    let s = random_scenario(&mut ChaCha8Rng::seed_from_u64(13), 2);
    let ub = default_upper_bound(&s, &c).unwrap();
    let total = s.initial_energy() + 2.0 * c.e_max();
    let shortest = s.epoch_lengths().into_iter().fold(f64::INFINITY, f64::min);
    assert!(ub > 0.0 && ub <= 2.0 * total / shortest);
    let r = brute_force_optimize(&s, &c, &GridSpec::default()).unwrap();
    assert!((r.step - ub / 60.0).abs() < 1e-15 * ub);
}

#[test]
fn explicit_bound_and_resolution_checks() {
    let c = bench_circuit();
    let s = random_scenario(&mut ChaCha8Rng::seed_from_u64(14), 1);
    let coarse = GridSpec {
        upper_bound: Some(0.01),
        ..GridSpec::default()
    };
    let r = brute_force_optimize(&s, &c, &coarse).unwrap();
    assert!(r.schedule.powers()[0] < 0.01);
    assert!(brute_force_optimize(&s, &c, &GridSpec::default().with_resolution(1)).is_err());
    let negative = GridSpec {
        upper_bound: Some(-1.0),
        ..GridSpec::default()
    };
    assert!(brute_force_optimize(&s, &c, &negative).is_err());
}
