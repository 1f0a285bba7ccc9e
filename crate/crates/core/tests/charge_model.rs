use proptest::prelude::*;
use rfeh_core::charge_model::{
    harvest_coefficients, harvest_sensitivity, harvested_energy, optimal_residual,
    packet_length_for,
};
use rfeh_core::{ChargeCircuit, Error};

fn bench_circuit() -> ChargeCircuit {
    ChargeCircuit::new(750.0, 0.68, 2.5).unwrap()
}

#[test]
fn fifteen_second_packet_at_the_optimum() {
    let c = bench_circuit();
    assert!((c.tau() - 510.0).abs() < 1e-12 * 510.0);
    assert!((c.e_max() - 2.125).abs() < 1e-12 * 2.125);
    // 40-digit evaluation of the harvest at 0.2427 e_max.
    let h = harvested_energy(0.2427 * c.e_max(), 15.0, &c).unwrap();
    assert!((h - 0.031_247_747_455).abs() < 1e-11);
    assert!((h - 0.03125).abs() < 1e-5);
    // The coefficient form gives the same energy.
    let k = harvest_coefficients(15.0, &c).unwrap();
    let r: f64 = 0.2427 * c.e_max();
    let coefficient_form = k.a1 * k.a2 * k.a2 + k.a1 * k.a3 * r.sqrt() + k.a1 * k.a4 * r;
    assert!((coefficient_form - h).abs() < 1e-14);
    let best = optimal_residual(15.0, &c).unwrap();
    assert!(harvest_sensitivity(best, 15.0, &c).unwrap().abs() < 1e-12);
}

#[test]
fn full_charge_is_infeasible() {
    let c = bench_circuit();
    assert!(matches!(
        packet_length_for(1.0, c.e_max() - 1.0, &c),
        Err(Error::Infeasible(_))
    ));
    assert!(packet_length_for(1.0, c.e_max(), &c).is_err());
    assert!(harvested_energy(c.e_max() * 1.01, 1.0, &c).is_err());
}

fn circuit() -> impl Strategy<Value = ChargeCircuit> {
    (1.0f64..1e4, 1e-3f64..2.0, 0.5f64..5.0)
        .prop_map(|(r, cap, v)| ChargeCircuit::new(r, cap, v).unwrap())
}

proptest! {
    #[test]
    fn coefficient_signs(c in circuit(), x in 1e-4f64..5.0) {
        let k = harvest_coefficients(x * c.tau(), &c).unwrap();
        prop_assert!(k.a1 > 0.0 && k.a2 > 0.0 && k.a4 < 0.0);
        prop_assert!((k.a3 - 2f64.powf(1.5) * k.a2).abs() <= 1e-12 * k.a3);
    }

    #[test]
    fn nothing_beats_the_optimal_residual(c in circuit(), x in 1e-4f64..5.0, f in 0.0f64..=1.0) {
        let t = x * c.tau();
        let best = harvested_energy(optimal_residual(t, &c).unwrap(), t, &c).unwrap();
        let h = harvested_energy(f * c.e_max(), t, &c).unwrap();
        prop_assert!(h <= best * (1.0 + 1e-12));
        prop_assert!(h >= 0.0 && h <= (1.0 - f) * c.e_max() * (1.0 + 1e-12));
    }

    #[test]
    fn round_trip_through_packet_length(c in circuit(), x in 1e-4f64..5.0, f in 0.0f64..0.9) {
        let t = x * c.tau();
        let r = f * c.e_max();
        let h = harvested_energy(r, t, &c).unwrap();
        prop_assume!(h > 0.0 && r + h < c.e_max());
        let back = packet_length_for(r, h, &c).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * t, "{} vs {}", back, t);
    }
}
