//! Baseline and online transmission policies.
//!
//! * [`max_harvest_schedule`] spends down to the harvest-maximizing residual
//!   before every arrival.
//! * [`tight_string_schedule`] is the classic fixed-tunnel optimum: the
//!   shortest cumulative-consumption curve between the causality bound and
//!   the overflow bound, assuming harvests do not depend on the stored energy.
//! * [`OnlinePolicy`] re-plans at every arrival from a moving-average
//!   prediction of the next packet.

use serde::{Deserialize, Serialize};

use crate::charge_model::{ChargeCircuit, ChargeCurve};
use crate::error::{domain, Result};
use crate::offline_scheduler::{EnergyPacket, EnergyScenario, TransmissionSchedule};

/// The classic model treats the battery as full at this fraction of `e_max`.
pub const FULL_CHARGE_FRACTION: f64 = 0.99;

/// Fixed energy tunnel of the classic harvesting model.
///
/// Packet `i` delivers `harvests[i]` joules at `arrivals[i]`, independent of
/// the stored energy. Cumulative consumption `W(t)` must satisfy, at each
/// arrival, `lower(i) <= W(t_i) <= upper(i)`, and end at the total energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicTunnel {
    initial_energy: f64,
    arrivals: Vec<f64>,
    harvests: Vec<f64>,
    deadline: f64,
    capacity: f64,
}

impl ClassicTunnel {
    /// `capacity` is the full-battery level, already including any derating.
    pub fn new(
        initial_energy: f64,
        arrivals: Vec<f64>,
        harvests: Vec<f64>,
        deadline: f64,
        capacity: f64,
    ) -> Result<Self> {
        if !(deadline.is_finite() && deadline > 0.0) {
            return domain(format!("tunnel deadline must be positive, got {deadline}"));
        }
        if arrivals.len() != harvests.len() {
            return domain(format!(
                "{} arrivals but {} harvests",
                arrivals.len(),
                harvests.len()
            ));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return domain(format!("capacity must be positive, got {capacity}"));
        }
        if !(initial_energy >= 0.0 && initial_energy <= capacity) {
            return domain(format!(
                "initial energy {initial_energy} J outside [0, {capacity}] J"
            ));
        }
        let mut previous = 0.0;
        for (&t, &e) in arrivals.iter().zip(&harvests) {
            if !(t > previous && t < deadline) {
                return domain(format!("arrival {t} out of order or past the deadline"));
            }
            if !(e >= 0.0 && e <= capacity) {
                return domain(format!("harvest {e} J outside [0, {capacity}] J"));
            }
            previous = t;
        }
        Ok(ClassicTunnel {
            initial_energy,
            arrivals,
            harvests,
            deadline,
            capacity,
        })
    }

    /// Tunnel for a scenario's arrival times with classic harvests `harvests`
    /// and the derated capacity of `circuit`.
    pub fn for_scenario(
        scenario: &EnergyScenario,
        harvests: &[f64],
        circuit: &ChargeCircuit,
    ) -> Result<Self> {
        ClassicTunnel::new(
            scenario.initial_energy(),
            scenario.packets().iter().map(|p| p.arrival).collect(),
            harvests.to_vec(),
            scenario.deadline(),
            FULL_CHARGE_FRACTION * circuit.e_max(),
        )
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    pub fn harvests(&self) -> &[f64] {
        &self.harvests
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn initial_energy(&self) -> f64 {
        self.initial_energy
    }

    /// Energy available before packet `i` (0-based) arrives.
    pub fn upper(&self, i: usize) -> f64 {
        self.initial_energy + self.harvests[..i].iter().sum::<f64>()
    }

    /// Least consumption by `t_i` that avoids overflowing on packet `i`.
    pub fn lower(&self, i: usize) -> f64 {
        self.upper(i + 1) - self.capacity
    }

    pub fn total_energy(&self) -> f64 {
        self.upper(self.harvests.len())
    }

    pub fn epoch_bounds(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.arrivals.iter().copied())
            .chain(std::iter::once(self.deadline))
            .collect()
    }
}

/// A vertex of the tight string: time and cumulative consumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringVertex {
    pub time: f64,
    pub consumed: f64,
}

struct Gate {
    time: f64,
    lo: f64,
    hi: f64,
}

/// Vertices of the taut string through the tunnel, from `(0, 0)` to
/// `(deadline, total energy)`.
///
/// Funnel algorithm: from the current apex, keep the steepest slope still
/// forced by a lower bound and the shallowest slope still allowed by an upper
/// bound. A gate that falls entirely outside that wedge pins the string to
/// the wedge edge that excluded it, which becomes the new apex.
pub fn tight_string_vertices(tunnel: &ClassicTunnel) -> Vec<StringVertex> {
    let n = tunnel.arrivals.len();
    let mut gates: Vec<Gate> = (0..n)
        .map(|i| Gate {
            time: tunnel.arrivals[i],
            lo: tunnel.lower(i).max(0.0),
            hi: tunnel.upper(i),
        })
        .collect();
    let total = tunnel.total_energy();
    gates.push(Gate {
        time: tunnel.deadline,
        lo: total,
        hi: total,
    });

    let mut apex = StringVertex {
        time: 0.0,
        consumed: 0.0,
    };
    let mut vertices = vec![apex];
    let mut k = 0;
    let (mut lo_slope, mut lo_at) = (f64::NEG_INFINITY, usize::MAX);
    let (mut hi_slope, mut hi_at) = (f64::INFINITY, usize::MAX);
    while k < gates.len() {
        let g = &gates[k];
        let dt = g.time - apex.time;
        let a = (g.lo - apex.consumed) / dt;
        let b = (g.hi - apex.consumed) / dt;
        let bend = if b < lo_slope {
            Some((lo_at, gates[lo_at].lo))
        } else if a > hi_slope {
            Some((hi_at, gates[hi_at].hi))
        } else {
            None
        };
        match bend {
            Some((at, consumed)) => {
                apex = StringVertex {
                    time: gates[at].time,
                    consumed,
                };
                vertices.push(apex);
                k = at + 1;
                lo_slope = f64::NEG_INFINITY;
                hi_slope = f64::INFINITY;
            }
            None => {
                if b <= hi_slope {
                    hi_slope = b;
                    hi_at = k;
                }
                if a >= lo_slope {
                    lo_slope = a;
                    lo_at = k;
                }
                k += 1;
            }
        }
    }
    vertices.push(StringVertex {
        time: tunnel.deadline,
        consumed: total,
    });
    vertices
}

/// Cumulative consumption of the string at time `t`.
pub fn string_value(vertices: &[StringVertex], t: f64) -> f64 {
    let i = vertices.partition_point(|v| v.time < t);
    if i == 0 {
        return vertices[0].consumed;
    }
    if i == vertices.len() {
        return vertices[i - 1].consumed;
    }
    let (a, b) = (vertices[i - 1], vertices[i]);
    if b.time == t {
        return b.consumed;
    }
    a.consumed + (b.consumed - a.consumed) * (t - a.time) / (b.time - a.time)
}

/// Classic-model optimal schedule: the slopes of the tight string.
pub fn tight_string_schedule(tunnel: &ClassicTunnel) -> Result<TransmissionSchedule> {
    let vertices = tight_string_vertices(tunnel);
    let bounds = tunnel.epoch_bounds();
    let levels: Vec<f64> = bounds.iter().map(|&t| string_value(&vertices, t)).collect();
    let powers = levels
        .windows(2)
        .zip(bounds.windows(2))
        .map(|(w, t)| ((w[1] - w[0]) / (t[1] - t[0])).max(0.0))
        .collect();
    TransmissionSchedule::new(powers, bounds)
}

/// Spend down to the harvest-maximizing residual before every arrival and
/// drain whatever is left in the final epoch. Evaluated on the feedback
/// model, so later decisions see the energy actually harvested.
pub fn max_harvest_schedule(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
) -> Result<TransmissionSchedule> {
    scenario.validate_for(circuit)?;
    let lengths = scenario.epoch_lengths();
    let mut stored = scenario.initial_energy();
    let mut powers = Vec::with_capacity(lengths.len());
    for (packet, &l) in scenario.packets().iter().zip(&lengths) {
        let curve = ChargeCurve::new(packet.length, circuit)?;
        let power = ((stored - curve.optimal_residual()) / l).max(0.0);
        let residual = (stored - power * l).max(0.0);
        powers.push(power);
        stored = residual + curve.harvested(residual);
    }
    powers.push(stored / lengths[lengths.len() - 1]);
    TransmissionSchedule::new(powers, scenario.epoch_bounds())
}

/// Predicted next packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketPrediction {
    pub predicted_length: f64,
    pub predicted_arrival: f64,
}

/// Cold-start values used before any packet has been observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorPriors {
    pub mean_length: f64,
    pub mean_gap: f64,
}

/// Moving-average prediction from the packets seen so far.
///
/// Gaps are measured between consecutive arrivals, the first one from time
/// zero, so a history of `n` packets contributes `n` gaps.
pub fn predict_next(
    history: &[EnergyPacket],
    now: f64,
    priors: &PredictorPriors,
) -> PacketPrediction {
    if history.is_empty() {
        return PacketPrediction {
            predicted_length: priors.mean_length,
            predicted_arrival: now + priors.mean_gap,
        };
    }
    let n = history.len() as f64;
    let mean_length = history.iter().map(|p| p.length).sum::<f64>() / n;
    // Gaps telescope to the last arrival.
    let mean_gap = history[history.len() - 1].arrival / n;
    PacketPrediction {
        predicted_length: mean_length,
        predicted_arrival: now + mean_gap,
    }
}

/// Power for the current epoch: spend down to the harvest-maximizing residual
/// of the predicted packet by its predicted arrival.
pub fn online_step(
    stored: f64,
    prediction: &PacketPrediction,
    now: f64,
    circuit: &ChargeCircuit,
) -> Result<f64> {
    if !(prediction.predicted_arrival > now) {
        return domain(format!(
            "predicted arrival {} is not after now = {now}",
            prediction.predicted_arrival
        ));
    }
    if !(stored >= 0.0) {
        return domain(format!("stored energy must be non-negative, got {stored}"));
    }
    let target = ChargeCurve::new(prediction.predicted_length, circuit)?.optimal_residual();
    if stored > target {
        Ok((stored - target) / (prediction.predicted_arrival - now))
    } else {
        Ok(0.0)
    }
}

/// Receding-horizon policy re-planned at every arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlinePolicy {
    pub priors: PredictorPriors,
}

impl OnlinePolicy {
    /// Power to hold from `now` until the next arrival. Once the predicted
    /// arrival falls at or past the deadline the policy drains the store.
    pub fn power(
        &self,
        history: &[EnergyPacket],
        stored: f64,
        now: f64,
        deadline: f64,
        circuit: &ChargeCircuit,
    ) -> Result<f64> {
        if !(deadline > now) {
            return domain(format!("deadline {deadline} is not after now = {now}"));
        }
        let prediction = predict_next(history, now, &self.priors);
        if prediction.predicted_arrival >= deadline {
            return Ok(stored.max(0.0) / (deadline - now));
        }
        online_step(stored, &prediction, now, circuit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tunnel(
        e0: f64,
        arrivals: &[f64],
        harvests: &[f64],
        deadline: f64,
        cap: f64,
    ) -> ClassicTunnel {
        ClassicTunnel::new(e0, arrivals.to_vec(), harvests.to_vec(), deadline, cap).unwrap()
    }

    #[test]
    fn no_arrivals_gives_constant_power() {
        let s = tight_string_schedule(&tunnel(2.0, &[], &[], 8.0, 5.0)).unwrap();
        assert_eq!(s.powers(), &[0.25]);
    }

    #[test]
    fn unobstructed_string_is_straight() {
        let s =
            tight_string_schedule(&tunnel(3.0, &[10.0, 20.0], &[1.0, 2.0], 30.0, 10.0)).unwrap();
        for p in s.powers() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn causality_bend_at_first_arrival() {
        // Only 0.5 J before t = 10 but 3.5 J in total: the straight line
        // would overspend before the packet arrives.
        let s = tight_string_schedule(&tunnel(0.5, &[10.0], &[3.0], 20.0, 10.0)).unwrap();
        assert!((s.powers()[0] - 0.05).abs() < 1e-12);
        assert!((s.powers()[1] - 0.3).abs() < 1e-12);
        assert!(s.powers()[1] >= s.powers()[0]);
    }

    #[test]
    fn overflow_bend_forces_early_spending() {
        // 4 J stored, a 4 J packet and a 5 J battery: at least 3 J must be
        // spent by t = 10.
        let s = tight_string_schedule(&tunnel(4.0, &[10.0], &[4.0], 100.0, 5.0)).unwrap();
        assert!((s.powers()[0] - 0.3).abs() < 1e-12);
        assert!((s.powers()[1] - 5.0 / 90.0).abs() < 1e-12);
    }

    #[test]
    fn tunnel_rejects_bad_input() {
        assert!(ClassicTunnel::new(0.0, vec![], vec![], 0.0, 1.0).is_err());
        assert!(ClassicTunnel::new(0.0, vec![5.0], vec![], 10.0, 1.0).is_err());
        assert!(ClassicTunnel::new(0.0, vec![5.0], vec![2.0], 10.0, 1.0).is_err());
        assert!(ClassicTunnel::new(0.0, vec![12.0], vec![0.5], 10.0, 1.0).is_err());
    }

    #[test]
    fn prediction_examples() {
        let priors = PredictorPriors {
            mean_length: 3.0,
            mean_gap: 7.0,
        };
        let p = predict_next(&[], 0.0, &priors);
        assert_eq!((p.predicted_length, p.predicted_arrival), (3.0, 7.0));

        let one = [EnergyPacket {
            arrival: 10.0,
            length: 5.0,
        }];
        let p = predict_next(&one, 10.0, &priors);
        assert_eq!((p.predicted_length, p.predicted_arrival), (5.0, 20.0));

        let two = [
            EnergyPacket {
                arrival: 8.0,
                length: 4.0,
            },
            EnergyPacket {
                arrival: 20.0,
                length: 6.0,
            },
        ];
        let p = predict_next(&two, 20.0, &priors);
        assert_eq!((p.predicted_length, p.predicted_arrival), (5.0, 30.0));
    }

    #[test]
    fn online_step_examples() {
        let c = ChargeCircuit::new(750.0, 0.68, 2.5).unwrap();
        // T = 0 puts the target at e_max / 4.
        let target = c.e_max() / 4.0;
        let pred = PacketPrediction {
            predicted_length: 0.0,
            predicted_arrival: 10.0,
        };
        assert_eq!(online_step(target * 0.5, &pred, 0.0, &c).unwrap(), 0.0);
        assert_eq!(online_step(target, &pred, 0.0, &c).unwrap(), 0.0);
        let p = online_step(target + 0.36, &pred, 0.0, &c).unwrap();
        assert!((p - 0.036).abs() < 1e-12);
        assert!(online_step(1.0, &pred, 10.0, &c).is_err());
    }

    #[test]
    fn online_policy_drains_when_next_packet_is_past_deadline() {
        let c = ChargeCircuit::new(750.0, 0.68, 2.5).unwrap();
        let policy = OnlinePolicy {
            priors: PredictorPriors {
                mean_length: 1.0,
                mean_gap: 50.0,
            },
        };
        let p = policy.power(&[], 1.0, 0.0, 20.0, &c).unwrap();
        assert!((p - 0.05).abs() < 1e-15);
    }

    #[test]
    fn max_harvest_idles_below_target() {
        let c = ChargeCircuit::new(750.0, 0.68, 2.5).unwrap();
        let scenario = EnergyScenario::new(
            0.1,
            vec![EnergyPacket {
                arrival: 10.0,
                length: 15.0,
            }],
            20.0,
        )
        .unwrap();
        let s = max_harvest_schedule(&scenario, &c).unwrap();
        assert_eq!(s.powers()[0], 0.0);
        assert!(s.powers()[1] > 0.0);
    }
}
