//! Brute-force reference optimizer for small scenarios.
//!
//! Every epoch but the last takes a power from the grid
//! `{0, h, 2h, ..., (n-1)h}` with `h = p_ub / n`; the last epoch spends
//! whatever is stored. Each tuple is replayed with the feedback harvest
//! model and tuples that overspend are discarded.
//!
//! Error bound: round each power of an optimal schedule down to the grid.
//! Less is spent, and stored energy after a packet, `E + E_h(E)`, is
//! increasing in `E`, so the rounded schedule stays feasible and reaches the
//! last epoch with at least as much energy. Each rounded epoch loses at most
//! `(l_i / 2) log2(1 + h) <= l_i h / (2 ln 2)`, hence
//! `best >= optimum - h sum_{i <= N} l_i / (2 ln 2)`.
//!
//! Doubling `n` keeps every old grid point, so refinement never lowers the
//! best value found.

use serde::{Deserialize, Serialize};

use crate::charge_model::{ChargeCircuit, ChargeCurve};
use crate::error::{domain, Error, Result};
use crate::offline_scheduler::{throughput_of, EnergyScenario, TransmissionSchedule};

/// Grid settings for [`brute_force_optimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Grid points per epoch.
    pub resolution: usize,
    /// Top of the power grid; derived from the scenario when `None`.
    pub upper_bound: Option<f64>,
    /// Largest packet count accepted.
    pub max_packets: usize,
    /// Most power tuples that may be evaluated.
    pub budget: u128,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 60,
            upper_bound: None,
            max_packets: 3,
            budget: 60u128.pow(3),
        }
    }
}

impl GridSpec {
    pub fn with_resolution(self, resolution: usize) -> Self {
        GridSpec { resolution, ..self }
    }
}

/// Best grid schedule and what it guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub schedule: TransmissionSchedule,
    pub throughput: f64,
    /// The true optimum exceeds `throughput` by at most this much.
    pub grid_error: f64,
    pub step: f64,
    pub evaluations: u128,
    /// Stored energy at the first arrival, before its packet.
    pub first_residual: f64,
    /// Stored energy after each packet, `E_r + E_h`, of the winner.
    pub peak_stored: Vec<f64>,
}

/// Upper bound on any feasible power: twice the most energy the scenario
/// could ever provide, spent in the shortest epoch.
pub fn default_upper_bound(scenario: &EnergyScenario, circuit: &ChargeCircuit) -> Result<f64> {
    let mut total = scenario.initial_energy();
    for p in scenario.packets() {
        // Largest possible harvest, reached at the optimal residual.
        let curve = ChargeCurve::new(p.length, circuit)?;
        total += curve.harvested(curve.optimal_residual());
    }
    let shortest = scenario
        .epoch_lengths()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(2.0 * total / shortest)
}

struct Search<'a> {
    curves: Vec<ChargeCurve>,
    lengths: Vec<f64>,
    step: f64,
    n: usize,
    powers: Vec<f64>,
    peaks: Vec<f64>,
    best: Option<(f64, Vec<f64>, Vec<f64>)>,
    bounds: &'a [f64],
    evaluations: u128,
}

impl Search<'_> {
    fn descend(&mut self, epoch: usize, stored: f64) {
        let l = self.lengths[epoch];
        if epoch == self.curves.len() {
            self.evaluations += 1;
            self.powers.push(stored / l);
            let value = throughput_of(&self.powers, self.bounds).unwrap_or(f64::NEG_INFINITY);
            if self.best.as_ref().is_none_or(|b| value > b.0) {
                self.best = Some((value, self.powers.clone(), self.peaks.clone()));
            }
            self.powers.pop();
            return;
        }
        let curve = self.curves[epoch];
        for j in 0..self.n {
            let p = j as f64 * self.step;
            let residual = stored - p * l;
            if residual < 0.0 {
                // Every larger power overspends too.
                let skipped = self.n - j;
                self.evaluations +=
                    skipped as u128 * (self.n as u128).pow((self.curves.len() - epoch - 1) as u32);
                break;
            }
            let next = residual + curve.harvested(residual);
            self.powers.push(p);
            self.peaks.push(next);
            self.descend(epoch + 1, next);
            self.powers.pop();
            self.peaks.pop();
        }
    }
}

/// Exhaustive grid search over the first `N` epoch powers.
pub fn brute_force_optimize(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    grid: &GridSpec,
) -> Result<OracleResult> {
    scenario.validate_for(circuit)?;
    let n_packets = scenario.packet_count();
    if n_packets > grid.max_packets {
        return domain(format!(
            "oracle handles at most {} packets, scenario has {n_packets}",
            grid.max_packets
        ));
    }
    if grid.resolution < 2 {
        return domain(format!(
            "grid resolution must be at least 2, got {}",
            grid.resolution
        ));
    }
    let evaluations = (grid.resolution as u128).pow(n_packets as u32);
    if evaluations > grid.budget {
        return Err(Error::GridTooLarge {
            evaluations,
            budget: grid.budget,
        });
    }
    let upper = match grid.upper_bound {
        Some(u) => u,
        None => default_upper_bound(scenario, circuit)?,
    };
    // Zero only when no energy can ever be stored; the grid collapses to 0.
    if !(upper.is_finite() && upper >= 0.0) {
        return domain(format!(
            "grid upper bound must be non-negative, got {upper}"
        ));
    }

    let bounds = scenario.epoch_bounds();
    let lengths = scenario.epoch_lengths();
    let step = upper / grid.resolution as f64;
    let mut search = Search {
        curves: scenario
            .packets()
            .iter()
            .map(|p| ChargeCurve::new(p.length, circuit))
            .collect::<Result<_>>()?,
        lengths: lengths.clone(),
        step,
        n: grid.resolution,
        powers: Vec::with_capacity(n_packets + 1),
        peaks: Vec::with_capacity(n_packets),
        best: None,
        bounds: &bounds,
        evaluations: 0,
    };
    search.descend(0, scenario.initial_energy());
    let evaluated = search.evaluations;
    let (value, powers, peaks) = search.best.expect("the all-zero tuple is always feasible");

    let first_residual = if n_packets > 0 {
        scenario.initial_energy() - powers[0] * lengths[0]
    } else {
        0.0
    };
    let gridded: f64 = lengths[..n_packets].iter().sum();
    Ok(OracleResult {
        schedule: TransmissionSchedule::new(powers, bounds)?,
        throughput: value,
        grid_error: step * gridded / (2.0 * std::f64::consts::LN_2),
        step,
        evaluations: evaluated,
        first_residual,
        peak_stored: peaks,
    })
}
