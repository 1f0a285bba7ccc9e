//! Feedback-accurate replay, scenario generation and Monte Carlo sweeps.
//!
//! Replay follows the atomic-at-arrival reading of the harvest model: power
//! is drawn during the epoch, and the packet closing the epoch is absorbed
//! in one step at its arrival instant with the stored energy at that moment.
//!
//! Scenarios are generated in reverse, the way a classic-model baseline can
//! be compared with the feedback model: draw a classic tunnel, run the tight
//! string through it, then pick each packet length so that the string's
//! residual absorbs exactly the drawn harvest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge_model::{packet_length_for, ChargeCircuit, ChargeCurve};
use crate::error::{domain, Error, Result};
use crate::offline_scheduler::{
    solve_with, EnergyPacket, EnergyScenario, EpochRecord, HarvestTrace, SolveOptions, SolveReport,
    TransmissionSchedule,
};
use crate::strategies::{
    max_harvest_schedule, string_value, tight_string_schedule, tight_string_vertices,
    ClassicTunnel, OnlinePolicy, PredictorPriors, FULL_CHARGE_FRACTION,
};

/// Standard deviation of the uniform draws as a fraction of their mean.
pub const SPREAD: f64 = 0.2;

/// Overspending smaller than this fraction of `e_max` is rounding, not a
/// causality violation: it is absorbed without raising the clamp flag.
pub const CLAMP_SLACK: f64 = 1e-12;

/// Free-space AWGN link between the device and its receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinkParams", into = "LinkParams")]
pub struct ChannelLink {
    frequency: f64,
    distance: f64,
    bandwidth: f64,
    noise_density: f64,
}

#[derive(Serialize, Deserialize)]
struct LinkParams {
    frequency: f64,
    distance: f64,
    bandwidth: f64,
    noise_density: f64,
}

impl TryFrom<LinkParams> for ChannelLink {
    type Error = Error;

    fn try_from(p: LinkParams) -> Result<Self> {
        ChannelLink::new(p.frequency, p.distance, p.bandwidth, p.noise_density)
    }
}

impl From<ChannelLink> for LinkParams {
    fn from(l: ChannelLink) -> Self {
        LinkParams {
            frequency: l.frequency,
            distance: l.distance,
            bandwidth: l.bandwidth,
            noise_density: l.noise_density,
        }
    }
}

/// Ten feet.
pub const DEFAULT_DISTANCE_M: f64 = 3.048;

impl Default for ChannelLink {
    /// 2.4 GHz over 10 ft with 10 MHz of bandwidth and -174 dBm/Hz noise.
    fn default() -> Self {
        ChannelLink {
            frequency: 2.4e9,
            distance: DEFAULT_DISTANCE_M,
            bandwidth: 10e6,
            noise_density: -174.0,
        }
    }
}

impl ChannelLink {
    /// `noise_density` is in dBm/Hz; the other fields are SI.
    pub fn new(frequency: f64, distance: f64, bandwidth: f64, noise_density: f64) -> Result<Self> {
        for (name, v) in [
            ("frequency", frequency),
            ("distance", distance),
            ("bandwidth", bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if !noise_density.is_finite() {
            return domain("noise density must be finite");
        }
        Ok(ChannelLink {
            frequency,
            distance,
            bandwidth,
            noise_density,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn noise_density(&self) -> f64 {
        self.noise_density
    }

    pub fn budget(&self) -> LinkBudget {
        LinkBudget {
            path_loss_db: 20.0 * self.distance.log10() + 20.0 * self.frequency.log10() - 147.55,
            noise_floor_dbm: self.noise_density + 10.0 * self.bandwidth.log10(),
        }
    }

    /// Linear SNR produced by one watt of transmit power.
    pub fn gain(&self) -> f64 {
        let b = self.budget();
        10f64.powf((30.0 - b.path_loss_db - b.noise_floor_dbm) / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub path_loss_db: f64,
    pub noise_floor_dbm: f64,
}

/// Free-space path loss and noise floor of an arbitrary link.
pub fn link_budget(
    frequency: f64,
    distance: f64,
    bandwidth: f64,
    noise_density: f64,
) -> Result<LinkBudget> {
    Ok(ChannelLink::new(frequency, distance, bandwidth, noise_density)?.budget())
}

/// Spectral efficiency in bits/s/Hz at a transmit power given in dBm.
pub fn rate(power_dbm: f64, link: &ChannelLink) -> f64 {
    let b = link.budget();
    let snr_db = power_dbm - b.path_loss_db - b.noise_floor_dbm;
    (10f64.powf(snr_db / 10.0)).ln_1p() / std::f64::consts::LN_2
}

/// Which power-rate function scores a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModel {
    /// `(l/2) log2(1 + p)` with `p` already an SNR.
    #[default]
    Normalized,
    /// `l log2(1 + g p)` with `p` in watts through the link budget.
    LinkBudget,
}

impl std::str::FromStr for RateModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(RateModel::Normalized),
            "link-budget" => Ok(RateModel::LinkBudget),
            other => domain(format!("unknown rate model {other:?}")),
        }
    }
}

impl std::fmt::Display for RateModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateModel::Normalized => "normalized",
            RateModel::LinkBudget => "link-budget",
        })
    }
}

/// A rate model bound to its link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFunction {
    Normalized,
    LinkBudget { gain: f64 },
}

impl RateFunction {
    pub fn new(model: RateModel, link: &ChannelLink) -> Self {
        match model {
            RateModel::Normalized => RateFunction::Normalized,
            RateModel::LinkBudget => RateFunction::LinkBudget { gain: link.gain() },
        }
    }

    /// Bits (per Hz for the link budget) sent at `power` for `length` seconds.
    pub fn bits(&self, power: f64, length: f64) -> f64 {
        let log2_1p = |x: f64| x.ln_1p() / std::f64::consts::LN_2;
        match *self {
            RateFunction::Normalized => 0.5 * length * log2_1p(power),
            RateFunction::LinkBudget { gain } => length * log2_1p(gain * power),
        }
    }

    pub fn throughput(&self, schedule: &TransmissionSchedule) -> f64 {
        schedule
            .powers()
            .iter()
            .zip(schedule.epoch_lengths())
            .map(|(&p, l)| self.bits(p, l))
            .sum()
    }

    /// Factor turning joules into the solver's normalized energy units.
    fn energy_gain(&self) -> f64 {
        match *self {
            RateFunction::Normalized => 1.0,
            RateFunction::LinkBudget { gain } => gain,
        }
    }
}

/// Optimal schedule under `rate`.
///
/// A link gain `g` turns the problem into the normalized one with every
/// energy multiplied by `g`. Since the harvest law is homogeneous of degree
/// one in energy, that is the normalized problem on a circuit whose `v_max`
/// is scaled by `sqrt(g)`; the result is mapped back to watts and joules.
pub fn solve_for_rate(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    rate: &RateFunction,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let g = rate.energy_gain();
    if g == 1.0 {
        let mut report = solve_with(scenario, circuit, options)?;
        report.throughput = rate.throughput(&report.schedule);
        return Ok(report);
    }
    scenario.validate_for(circuit)?;
    let scaled_circuit = circuit.scaled_energy(g)?;
    let scaled = EnergyScenario::new(
        scenario.initial_energy() * g,
        scenario.packets().to_vec(),
        scenario.deadline(),
    )?;
    let scaled_options = SolveOptions {
        tolerance: options.tolerance * g,
        ..*options
    };
    let report = solve_with(&scaled, &scaled_circuit, &scaled_options)?;
    let powers = report.schedule.powers().iter().map(|p| p / g).collect();
    let schedule = TransmissionSchedule::new(powers, report.schedule.epoch_bounds().to_vec())?;
    let trace = HarvestTrace {
        initial_energy: scenario.initial_energy(),
        epochs: report
            .trace
            .epochs
            .iter()
            .map(|e| EpochRecord {
                residual: e.residual / g,
                harvested: e.harvested / g,
                consumed: e.consumed / g,
                clamped: e.clamped,
            })
            .collect(),
    };
    Ok(SolveReport {
        throughput: rate.throughput(&schedule),
        schedule,
        trace,
        candidates_examined: report.candidates_examined,
        terminal_residual_error: report.terminal_residual_error / g,
        first_residual: report.first_residual / g,
        pinned_epochs: report.pinned_epochs,
        stationary_powers: report.stationary_powers,
        final_epoch_adjustment: report.final_epoch_adjustment / g,
        method: report.method,
    })
}

/// What to replay.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Schedule(&'a TransmissionSchedule),
    Online(&'a OnlinePolicy),
}

/// Result of a replay: the trace, the powers actually applied after
/// clamping, and the throughput they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub trace: HarvestTrace,
    pub powers: Vec<f64>,
    pub throughput: f64,
}

/// Steps a policy through the scenario under the feedback harvest model.
///
/// Consumption that would take the store below zero is cut back to the
/// stored energy and the epoch is flagged.
pub fn replay(
    policy: Policy<'_>,
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    rate: &RateFunction,
) -> Result<ReplayOutcome> {
    scenario.validate_for(circuit)?;
    if let Policy::Schedule(s) = policy {
        if s.epoch_count() != scenario.epoch_count() {
            return domain(format!(
                "schedule has {} epochs, scenario has {}",
                s.epoch_count(),
                scenario.epoch_count()
            ));
        }
    }
    let bounds = scenario.epoch_bounds();
    let packets = scenario.packets();
    let slack = CLAMP_SLACK * circuit.e_max();
    let mut stored = scenario.initial_energy();
    let mut epochs = Vec::with_capacity(bounds.len() - 1);
    let mut powers = Vec::with_capacity(bounds.len() - 1);
    let mut throughput = 0.0;

    for i in 0..bounds.len() - 1 {
        let (now, end) = (bounds[i], bounds[i + 1]);
        let length = end - now;
        let planned = match policy {
            Policy::Schedule(s) => s.powers()[i],
            Policy::Online(p) => {
                p.power(&packets[..i], stored, now, scenario.deadline(), circuit)?
            }
        };
        let mut consumed = planned * length;
        let mut clamped = false;
        if consumed > stored {
            clamped = consumed - stored > slack;
            consumed = stored;
        }
        let power = consumed / length;
        let residual = stored - consumed;
        let harvested = match packets.get(i) {
            Some(p) => ChargeCurve::new(p.length, circuit)?.harvested(residual),
            None => 0.0,
        };
        throughput += rate.bits(power, length);
        powers.push(power);
        epochs.push(EpochRecord {
            residual,
            harvested,
            consumed,
            clamped,
        });
        stored = residual + harvested;
    }

    Ok(ReplayOutcome {
        trace: HarvestTrace {
            initial_energy: scenario.initial_energy(),
            epochs,
        },
        powers,
        throughput,
    })
}

/// Parameters of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub circuit: ChargeCircuit,
    #[serde(default)]
    pub link: ChannelLink,
    #[serde(default)]
    pub rate_model: RateModel,
    /// Energy stored at time zero, joules.
    pub initial_energy: f64,
    /// Number of packets `N` per scenario.
    pub packets: usize,
    /// Mean epoch length, seconds.
    pub mean_epoch: f64,
    /// Mean classic harvest per packet, joules.
    pub mean_harvest: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cold-start prediction for the online policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PredictorPriors>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_runs() -> usize {
    30
}

fn default_attempts() -> usize {
    100
}

/// Packet-scale multipliers of the reference sweep: mean packet lengths
/// from about `1e-4` to `1e-1` time constants.
pub const REFERENCE_PACKET_SCALES: [f64; 8] = [1.0, 3.0, 10.0, 20.0, 30.0, 100.0, 300.0, 1000.0];

/// Capacitances of the reference sweep, farads.
pub const REFERENCE_CAPACITANCES: [f64; 6] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

impl ExperimentConfig {
    /// The reference experiment: a 4 kOhm / 50 mF circuit charged towards
    /// 2.5 V, link-budget rate, 1000 packets delivering 0.1 mW on average,
    /// a quarter-full start and 30 runs. Packet scale 1 gives packets of
    /// about `1.4e-4` time constants.
    pub fn reference() -> Self {
        let circuit = ChargeCircuit::new(4000.0, 0.05, 2.5).expect("valid reference circuit");
        let mean_harvest = 7.8e-6;
        ExperimentConfig {
            circuit,
            link: ChannelLink::default(),
            rate_model: RateModel::LinkBudget,
            initial_energy: 0.25 * circuit.e_max(),
            packets: 1000,
            mean_epoch: mean_harvest / 1e-4,
            mean_harvest,
            runs: default_runs(),
            seed: 1,
            priors: None,
            max_attempts: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return domain("runs must be at least 1");
        }
        if self.max_attempts == 0 {
            return domain("max_attempts must be at least 1");
        }
        for (name, v) in [
            ("mean_epoch", self.mean_epoch),
            ("mean_harvest", self.mean_harvest),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be finite and positive, got {v}"));
            }
        }
        let cap = FULL_CHARGE_FRACTION * self.circuit.e_max();
        if !(self.initial_energy >= 0.0 && self.initial_energy <= cap) {
            return domain(format!(
                "initial_energy {} J outside [0, {cap}] J",
                self.initial_energy
            ));
        }
        Ok(())
    }

    pub fn rate_function(&self) -> RateFunction {
        RateFunction::new(self.rate_model, &self.link)
    }

    /// Configured priors, or the mean epoch with a packet that would
    /// deliver the mean harvest from a quarter-full store.
    pub fn online_policy(&self) -> OnlinePolicy {
        let priors = self.priors.unwrap_or_else(|| PredictorPriors {
            mean_length: packet_length_for(
                0.25 * self.circuit.e_max(),
                self.mean_harvest,
                &self.circuit,
            )
            .unwrap_or(0.0),
            mean_gap: self.mean_epoch,
        });
        OnlinePolicy { priors }
    }
}

/// A generated scenario with the classic tunnel it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub scenario: EnergyScenario,
    /// `(E^h_i)'`: the harvest the classic model assumes for packet `i`.
    pub classic_harvests: Vec<f64>,
    /// `(E^r_i)'`: residual before packet `i` along the tight string.
    pub classic_residuals: Vec<f64>,
    pub attempts: usize,
}

impl GeneratedScenario {
    pub fn tunnel(&self, circuit: &ChargeCircuit) -> Result<ClassicTunnel> {
        ClassicTunnel::for_scenario(&self.scenario, &self.classic_harvests, circuit)
    }
}

/// Independent RNG stream for one run.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Uniform draw with the configured mean and standard deviation
/// `SPREAD * mean`: the support is `mean (1 +- sqrt(3) SPREAD)`.
fn spread_draw(rng: &mut impl Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen_range(-1.0..=1.0);
    mean * (1.0 + 3f64.sqrt() * SPREAD * u)
}

/// Draws a classic tunnel and converts it into a packet scenario.
pub fn generate_scenario(
    config: &ExperimentConfig,
    rng: &mut impl Rng,
) -> Result<GeneratedScenario> {
    config.validate()?;
    let mut last_reason = String::new();
    for attempt in 1..=config.max_attempts {
        let lengths: Vec<f64> = (0..=config.packets)
            .map(|_| spread_draw(rng, config.mean_epoch))
            .collect();
        let harvests: Vec<f64> = (0..config.packets)
            .map(|_| spread_draw(rng, config.mean_harvest))
            .collect();
        match build_scenario(config, &lengths, &harvests) {
            Ok((scenario, classic_residuals)) => {
                return Ok(GeneratedScenario {
                    scenario,
                    classic_harvests: harvests,
                    classic_residuals,
                    attempts: attempt,
                })
            }
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::Generation {
        seed: config.seed,
        run: 0,
        attempts: config.max_attempts,
        reason: last_reason,
    })
}

/// Scenario for given epoch lengths and classic harvests.
pub fn build_scenario(
    config: &ExperimentConfig,
    epoch_lengths: &[f64],
    classic_harvests: &[f64],
) -> Result<(EnergyScenario, Vec<f64>)> {
    let circuit = &config.circuit;
    let mut t = 0.0;
    let mut times = Vec::with_capacity(epoch_lengths.len());
    for l in epoch_lengths {
        t += l;
        times.push(t);
    }
    let deadline = times
        .pop()
        .ok_or_else(|| Error::InvalidScenario("no epochs".into()))?;
    let tunnel = ClassicTunnel::new(
        config.initial_energy,
        times.clone(),
        classic_harvests.to_vec(),
        deadline,
        FULL_CHARGE_FRACTION * circuit.e_max(),
    )?;
    let string = tight_string_vertices(&tunnel);
    let mut residuals = Vec::with_capacity(times.len());
    let mut packets = Vec::with_capacity(times.len());
    for (i, (&t, &e)) in times.iter().zip(classic_harvests).enumerate() {
        let residual = (tunnel.upper(i) - string_value(&string, t)).clamp(0.0, circuit.e_max());
        let length = packet_length_for(residual, e, circuit)?;
        residuals.push(residual);
        packets.push(EnergyPacket { arrival: t, length });
    }
    let scenario = EnergyScenario::new(config.initial_energy, packets, deadline)?;
    Ok((scenario, residuals))
}

/// Policies compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Zero,
    Optimal,
    MaxHarvest,
    TightString,
    Online,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Zero,
        Strategy::Optimal,
        Strategy::MaxHarvest,
        Strategy::TightString,
        Strategy::Online,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Zero => "zero",
            Strategy::Optimal => "optimal",
            Strategy::MaxHarvest => "max_harvest",
            Strategy::TightString => "tight_string",
            Strategy::Online => "online",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map_or_else(|| domain(format!("unknown strategy {s:?}")), Ok)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Schedule (or policy) of `strategy` replayed on `scenario`.
///
/// The tight string needs the classic harvests the scenario was built from.
pub fn evaluate(
    strategy: Strategy,
    scenario: &EnergyScenario,
    classic_harvests: Option<&[f64]>,
    circuit: &ChargeCircuit,
    config: &ExperimentConfig,
) -> Result<ReplayOutcome> {
    let rate = config.rate_function();
    let schedule = match strategy {
        Strategy::Zero => TransmissionSchedule::zero(scenario),
        Strategy::Optimal => {
            solve_for_rate(scenario, circuit, &rate, &SolveOptions::default())?.schedule
        }
        Strategy::MaxHarvest => max_harvest_schedule(scenario, circuit)?,
        Strategy::TightString => {
            let harvests = classic_harvests.ok_or_else(|| {
                Error::Domain("tight_string needs the classic harvest sequence".into())
            })?;
            tight_string_schedule(&ClassicTunnel::for_scenario(scenario, harvests, circuit)?)?
        }
        Strategy::Online => {
            let policy = config.online_policy();
            return replay(Policy::Online(&policy), scenario, circuit, &rate);
        }
    };
    replay(Policy::Schedule(&schedule), scenario, circuit, &rate)
}

/// Sweep axis of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Multiplies both the mean harvest and the mean epoch, so packets get
    /// longer while the energy arriving per second stays constant.
    PacketScale(Vec<f64>),
    /// Capacitances, farads. Every run keeps its seeded epoch lengths and
    /// classic harvests; packet lengths are recomputed for each circuit.
    Capacitance(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PacketScale(_) => "packet_scale",
            SweepAxis::Capacitance(_) => "capacitance",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::PacketScale(v) | SweepAxis::Capacitance(v) => v,
        }
    }
}

/// Aggregate of one strategy at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub strategy: Strategy,
    pub runs: usize,
    /// Mean over runs of `T^e / tau` averaged over the packets of a run.
    pub mean_packet_ratio: f64,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    /// Mean of throughput divided by the deadline.
    pub mean_rate: f64,
    pub mean_harvested: f64,
    pub std_harvested: f64,
    pub clamped_runs: usize,
}

struct RunResult {
    packet_ratio: f64,
    per_strategy: Vec<(f64, f64, f64, bool)>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_point(config: &ExperimentConfig, strategies: &[Strategy]) -> Result<Vec<RunResult>> {
    (0..config.runs as u64)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(config.seed, run);
            let generated = generate_scenario(config, &mut rng).map_err(|e| match e {
                Error::Generation {
                    seed,
                    attempts,
                    reason,
                    ..
                } => Error::Generation {
                    seed,
                    run,
                    attempts,
                    reason,
                },
                other => other,
            })?;
            let scenario = &generated.scenario;
            let packet_ratio = if scenario.packet_count() == 0 {
                0.0
            } else {
                scenario.packets().iter().map(|p| p.length).sum::<f64>()
                    / scenario.packet_count() as f64
                    / config.circuit.tau()
            };
            let per_strategy = strategies
                .iter()
                .map(|&s| {
                    let out = evaluate(
                        s,
                        scenario,
                        Some(&generated.classic_harvests),
                        &config.circuit,
                        config,
                    )?;
                    Ok((
                        out.throughput,
                        out.throughput / scenario.deadline(),
                        out.trace.total_harvested(),
                        out.trace.any_clamped(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RunResult {
                packet_ratio,
                per_strategy,
            })
        })
        .collect()
}

/// Runs every strategy on `config.runs` generated scenarios per sweep point.
///
/// Runs execute in parallel, each with its own RNG stream derived from the
/// seed and the run index; results are reduced in run order, so the table
/// does not depend on scheduling.
pub fn monte_carlo(
    config: &ExperimentConfig,
    axis: &SweepAxis,
    strategies: &[Strategy],
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &value in axis.values() {
        let point = match axis {
            SweepAxis::PacketScale(_) => {
                if !(value.is_finite() && value > 0.0) {
                    return domain(format!("packet scale must be positive, got {value}"));
                }
                let mut c = config.clone();
                c.mean_epoch *= value;
                c.mean_harvest *= value;
                if let Some(p) = c.priors.as_mut() {
                    p.mean_gap *= value;
                }
                c
            }
            SweepAxis::Capacitance(_) => {
                // Same seeded epochs and classic harvests; packet lengths
                // follow from the swept circuit.
                let mut c = config.clone();
                c.circuit = config.circuit.with_capacitance(value)?;
                c
            }
        };
        let results = run_point(&point, strategies)?;
        let packet_ratio =
            results.iter().map(|r| r.packet_ratio).sum::<f64>() / results.len() as f64;
        for (k, &strategy) in strategies.iter().enumerate() {
            let column = |f: fn(&(f64, f64, f64, bool)) -> f64| {
                results.iter().map(move |r| f(&r.per_strategy[k]))
            };
            let (mean_throughput, std_throughput) = mean_std(column(|x| x.0));
            let (mean_rate, _) = mean_std(column(|x| x.1));
            let (mean_harvested, std_harvested) = mean_std(column(|x| x.2));
            rows.push(SweepRow {
                axis: axis.name().to_string(),
                value,
                strategy,
                runs: results.len(),
                mean_packet_ratio: packet_ratio,
                mean_throughput,
                std_throughput,
                mean_rate,
                mean_harvested,
                std_harvested,
                clamped_runs: results.iter().filter(|r| r.per_strategy[k].3).count(),
            });
        }
    }
    Ok(rows)
}

/// A change to one future epoch and the packet that closes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Seconds added to the length of the perturbed epoch. Later arrivals
    /// and the deadline shift with it.
    pub delta_epoch: f64,
    /// Seconds added to the length of the packet closing that epoch.
    pub delta_packet: f64,
}

/// Relative change `|p'_i - p_i| / p_i` of the optimal power in epoch
/// `current` (1-based) when epoch `current + d` is perturbed.
pub fn future_impact_probe(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    rate: &RateFunction,
    current: usize,
    d: usize,
    perturbation: Perturbation,
) -> Result<f64> {
    let n = scenario.packet_count();
    let target = current + d;
    if current == 0 || d == 0 || target > n + 1 {
        return domain(format!(
            "epoch {current} + {d} outside the {} epochs of the scenario",
            n + 1
        ));
    }
    if target == n + 1 && perturbation.delta_packet != 0.0 {
        return domain("the final epoch has no packet to perturb");
    }
    let mut packets = scenario.packets().to_vec();
    for p in packets.iter_mut().skip(target - 1) {
        p.arrival += perturbation.delta_epoch;
    }
    if let Some(p) = packets.get_mut(target - 1) {
        p.length += perturbation.delta_packet;
    }
    let perturbed = EnergyScenario::new(
        scenario.initial_energy(),
        packets,
        scenario.deadline() + perturbation.delta_epoch,
    )
    .map_err(|e| Error::Domain(format!("perturbation makes the scenario invalid: {e}")))?;

    let options = SolveOptions::default();
    let before = solve_for_rate(scenario, circuit, rate, &options)?;
    let after = solve_for_rate(&perturbed, circuit, rate, &options)?;
    let p = before.schedule.powers()[current - 1];
    let q = after.schedule.powers()[current - 1];
    if !(p > 0.0) {
        return domain(format!("optimal power in epoch {current} is zero"));
    }
    Ok((q - p).abs() / p)
}
