//! Offline throughput-optimal scheduling under residual-energy feedback.
//!
//! Epoch `i` (1-based) spans `[t_{i-1}, t_i)` with `t_0 = 0` and
//! `t_{N+1}` the deadline; packet `i` arrives at `t_i`, the end of epoch `i`.
//! Power is constant within an epoch.
//!
//! With every battery constraint slack except the final depletion, the
//! stationarity conditions chain consecutive powers through the harvest
//! sensitivity `X_m = dE_h/dE_r` at arrival `m`:
//!
//! ```text
//! 1 + p_{m+1} = (1 + p_m)(1 + X_m)
//! ```
//!
//! Fixing the residual `E_r(1)` at the first arrival therefore determines the
//! whole schedule. [`terminal_residual`] maps that single unknown to the
//! energy left at the deadline; its roots are the KKT candidates, and
//! [`solve`] keeps the feasible candidate with the highest throughput.
//!
//! Powers here are in normalized SNR units (rate `log2(1 + p)`). Callers
//! with a link gain rescale energies first, see
//! [`ChargeCircuit::scaled_energy`].

use std::fmt;

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::charge_model::{ChargeCircuit, ChargeCurve};
use crate::error::{domain, Error, Result};
use crate::precision::Real;
use crate::simultaneous;

/// One incoming energy packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPacket {
    /// Arrival instant, seconds.
    pub arrival: f64,
    /// Charging duration, seconds.
    pub length: f64,
}

/// Initial energy, the ordered packet arrivals and the deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioParams", into = "ScenarioParams")]
pub struct EnergyScenario {
    initial_energy: f64,
    packets: Vec<EnergyPacket>,
    deadline: f64,
}

#[derive(Serialize, Deserialize)]
struct ScenarioParams {
    initial_energy: f64,
    #[serde(default)]
    packets: Vec<EnergyPacket>,
    deadline: f64,
}

impl TryFrom<ScenarioParams> for EnergyScenario {
    type Error = Error;

    fn try_from(p: ScenarioParams) -> Result<Self> {
        EnergyScenario::new(p.initial_energy, p.packets, p.deadline)
    }
}

impl From<EnergyScenario> for ScenarioParams {
    fn from(s: EnergyScenario) -> Self {
        ScenarioParams {
            initial_energy: s.initial_energy,
            packets: s.packets,
            deadline: s.deadline,
        }
    }
}

impl EnergyScenario {
    pub fn new(initial_energy: f64, packets: Vec<EnergyPacket>, deadline: f64) -> Result<Self> {
        if !(initial_energy.is_finite() && initial_energy >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "initial energy must be non-negative, got {initial_energy}"
            )));
        }
        if !deadline.is_finite() {
            return Err(Error::InvalidScenario("deadline must be finite".into()));
        }
        let mut previous = 0.0;
        for (i, p) in packets.iter().enumerate() {
            if !(p.length.is_finite() && p.length >= 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "packet {} has invalid length {}",
                    i + 1,
                    p.length
                )));
            }
            if !(p.arrival.is_finite() && p.arrival > previous) {
                return Err(Error::InvalidScenario(format!(
                    "epoch {} has non-positive length (arrival {} after {previous})",
                    i + 1,
                    p.arrival
                )));
            }
            previous = p.arrival;
        }
        if !(deadline > previous) {
            return Err(Error::InvalidScenario(format!(
                "final epoch has non-positive length (deadline {deadline} after {previous})"
            )));
        }
        Ok(EnergyScenario {
            initial_energy,
            packets,
            deadline,
        })
    }

    /// Checks the scenario against the storage limit of `circuit`.
    pub fn validate_for(&self, circuit: &ChargeCircuit) -> Result<()> {
        if self.initial_energy > circuit.e_max() {
            return Err(Error::InvalidScenario(format!(
                "initial energy {} J exceeds e_max = {} J",
                self.initial_energy,
                circuit.e_max()
            )));
        }
        Ok(())
    }

    pub fn initial_energy(&self) -> f64 {
        self.initial_energy
    }

    pub fn packets(&self) -> &[EnergyPacket] {
        &self.packets
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// Number of packets, `N`.
    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    /// Number of epochs, `N + 1`.
    pub fn epoch_count(&self) -> usize {
        self.packets.len() + 1
    }

    /// `t_0 = 0, t_1, ..., t_N, t_{N+1} = deadline`.
    pub fn epoch_bounds(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.packets.iter().map(|p| p.arrival))
            .chain(std::iter::once(self.deadline))
            .collect()
    }

    pub fn epoch_lengths(&self) -> Vec<f64> {
        self.epoch_bounds()
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }

    /// Scenario starting at the first arrival with `initial_energy` stored,
    /// dropping the first epoch and packet.
    pub(crate) fn after_first_arrival(&self, initial_energy: f64) -> Result<Self> {
        let origin = self.packets[0].arrival;
        let packets = self.packets[1..]
            .iter()
            .map(|p| EnergyPacket {
                arrival: p.arrival - origin,
                length: p.length,
            })
            .collect();
        EnergyScenario::new(initial_energy, packets, self.deadline - origin)
    }
}

/// Piecewise-constant transmit power over the epochs of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSchedule {
    powers: Vec<f64>,
    epoch_bounds: Vec<f64>,
}

impl TransmissionSchedule {
    pub fn new(powers: Vec<f64>, epoch_bounds: Vec<f64>) -> Result<Self> {
        if epoch_bounds.len() != powers.len() + 1 {
            return domain(format!(
                "{} powers need {} epoch bounds, got {}",
                powers.len(),
                powers.len() + 1,
                epoch_bounds.len()
            ));
        }
        if let Some((i, p)) = powers
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return domain(format!(
                "power {p} in epoch {} is negative or not finite",
                i + 1
            ));
        }
        if epoch_bounds.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("epoch bounds must be strictly increasing");
        }
        Ok(TransmissionSchedule {
            powers,
            epoch_bounds,
        })
    }

    /// Constant-zero schedule over the epochs of `scenario`.
    pub fn zero(scenario: &EnergyScenario) -> Self {
        TransmissionSchedule {
            powers: vec![0.0; scenario.epoch_count()],
            epoch_bounds: scenario.epoch_bounds(),
        }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn epoch_bounds(&self) -> &[f64] {
        &self.epoch_bounds
    }

    pub fn epoch_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.epoch_bounds.windows(2).map(|w| w[1] - w[0])
    }

    pub fn epoch_count(&self) -> usize {
        self.powers.len()
    }
}

/// Energy bookkeeping for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Energy stored at the end of the epoch, before the arriving packet.
    pub residual: f64,
    /// Energy absorbed from the packet closing the epoch (zero for the last).
    pub harvested: f64,
    /// Energy spent transmitting during the epoch.
    pub consumed: f64,
    /// The requested power exceeded the stored energy and was cut back.
    pub clamped: bool,
}

/// Per-epoch history of the feedback loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestTrace {
    pub initial_energy: f64,
    pub epochs: Vec<EpochRecord>,
}

impl HarvestTrace {
    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.epochs.iter().map(|e| e.residual)
    }

    pub fn total_harvested(&self) -> f64 {
        self.epochs.iter().map(|e| e.harvested).sum()
    }

    pub fn total_consumed(&self) -> f64 {
        self.epochs.iter().map(|e| e.consumed).sum()
    }

    pub fn terminal_residual(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_energy, |e| e.residual)
    }

    pub fn any_clamped(&self) -> bool {
        self.epochs.iter().any(|e| e.clamped)
    }

    /// Largest deviation from `E_r(i+1) = E_r(i) + E_h(i) - consumed(i+1)`.
    pub fn conservation_error(&self) -> f64 {
        let mut stored = self.initial_energy;
        let mut worst: f64 = 0.0;
        for e in &self.epochs {
            worst = worst.max((stored - e.consumed - e.residual).abs());
            stored = e.residual + e.harvested;
        }
        worst
    }
}

/// Schedule and trace produced by the stationarity recursion for one value
/// of the first-arrival residual. Powers may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub first_residual: f64,
    pub powers: Vec<f64>,
    /// The recursion's unprojected powers `v_m`; equal to `powers` unless
    /// the propagation projects onto non-negative powers.
    pub stationary_powers: Vec<f64>,
    pub epoch_bounds: Vec<f64>,
    pub trace: HarvestTrace,
    /// 1-based arrival at which the residual dropped to zero or below,
    /// making the harvest sensitivity undefined. Propagation stops there.
    pub infeasible_from: Option<usize>,
}

impl Propagation {
    /// The terminal residual `J(E_r(1))`, or `-inf` if the recursion broke
    /// down before the deadline.
    pub fn terminal_residual(&self) -> f64 {
        match self.infeasible_from {
            Some(_) => f64::NEG_INFINITY,
            None => self.trace.terminal_residual(),
        }
    }

    /// Spends whatever is left at the deadline in the final epoch, or gives
    /// back an overspend, and returns the energy added.
    fn drain_leftover(&mut self) -> f64 {
        if self.infeasible_from.is_some() {
            return 0.0;
        }
        let (Some(last), Some(power), Some(w)) = (
            self.trace.epochs.last_mut(),
            self.powers.last_mut(),
            self.epoch_bounds.windows(2).last(),
        ) else {
            return 0.0;
        };
        let leftover = last.residual;
        last.consumed += leftover;
        last.residual -= leftover;
        *power += leftover / (w[1] - w[0]);
        leftover
    }

    pub fn to_schedule(&self) -> Result<TransmissionSchedule> {
        if let Some(k) = self.infeasible_from {
            return Err(Error::Infeasible(format!(
                "propagation breaks down at arrival {k}"
            )));
        }
        TransmissionSchedule::new(self.powers.clone(), self.epoch_bounds.clone())
    }
}

/// Scenario with its charge curves evaluated once.
struct Recursion<'a> {
    scenario: &'a EnergyScenario,
    curves: Vec<ChargeCurve>,
    lengths: Vec<f64>,
    bounds: Vec<f64>,
}

impl<'a> Recursion<'a> {
    fn new(scenario: &'a EnergyScenario, circuit: &ChargeCircuit) -> Result<Self> {
        scenario.validate_for(circuit)?;
        let curves = scenario
            .packets()
            .iter()
            .map(|p| ChargeCurve::new(p.length, circuit))
            .collect::<Result<Vec<_>>>()?;
        Ok(Recursion {
            scenario,
            curves,
            lengths: scenario.epoch_lengths(),
            bounds: scenario.epoch_bounds(),
        })
    }

    fn run<T: Real>(&self, start: Start<T>) -> Propagation {
        let n = self.curves.len();
        let e0 = self.scenario.initial_energy();
        let mut epochs = Vec::with_capacity(n + 1);
        let mut powers = Vec::with_capacity(n + 1);
        let mut stationary = Vec::with_capacity(n + 1);
        let mut infeasible_from = None;

        let (mut v, consumed) = start.first_epoch(e0, self.lengths[0]);
        let mut residual = T::from(e0) - consumed;
        let first_residual = residual.to_f64();
        stationary.push(v.to_f64());
        powers.push(consumed.to_f64() / self.lengths[0]);
        epochs.push(EpochRecord {
            residual: first_residual,
            harvested: 0.0,
            consumed: consumed.to_f64(),
            clamped: false,
        });

        for m in 0..n {
            if !residual.is_positive_finite() {
                infeasible_from = Some(m + 1);
                break;
            }
            let curve = &self.curves[m];
            let harvested = curve.harvested_in(residual);
            epochs[m].harvested = harvested.to_f64();

            v = (T::from(1.0) + v) * (T::from(1.0) + curve.sensitivity_in(residual)) - T::from(1.0);
            let power = start.project(v);
            let consumed = power * T::from(self.lengths[m + 1]);
            residual = residual + harvested - consumed;
            stationary.push(v.to_f64());
            powers.push(power.to_f64());
            epochs.push(EpochRecord {
                residual: residual.to_f64(),
                harvested: 0.0,
                consumed: consumed.to_f64(),
                clamped: false,
            });
        }

        Propagation {
            first_residual,
            powers,
            stationary_powers: stationary,
            epoch_bounds: self.bounds.clone(),
            trace: HarvestTrace {
                initial_energy: e0,
                epochs,
            },
            infeasible_from,
        }
    }

    /// Trace of a fixed schedule whose final epoch spends whatever is left.
    fn follow(&self, mut powers: Vec<f64>) -> Propagation {
        let n = self.curves.len();
        let e0 = self.scenario.initial_energy();
        let mut epochs = Vec::with_capacity(n + 1);
        let mut stored = e0;
        let mut infeasible_from = None;
        for m in 0..=n {
            let consumed = if m == n {
                powers[n] = stored / self.lengths[n];
                stored
            } else {
                powers[m] * self.lengths[m]
            };
            let residual = stored - consumed;
            let harvested = match self.curves.get(m) {
                Some(curve) => {
                    if !(residual > 0.0) && infeasible_from.is_none() {
                        infeasible_from = Some(m + 1);
                    }
                    curve.harvested(residual)
                }
                None => 0.0,
            };
            epochs.push(EpochRecord {
                residual,
                harvested,
                consumed,
                clamped: false,
            });
            stored = residual + harvested;
        }
        Propagation {
            first_residual: epochs[0].residual,
            stationary_powers: powers.clone(),
            powers,
            epoch_bounds: self.bounds.clone(),
            trace: HarvestTrace {
                initial_energy: e0,
                epochs,
            },
            infeasible_from,
        }
    }

    /// Terminal residual, or `None` once a residual reaches zero.
    fn terminal<T: Real>(&self, start: Start<T>) -> Option<T> {
        // Same arithmetic as `run` without building the trace.
        let e0 = self.scenario.initial_energy();
        let (mut v, consumed) = start.first_epoch(e0, self.lengths[0]);
        let mut residual = T::from(e0) - consumed;
        for (m, curve) in self.curves.iter().enumerate() {
            if !residual.is_positive_finite() {
                return None;
            }
            let harvested = curve.harvested_in(residual);
            v = (T::from(1.0) + v) * (T::from(1.0) + curve.sensitivity_in(residual)) - T::from(1.0);
            residual = residual + harvested - start.project(v) * T::from(self.lengths[m + 1]);
        }
        // NaN when an overflowing power met a vanishing sensitivity.
        (!residual.lead().is_nan()).then_some(residual)
    }

    fn terminal_f64(&self, start: Start<f64>) -> f64 {
        self.terminal(start).unwrap_or(f64::NEG_INFINITY)
    }
}

/// How a propagation is seeded.
#[derive(Debug, Clone, Copy)]
enum Start<T> {
    /// Residual at the first arrival; powers follow the recursion as is,
    /// negative values included.
    Residual(T),
    /// Unprojected first-epoch power `v_1 > -1`; every epoch transmits at
    /// `max(0, v_m)`.
    Projected(T),
}

impl<T: Real> Start<T> {
    /// `(v_1, energy consumed in epoch 1)`.
    fn first_epoch(self, e0: f64, l1: f64) -> (T, T) {
        match self {
            Start::Residual(r) => {
                let consumed = T::from(e0) - r;
                (consumed.over(T::from(l1)), consumed)
            }
            Start::Projected(v) => (v, v.max_zero() * T::from(l1)),
        }
    }

    fn project(self, v: T) -> T {
        match self {
            Start::Residual(_) => v,
            Start::Projected(_) => v.max_zero(),
        }
    }
}

impl<T: Copy> Start<T> {
    /// Same kind of start at another point.
    fn with<U>(self, x: U) -> Start<U> {
        match self {
            Start::Residual(_) => Start::Residual(x),
            Start::Projected(_) => Start::Projected(x),
        }
    }
}

/// A shooting start for [`solve_with`].
struct Candidate {
    start: Start<TwoFloat>,
    /// Spend the leftover in the final epoch.
    drain: bool,
    /// Tie-break order, lowest first.
    rank: u8,
}

impl Candidate {
    fn root(start: Start<TwoFloat>) -> Self {
        Candidate {
            start,
            drain: false,
            rank: 0,
        }
    }

    fn fallback(start: Start<TwoFloat>, drain: bool) -> Self {
        Candidate {
            start,
            drain,
            rank: 1,
        }
    }
}

/// Runs the stationarity recursion from a chosen first-arrival residual.
pub fn propagate(
    first_residual: f64,
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
) -> Result<Propagation> {
    check_first_residual(first_residual, scenario)?;
    Ok(Recursion::new(scenario, circuit)?.run(Start::Residual(first_residual)))
}

/// Energy left at the deadline as a function of the first-arrival residual.
pub fn terminal_residual(
    first_residual: f64,
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
) -> Result<f64> {
    check_first_residual(first_residual, scenario)?;
    Ok(Recursion::new(scenario, circuit)?.terminal_f64(Start::Residual(first_residual)))
}

fn check_first_residual(first_residual: f64, scenario: &EnergyScenario) -> Result<()> {
    if !(first_residual.is_finite() && first_residual <= scenario.initial_energy()) {
        return domain(format!(
            "first residual {first_residual} J must not exceed the initial energy {} J",
            scenario.initial_energy()
        ));
    }
    Ok(())
}

/// Numerical settings for [`solve_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Largest accepted `|E_r(N+1)|` at a root, joules.
    pub tolerance: f64,
    /// Uniform samples of the terminal residual used for bracketing.
    pub scan_points: usize,
    /// Bisection stops once the bracket is narrower than this times `e_max`.
    pub bracket_width: f64,
    /// Newton polish steps after bisection.
    pub newton_steps: usize,
    /// Offset of the boundary candidates from `0` and `e_0`, times `e_max`.
    pub boundary_offset: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-10,
            scan_points: 2000,
            bracket_width: 1e-12,
            newton_steps: 10,
            boundary_offset: 1e-12,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return domain(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if self.scan_points < 2 {
            return domain("at least two scan points are needed");
        }
        Ok(())
    }
}

/// Bracketing and refinement bookkeeping for [`find_candidates`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RootSearch {
    pub roots: Vec<f64>,
    pub sign_changes: usize,
    /// Brackets that shrank to adjacent double-double numbers with the
    /// terminal residual still above tolerance: the positive endpoint of
    /// each. Each epoch amplifies a change of the first residual, so long
    /// horizons make `J` steep enough for this to happen.
    pub collapsed: Vec<f64>,
    /// Brackets whose refined point still missed the tolerance, as
    /// `(first_residual, terminal_residual)`.
    pub unresolved: Vec<(f64, f64)>,
    pub min_terminal: f64,
    pub max_terminal: f64,
    /// `roots` and `collapsed` in double-double precision.
    exact_roots: Vec<TwoFloat>,
    exact_collapsed: Vec<TwoFloat>,
}

fn negative(j: f64) -> bool {
    j < 0.0
}

impl Recursion<'_> {
    fn search(&self, options: &SolveOptions, e_max: f64) -> RootSearch {
        let mut out = RootSearch::empty();
        let e0 = self.scenario.initial_energy();
        if self.curves.is_empty() {
            // A single epoch: J is the identity, root at zero.
            out.push_root(TwoFloat::from(0.0));
            out.min_terminal = 0.0;
            out.max_terminal = e0;
            return out;
        }
        if !(e0 > 0.0) {
            return out;
        }
        let samples = options.scan_points;
        let xs = (1..=samples).map(|k| {
            if k == samples {
                e0
            } else {
                e0 * k as f64 / samples as f64
            }
        });
        self.scan_roots(
            Start::Residual(()),
            xs,
            options,
            options.bracket_width * e_max,
            &mut out,
        );
        out
    }

    /// Roots of the projected recursion over the unprojected first power
    /// `v_1`: geometric in `1 + v_1` on `(-1, 0)`, uniform on `[0, e_0/l_1]`.
    fn search_projected(&self, options: &SolveOptions) -> RootSearch {
        let mut out = RootSearch::empty();
        let e0 = self.scenario.initial_energy();
        if self.curves.is_empty() || !(e0 > 0.0) {
            return out;
        }
        let samples = options.scan_points;
        let top = e0 / self.lengths[0];
        let below = (0..samples)
            .map(|k| 10f64.powf(-PROJECTED_DECADES * (1.0 - k as f64 / samples as f64)) - 1.0);
        let above = (0..=samples).map(|k| top * k as f64 / samples as f64);
        self.scan_roots(
            Start::Projected(()),
            below.chain(above),
            options,
            options.bracket_width * top,
            &mut out,
        );
        out
    }

    /// Scans `J` in `f64` at increasing points `xs` and refines every sign
    /// change in double-double precision.
    fn scan_roots(
        &self,
        kind: Start<()>,
        xs: impl Iterator<Item = f64>,
        options: &SolveOptions,
        width: f64,
        out: &mut RootSearch,
    ) {
        let precise = |x: TwoFloat| {
            self.terminal(kind.with(x))
                .unwrap_or(TwoFloat::from(f64::NEG_INFINITY))
        };
        let mut prev: Option<(f64, f64)> = None;
        for x in xs {
            let j = self.terminal_f64(kind.with(x));
            out.min_terminal = out.min_terminal.min(j);
            out.max_terminal = out.max_terminal.max(j);
            if j == 0.0 {
                out.sign_changes += 1;
                out.push_root(TwoFloat::from(x));
            } else if let Some((px, pj)) = prev {
                if pj != 0.0 && negative(pj) != negative(j) {
                    out.sign_changes += 1;
                    let (a, b) = (TwoFloat::from(px), TwoFloat::from(x));
                    let (ja, jb) = (precise(a), precise(b));
                    if negative(ja.hi()) == negative(jb.hi()) {
                        // Rounding moved the sign change onto a scan point.
                        let (r, jr) = if ja.hi().abs() <= jb.hi().abs() {
                            (a, ja)
                        } else {
                            (b, jb)
                        };
                        if jr.hi().abs() <= options.tolerance {
                            out.push_root(r);
                        } else {
                            out.unresolved.push((r.hi(), jr.hi()));
                        }
                    } else {
                        match refine(&precise, a, ja, b, jb, options, width) {
                            Refined::Root(r) => out.push_root(r),
                            Refined::Collapsed(r) => {
                                out.collapsed.push(r.hi());
                                out.exact_collapsed.push(r);
                            }
                            Refined::Missed(r, jr) => out.unresolved.push((r.hi(), jr.hi())),
                        }
                    }
                }
            }
            prev = Some((x, j));
        }
        let mut seen: Vec<TwoFloat> = Vec::new();
        for r in std::mem::take(&mut out.exact_roots) {
            if !seen.iter().any(|s| (*s - r).hi().abs() <= width) {
                seen.push(r);
            }
        }
        out.roots = seen.iter().map(|r| r.hi()).collect();
        out.exact_roots = seen;
    }
}

/// Decades of `1 + v_1` below one covered by the projected scan.
const PROJECTED_DECADES: f64 = 12.0;

impl RootSearch {
    fn empty() -> Self {
        RootSearch {
            min_terminal: f64::INFINITY,
            max_terminal: f64::NEG_INFINITY,
            ..RootSearch::default()
        }
    }

    fn push_root(&mut self, r: TwoFloat) {
        self.roots.push(r.hi());
        self.exact_roots.push(r);
    }
}

/// Outcome of refining one bracket.
enum Refined {
    /// `|J| <= tolerance`.
    Root(TwoFloat),
    /// The bracket shrank to adjacent double-double numbers first; the
    /// endpoint with a positive terminal residual.
    Collapsed(TwoFloat),
    Missed(TwoFloat, TwoFloat),
}

/// Bisection down to `width`, secant polish, then bisection until the
/// bracket cannot shrink any further. Stopping at the first point within
/// tolerance would leave up to `tolerance` joules unspent, which is more
/// than the throughput tie margin between candidates.
fn refine(
    f: &impl Fn(TwoFloat) -> TwoFloat,
    mut a: TwoFloat,
    mut ja: TwoFloat,
    mut b: TwoFloat,
    mut jb: TwoFloat,
    options: &SolveOptions,
    width: f64,
) -> Refined {
    let half = TwoFloat::from(0.5);
    let mut polished = false;
    let step =
        |x: TwoFloat, a: &mut TwoFloat, ja: &mut TwoFloat, b: &mut TwoFloat, jb: &mut TwoFloat| {
            let jx = f(x);
            if negative(jx.hi()) == negative(ja.hi()) {
                *a = x;
                *ja = jx;
            } else {
                *b = x;
                *jb = jx;
            }
            jx.hi() == 0.0
        };
    loop {
        let mid = (a + b) * half;
        if !(mid > a && mid < b) {
            break;
        }
        if step(mid, &mut a, &mut ja, &mut b, &mut jb) {
            return Refined::Root(mid);
        }
        if !polished && (b - a).hi() <= width {
            polished = true;
            for _ in 0..options.newton_steps {
                if !(ja.hi().is_finite() && jb.hi().is_finite()) {
                    break;
                }
                let x = a - (ja * (b - a)).over(jb - ja);
                if !(x > a && x < b) {
                    break;
                }
                if step(x, &mut a, &mut ja, &mut b, &mut jb) {
                    return Refined::Root(x);
                }
            }
        }
    }
    // Prefer leaving a little energy over overspending a little; failing
    // both, report the positive side.
    let tolerance = options.tolerance;
    let ends = [(a, ja), (b, jb)];
    let within = |j: &TwoFloat| j.hi().abs() <= tolerance;
    if let Some(&(x, _)) = ends
        .iter()
        .filter(|(_, j)| within(j))
        .min_by_key(|(_, j)| negative(j.hi()))
    {
        return Refined::Root(x);
    }
    match ends
        .iter()
        .find(|(_, j)| j.hi() > 0.0 && j.hi().is_finite())
    {
        Some(&(x, _)) => Refined::Collapsed(x),
        None => Refined::Missed(a, ja),
    }
}

/// Roots of the terminal-residual equation on `(0, e_0]`.
pub fn find_candidates(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    options: &SolveOptions,
) -> Result<RootSearch> {
    options.validate()?;
    Ok(Recursion::new(scenario, circuit)?.search(options, circuit.e_max()))
}

/// Constraint checked by [`check_feasibility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// Cumulative consumption may not exceed initial plus harvested energy.
    EnergyCausality,
    /// Stored energy may not exceed `e_max`.
    BatteryCapacity,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::EnergyCausality => f.write_str("C1 (energy causality)"),
            Constraint::BatteryCapacity => f.write_str("C2 (battery capacity)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    /// First violated constraint and its 1-based epoch.
    Violated {
        constraint: Constraint,
        epoch: usize,
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }
}

/// Checks both battery constraints at every epoch boundary from cumulative
/// sums of the schedule and the harvests, with slack `1e-9 e_max`.
pub fn check_feasibility(
    schedule: &TransmissionSchedule,
    trace: &HarvestTrace,
    circuit: &ChargeCircuit,
) -> Feasibility {
    let slack = 1e-9 * circuit.e_max();
    let mut spent = 0.0;
    let mut gained = trace.initial_energy;
    for (i, ((power, length), record)) in schedule
        .powers()
        .iter()
        .zip(schedule.epoch_lengths())
        .zip(&trace.epochs)
        .enumerate()
    {
        spent += power * length;
        if spent - gained > slack {
            return Feasibility::Violated {
                constraint: Constraint::EnergyCausality,
                epoch: i + 1,
            };
        }
        gained += record.harvested;
        if i + 1 < schedule.epoch_count() && gained - spent > circuit.e_max() + slack {
            return Feasibility::Violated {
                constraint: Constraint::BatteryCapacity,
                epoch: i + 1,
            };
        }
    }
    Feasibility::Feasible
}

/// `sum_i (l_i / 2) log2(1 + p_i)` in normalized-rate units.
pub fn throughput(schedule: &TransmissionSchedule) -> Result<f64> {
    throughput_of(schedule.powers(), schedule.epoch_bounds())
}

pub(crate) fn throughput_of(powers: &[f64], bounds: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (p, w) in powers.iter().zip(bounds.windows(2)) {
        if !(*p >= 0.0) {
            return domain(format!("negative power {p}"));
        }
        total += 0.5 * (w[1] - w[0]) * p.ln_1p() / std::f64::consts::LN_2;
    }
    Ok(total)
}

/// Why a candidate was discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub first_residual: f64,
    pub reason: String,
}

/// What the solver saw when no candidate survived.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub scan_points: usize,
    pub sign_changes: usize,
    pub min_terminal: f64,
    pub max_terminal: f64,
    pub unresolved: Vec<(f64, f64)>,
    pub rejections: Vec<Rejection>,
}

impl fmt::Display for SolverDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no feasible KKT candidate ({} scan points, {} sign changes, terminal residual range [{:e}, {:e}] J",
            self.scan_points, self.sign_changes, self.min_terminal, self.max_terminal
        )?;
        for (x, j) in &self.unresolved {
            write!(f, "; unresolved bracket at E_r(1)={x:e} with J={j:e}")?;
        }
        for r in &self.rejections {
            write!(f, "; E_r(1)={:e} rejected: {}", r.first_residual, r.reason)?;
        }
        f.write_str(")")
    }
}

/// Winning schedule and how it was found.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub schedule: TransmissionSchedule,
    pub trace: HarvestTrace,
    pub throughput: f64,
    pub candidates_examined: usize,
    pub terminal_residual_error: f64,
    /// Residual at the first arrival of the winning candidate, measured in
    /// the sub-problem after any pinned epochs.
    pub first_residual: f64,
    /// Leading epochs held at zero power because nothing was stored yet.
    pub pinned_epochs: usize,
    /// Unprojected recursion powers `v_m` of the winner; the schedule is
    /// `max(0, v_m)`. Pinned leading epochs report zero.
    pub stationary_powers: Vec<f64>,
    /// Energy added to the final epoch so that nothing is left or overspent
    /// at the deadline: the leftover of a bracket that collapsed before
    /// reaching the tolerance, or minus the overspend of a root within
    /// tolerance. Zero when the root leaves a non-negative residual.
    pub final_epoch_adjustment: f64,
    pub method: SolveMethod,
}

/// Which formulation produced the winning schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Recursion from a root of the terminal-residual equation.
    Shooting,
    /// Stationarity solved jointly over all epochs; used when shooting
    /// cannot resolve the root within floating-point precision.
    Simultaneous,
}

pub fn solve(scenario: &EnergyScenario, circuit: &ChargeCircuit) -> Result<SolveReport> {
    solve_with(scenario, circuit, &SolveOptions::default())
}

pub fn solve_with(
    scenario: &EnergyScenario,
    circuit: &ChargeCircuit,
    options: &SolveOptions,
) -> Result<SolveReport> {
    options.validate()?;
    scenario.validate_for(circuit)?;

    // With an empty capacitor the first epoch cannot transmit; the rest is a
    // fresh problem starting at the first arrival.
    if scenario.initial_energy() == 0.0 && scenario.packet_count() > 0 {
        let first = scenario.packets()[0];
        let harvested = ChargeCurve::new(first.length, circuit)?.harvested(0.0);
        let rest = scenario.after_first_arrival(harvested)?;
        let mut report = solve_with(&rest, circuit, options)?;
        let mut powers = vec![0.0];
        powers.extend_from_slice(report.schedule.powers());
        report.schedule = TransmissionSchedule::new(powers, scenario.epoch_bounds())?;
        report.stationary_powers.insert(0, 0.0);
        report.trace.epochs.insert(
            0,
            EpochRecord {
                residual: 0.0,
                harvested,
                consumed: 0.0,
                clamped: false,
            },
        );
        report.trace.initial_energy = 0.0;
        report.pinned_epochs += 1;
        return Ok(report);
    }

    let recursion = Recursion::new(scenario, circuit)?;
    let search = recursion.search(options, circuit.e_max());

    let e0 = scenario.initial_energy();
    let offset = options.boundary_offset * circuit.e_max();
    let mut boundaries = Vec::new();
    if scenario.packet_count() > 0 {
        for boundary in [offset, e0 - offset] {
            if boundary > 0.0 && boundary <= e0 {
                boundaries.push(TwoFloat::from(boundary));
            }
        }
    }
    // Roots where some epochs sit at zero power; they satisfy the KKT
    // conditions once the p >= 0 bounds are included.
    let projected = recursion.search_projected(options);
    // Collapsed brackets leave a little energy at the deadline, which is
    // spent in the final epoch. Roots rank ahead of the fallbacks on ties:
    // only they satisfy the recursion exactly.
    let candidates: Vec<Candidate> = search
        .exact_roots
        .iter()
        .map(|&r| Candidate::root(Start::Residual(r)))
        .chain(
            projected
                .exact_roots
                .iter()
                .map(|&v| Candidate::root(Start::Projected(v))),
        )
        .chain(
            boundaries
                .into_iter()
                .map(|r| Candidate::fallback(Start::Residual(r), false)),
        )
        .chain(
            search
                .exact_collapsed
                .iter()
                .map(|&r| Candidate::fallback(Start::Residual(r), true)),
        )
        .chain(
            projected
                .exact_collapsed
                .iter()
                .map(|&v| Candidate::fallback(Start::Projected(v), true)),
        )
        .collect();

    // Joint solve when shooting ran out of precision somewhere.
    let ill_conditioned = !(search.collapsed.is_empty()
        && search.unresolved.is_empty()
        && projected.collapsed.is_empty()
        && projected.unresolved.is_empty());
    let joint = if ill_conditioned {
        simultaneous::optimal_powers(&recursion.curves, &recursion.lengths, e0)
    } else {
        None
    };
    let examined = candidates.len() + usize::from(joint.is_some());

    let mut best: Option<(SolveReport, u8)> = None;
    let mut rejections = Vec::new();
    let runs = candidates
        .iter()
        .map(|c| {
            let mut run = recursion.run(c.start);
            // A root within tolerance may still overspend by a hair.
            let adjustment = if c.drain || run.terminal_residual() < 0.0 {
                run.drain_leftover()
            } else {
                0.0
            };
            (Some(c.start), c.rank, run, adjustment)
        })
        .chain(joint.map(|powers| (None, 2, recursion.follow(powers), 0.0)));
    for (candidate, rank, run, adjustment) in runs {
        let reject = |reason: String| Rejection {
            first_residual: run.first_residual,
            reason: match candidate {
                Some(Start::Residual(_)) => reason,
                Some(Start::Projected(v)) => {
                    format!("{reason} (projected, v_1 = {:e})", v.to_f64())
                }
                None => format!("{reason} (simultaneous)"),
            },
        };
        if let Some(k) = run.infeasible_from {
            rejections.push(reject(format!("battery empty at arrival {k}")));
            continue;
        }
        if let Some((i, p)) = run.powers.iter().enumerate().find(|(_, p)| **p < 0.0) {
            rejections.push(reject(format!("negative power {p:e} in epoch {}", i + 1)));
            continue;
        }
        let schedule = match run.to_schedule() {
            Ok(s) => s,
            Err(e) => {
                rejections.push(reject(e.to_string()));
                continue;
            }
        };
        if let Feasibility::Violated { constraint, epoch } =
            check_feasibility(&schedule, &run.trace, circuit)
        {
            rejections.push(reject(format!("{constraint} violated in epoch {epoch}")));
            continue;
        }
        let value = throughput(&schedule)?;
        let better = match &best {
            None => true,
            Some((b, best_rank)) => {
                let tie = 1e-12 * b.throughput.abs();
                value > b.throughput + tie
                    || (value >= b.throughput - tie
                        && (rank, run.first_residual) < (*best_rank, b.first_residual))
            }
        };
        if better {
            let report = SolveReport {
                terminal_residual_error: run.trace.terminal_residual().abs(),
                schedule,
                trace: run.trace,
                throughput: value,
                candidates_examined: examined,
                first_residual: run.first_residual,
                pinned_epochs: 0,
                stationary_powers: run.stationary_powers,
                final_epoch_adjustment: adjustment,
                method: if candidate.is_some() {
                    SolveMethod::Shooting
                } else {
                    SolveMethod::Simultaneous
                },
            };
            best = Some((report, rank));
        }
    }

    best.map(|(report, _)| report).ok_or_else(|| {
        Error::SolverFailure(Box::new(SolverDiagnostics {
            scan_points: options.scan_points,
            sign_changes: search.sign_changes + projected.sign_changes,
            min_terminal: search.min_terminal,
            max_terminal: search.max_terminal,
            unresolved: search
                .unresolved
                .into_iter()
                .chain(projected.unresolved)
                .collect(),
            rejections,
        }))
    })
}
