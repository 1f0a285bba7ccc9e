//! Nonlinear charge physics of the harvesting RC circuit.
//!
//! A supercapacitor charged through a resistor from a source of fixed
//! open-circuit voltage `v_max` follows `V(t) = v_max (1 - e^{-t/tau})`. An
//! energy packet of duration `T` therefore delivers an amount of energy that
//! depends on the energy already stored when the packet arrives. All
//! quantities are SI: joules, seconds, ohms, farads, volts.
//!
//! With `k = e^{-T/tau}`, `m = sqrt(e_max)` and `s = sqrt(E_r)`, the stored
//! energy after the packet is `(m - (m - s) k)^2`, which gives
//!
//! ```text
//! E_h = A1 A2^2 + A1 A3 sqrt(E_r) + A1 A4 E_r
//!     = (m - s)(1 - k)((1 - k) m + (1 + k) s)
//! ```
//!
//! The factored form is what [`harvested_energy`] evaluates: every factor is
//! non-negative, so the result never goes below zero through cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::precision::Real;

/// Packet lengths beyond this many time constants are reported as
/// unreachable by [`packet_length_for`].
pub const MAX_CHARGE_TIME_CONSTANTS: f64 = 50.0;

/// Physical parameters of the RC charging circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitParams", into = "CircuitParams")]
pub struct ChargeCircuit {
    resistance: f64,
    capacitance: f64,
    v_max: f64,
    tau: f64,
    e_max: f64,
}

#[derive(Serialize, Deserialize)]
struct CircuitParams {
    resistance: f64,
    capacitance: f64,
    v_max: f64,
}

impl TryFrom<CircuitParams> for ChargeCircuit {
    type Error = Error;

    fn try_from(p: CircuitParams) -> Result<Self> {
        ChargeCircuit::new(p.resistance, p.capacitance, p.v_max)
    }
}

impl From<ChargeCircuit> for CircuitParams {
    fn from(c: ChargeCircuit) -> Self {
        CircuitParams {
            resistance: c.resistance,
            capacitance: c.capacitance,
            v_max: c.v_max,
        }
    }
}

impl ChargeCircuit {
    pub fn new(resistance: f64, capacitance: f64, v_max: f64) -> Result<Self> {
        for (name, value) in [
            ("resistance", resistance),
            ("capacitance", capacitance),
            ("v_max", v_max),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return domain(format!("{name} must be finite and positive, got {value}"));
            }
        }
        Ok(ChargeCircuit {
            resistance,
            capacitance,
            v_max,
            tau: resistance * capacitance,
            e_max: 0.5 * capacitance * v_max * v_max,
        })
    }

    pub fn resistance(&self) -> f64 {
        self.resistance
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// RC time constant in seconds.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Highest storable energy, `C v_max^2 / 2`.
    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    /// Same circuit with a different capacitance.
    pub fn with_capacitance(&self, capacitance: f64) -> Result<Self> {
        ChargeCircuit::new(self.resistance, capacitance, self.v_max)
    }

    /// Circuit whose energies are those of `self` multiplied by `gain`.
    ///
    /// The harvest law is homogeneous of degree one in energy, so scaling
    /// `v_max` by `sqrt(gain)` at fixed `tau` rescales every energy exactly.
    pub fn scaled_energy(&self, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return domain(format!(
                "energy gain must be finite and positive, got {gain}"
            ));
        }
        ChargeCircuit::new(self.resistance, self.capacitance, self.v_max * gain.sqrt())
    }
}

/// The four coefficients of the harvest law for one packet length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl HarvestCoefficients {
    /// Harvest evaluated term by term from the coefficients.
    pub fn harvested(&self, residual: f64) -> f64 {
        self.a1 * self.a2 * self.a2
            + self.a1 * self.a3 * residual.sqrt()
            + self.a1 * self.a4 * residual
    }
}

fn check_length(packet_length: f64) -> Result<()> {
    if !(packet_length.is_finite() && packet_length >= 0.0) {
        return domain(format!(
            "packet length must be finite and non-negative, got {packet_length}"
        ));
    }
    Ok(())
}

fn check_residual(residual: f64, circuit: &ChargeCircuit) -> Result<()> {
    if !(residual >= 0.0 && residual <= circuit.e_max) {
        return domain(format!(
            "residual energy {residual} J outside [0, {}] J",
            circuit.e_max
        ));
    }
    Ok(())
}

pub fn harvest_coefficients(
    packet_length: f64,
    circuit: &ChargeCircuit,
) -> Result<HarvestCoefficients> {
    check_length(packet_length)?;
    let x = packet_length / circuit.tau;
    let a2 = (2.0 * circuit.e_max).sqrt() * x.exp_m1();
    Ok(HarvestCoefficients {
        a1: 0.5 * (-2.0 * x).exp(),
        a2,
        a3: 2f64.powf(1.5) * a2,
        a4: -2.0 * (2.0 * x).exp_m1(),
    })
}

/// Precomputed charge curve for one packet length.
///
/// The scheduler evaluates the same packet thousands of times while
/// scanning for roots, so the exponentials are taken once here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeCurve {
    e_max: f64,
    sqrt_e_max: f64,
    decay: f64,
    one_minus_decay: f64,
    optimal_residual: f64,
}

impl ChargeCurve {
    pub fn new(packet_length: f64, circuit: &ChargeCircuit) -> Result<Self> {
        check_length(packet_length)?;
        let x = packet_length / circuit.tau;
        let growth = x.exp();
        Ok(ChargeCurve {
            e_max: circuit.e_max,
            sqrt_e_max: circuit.e_max.sqrt(),
            decay: (-x).exp(),
            one_minus_decay: -(-x).exp_m1(),
            optimal_residual: circuit.e_max / ((1.0 + growth) * (1.0 + growth)),
        })
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    /// Energy absorbed from the packet when `residual` joules are stored.
    /// The residual is clamped into `[0, e_max]`.
    pub fn harvested(&self, residual: f64) -> f64 {
        let s = residual.clamp(0.0, self.e_max).sqrt().min(self.sqrt_e_max);
        let m = self.sqrt_e_max;
        let q = self.one_minus_decay;
        (m - s) * q * (q * m + (1.0 + self.decay) * s)
    }

    /// `dE_h / dE_r`; unbounded as the residual approaches zero.
    pub fn sensitivity(&self, residual: f64) -> f64 {
        let k = self.decay;
        self.one_minus_decay * (k * (self.sqrt_e_max / residual.sqrt()) - (1.0 + k))
    }

    /// [`harvested`](Self::harvested) in any precision; the residual must
    /// already lie in `[0, e_max]`.
    pub(crate) fn harvested_in<T: Real>(&self, residual: T) -> T {
        let m = T::from(self.sqrt_e_max);
        let mut s = residual.sqrt();
        if (s - m).lead() > 0.0 {
            s = m;
        }
        let q = T::from(self.one_minus_decay);
        (m - s) * q * (q * m + T::from(1.0 + self.decay) * s)
    }

    /// [`sensitivity`](Self::sensitivity) in any precision.
    pub(crate) fn sensitivity_in<T: Real>(&self, residual: T) -> T {
        let k = self.decay;
        T::from(self.one_minus_decay)
            * (T::from(k * self.sqrt_e_max).over(residual.sqrt()) - T::from(1.0 + k))
    }

    /// Second derivative `d^2E_h / dE_r^2`, always non-positive.
    pub(crate) fn sensitivity_slope(&self, residual: f64) -> f64 {
        -0.5 * self.one_minus_decay * self.decay * self.sqrt_e_max / (residual * residual.sqrt())
    }

    /// Residual that maximizes the harvest from this packet.
    pub fn optimal_residual(&self) -> f64 {
        self.optimal_residual
    }
}

/// Energy harvested from a packet of `packet_length` seconds when `residual`
/// joules are already stored.
pub fn harvested_energy(residual: f64, packet_length: f64, circuit: &ChargeCircuit) -> Result<f64> {
    check_residual(residual, circuit)?;
    Ok(ChargeCurve::new(packet_length, circuit)?.harvested(residual))
}

/// Residual energy that maximizes the harvest, `e_max / (1 + e^{T/tau})^2`.
pub fn optimal_residual(packet_length: f64, circuit: &ChargeCircuit) -> Result<f64> {
    Ok(ChargeCurve::new(packet_length, circuit)?.optimal_residual())
}

/// Derivative of the harvested energy with respect to the residual energy.
///
/// Zero at [`optimal_residual`], positive below it and negative above it.
/// Singular at an empty capacitor, so `residual` must be strictly positive.
pub fn harvest_sensitivity(
    residual: f64,
    packet_length: f64,
    circuit: &ChargeCircuit,
) -> Result<f64> {
    if !(residual > 0.0) {
        return domain(format!(
            "harvest sensitivity is singular at residual {residual} J (needs > 0)"
        ));
    }
    check_residual(residual, circuit)?;
    Ok(ChargeCurve::new(packet_length, circuit)?.sensitivity(residual))
}

/// Packet length needed to harvest `harvested` joules starting from
/// `residual_before` joules: the inverse of [`harvested_energy`] in its
/// second argument.
pub fn packet_length_for(
    residual_before: f64,
    harvested: f64,
    circuit: &ChargeCircuit,
) -> Result<f64> {
    check_residual(residual_before, circuit)?;
    if !(harvested.is_finite() && harvested >= 0.0) {
        return domain(format!(
            "harvested energy must be non-negative, got {harvested}"
        ));
    }
    if residual_before + harvested >= circuit.e_max {
        return Err(Error::Infeasible(format!(
            "charging from {residual_before} J by {harvested} J reaches e_max = {} J only after infinite time",
            circuit.e_max
        )));
    }
    if harvested == 0.0 {
        return Ok(0.0);
    }
    let m = circuit.e_max.sqrt();
    let s_before = residual_before.sqrt();
    let s_after = (residual_before + harvested).sqrt();
    let rise = harvested / (s_after + s_before);
    let length = circuit.tau * (rise / (m - s_after)).ln_1p();
    if !(length <= MAX_CHARGE_TIME_CONSTANTS * circuit.tau) {
        return Err(Error::Infeasible(format!(
            "harvesting {harvested} J from {residual_before} J needs more than {MAX_CHARGE_TIME_CONSTANTS} time constants"
        )));
    }
    Ok(length)
}
