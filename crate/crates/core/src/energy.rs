//! Battery model, charging stations, the energy CBF, and the hard energy
//! constraint row.
//!
//! The CBF is h_e = e − e_min − k_α‖x − p_c‖: the battery reserve minus a
//! linear upper bound on the energy needed to reach the robot's dedicated
//! station. The constraint row keeps h_e ≥ 0 forward invariant, so batteries
//! stay above the threshold as long as the QP is feasible.

use nalgebra::Vector2;

use crate::control::ClassKappa;
use crate::{Error, Result};

/// One robot's battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub energy: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub charging: bool,
}

impl BatteryState {
    pub fn full(e_min: f64, e_max: f64) -> Result<Self> {
        if !(e_min < e_max) {
            return Err(Error::InvalidConfig(format!(
                "battery thresholds need e_min < e_max, got {e_min} >= {e_max}"
            )));
        }
        Ok(Self { energy: e_max, e_min, e_max, charging: false })
    }
}

/// Dedicated charging spot: a robot charges while within `radius` of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargingStation {
    pub position: Vector2<f64>,
    pub radius: f64,
    pub robot: usize,
}

impl ChargingStation {
    pub fn covers(&self, p: Vector2<f64>) -> bool {
        (p - self.position).norm() <= self.radius
    }
}

/// Battery dynamics constants.
///
/// `k_alpha` converts station distance into an energy reserve; `speed_margin`
/// is the speed bound assumed by the constraint's modeled discharge, so the
/// motion drain `k_motion·‖u‖²` is covered for ‖u‖ up to that bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryRates {
    pub k_alpha: f64,
    pub k_static: f64,
    pub k_motion: f64,
    pub k_charge: f64,
    pub speed_margin: f64,
}

/// Energy CBF value and gradient over the joint (position, energy) state.
#[derive(Debug, Clone, Copy)]
pub struct EnergyEvaluation {
    pub robot: usize,
    pub value: f64,
    pub grad_position: Vector2<f64>,
    pub grad_energy: f64,
}

/// h_e = e − e_min − k_α‖x − p_c‖ with its gradients. The position gradient
/// is clamped to zero within radius/100 of the station, where the distance
/// norm is not differentiable and the constraint is slack anyway.
pub fn energy_cbf(
    i: usize,
    position: Vector2<f64>,
    battery: &BatteryState,
    station: &ChargingStation,
    k_alpha: f64,
) -> EnergyEvaluation {
    let offset = position - station.position;
    let dist = offset.norm();
    let value = battery.energy - battery.e_min - k_alpha * dist;
    let grad_position = if dist > station.radius / 100.0 {
        -k_alpha * offset / dist
    } else {
        Vector2::zeros()
    };
    EnergyEvaluation { robot: i, value, grad_position, grad_energy: 1.0 }
}

/// Hard inequality row over u_i (no slack), in `coeff·u ≤ rhs` form.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRow {
    pub robot: usize,
    pub u_coeff: Vector2<f64>,
    pub rhs: f64,
}

/// Encodes −L_f h_e − L_g h_e·u − α_e(h_e) ≤ 0. The battery drift enters L_f
/// (charge rate when charging, the bounded discharge rate otherwise); the
/// position dependence enters L_g through the single-integrator input map.
pub fn energy_constraint_row(
    eval: &EnergyEvaluation,
    charging: bool,
    rates: &BatteryRates,
    alpha_e: &ClassKappa,
) -> EnergyRow {
    let drift = if charging {
        rates.k_charge
    } else {
        -(rates.k_static + rates.k_motion * rates.speed_margin * rates.speed_margin)
    };
    EnergyRow {
        robot: eval.robot,
        u_coeff: -eval.grad_position,
        rhs: eval.grad_energy * drift + alpha_e.eval(eval.value),
    }
}

/// One Euler step of the battery: charge at `k_charge` (capped at capacity)
/// while at the station, otherwise drain statically plus quadratically in
/// speed (floored at zero).
pub fn battery_step(
    battery: &BatteryState,
    u: Vector2<f64>,
    at_station: bool,
    dt: f64,
    rates: &BatteryRates,
) -> BatteryState {
    let energy = if at_station {
        (battery.energy + rates.k_charge * dt).min(battery.e_max)
    } else {
        let drain = rates.k_static + rates.k_motion * u.norm_squared();
        (battery.energy - drain * dt).max(0.0)
    };
    BatteryState { energy, charging: at_station, ..*battery }
}
