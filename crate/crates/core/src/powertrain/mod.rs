//! Physical models of the fuel-cell hybrid powertrain.
//!
//! Everything here is a pure function of its inputs. [`PowertrainModel`]
//! bundles the three parameter records and caches the stack's maximum power
//! point so the simulator does not recompute it every step.

mod battery;
mod calibrate;
mod fuel_cell;
mod table;
mod vehicle;

use serde::{Deserialize, Serialize};

pub use battery::{
    battery_bus_power, battery_current, battery_step, BatteryParams, SocStep,
};
pub use calibrate::{
    calibrate_polarization, Calibration, CalibrationOptions, CalibrationReport,
    PolarizationAnchor,
};
pub use fuel_cell::{
    cell_voltage, fc_gross_power, fc_power_to_current, hydrogen_rate, stack_output,
    ConverterEfficiency, FuelCellParams, HydrogenMode, StackOutput, POWER_TOLERANCE,
};
pub use table::Lookup;
pub use vehicle::{traction_power, VehicleParams};

use crate::error::Result;

/// Converter-side battery command that balances demand against the fuel cell.
pub fn power_balance(p_veh: f64, p_fc_cmd: f64) -> f64 {
    p_veh - p_fc_cmd
}

/// Complete set of physical parameters for one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PowertrainParts", into = "PowertrainParts")]
pub struct PowertrainModel {
    pub vehicle: VehicleParams,
    pub fuel_cell: FuelCellParams,
    pub battery: BatteryParams,
    fc_peak: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct PowertrainParts {
    vehicle: VehicleParams,
    fuel_cell: FuelCellParams,
    battery: BatteryParams,
}

impl From<PowertrainParts> for PowertrainModel {
    fn from(p: PowertrainParts) -> Self {
        PowertrainModel::new(p.vehicle, p.fuel_cell, p.battery)
    }
}

impl From<PowertrainModel> for PowertrainParts {
    fn from(m: PowertrainModel) -> Self {
        PowertrainParts {
            vehicle: m.vehicle,
            fuel_cell: m.fuel_cell,
            battery: m.battery,
        }
    }
}

impl Default for PowertrainModel {
    fn default() -> Self {
        Self::new(
            VehicleParams::default(),
            FuelCellParams::default(),
            BatteryParams::default(),
        )
    }
}

impl PowertrainModel {
    pub fn new(vehicle: VehicleParams, fuel_cell: FuelCellParams, battery: BatteryParams) -> Self {
        let fc_peak = fuel_cell.max_power_point();
        Self {
            vehicle,
            fuel_cell,
            battery,
            fc_peak,
        }
    }

    /// Default parameters with the stack calibrated to the reference anchors.
    pub fn calibrated_default() -> Result<Self> {
        let cal = calibrate_polarization(&FuelCellParams::default(), &CalibrationOptions::default())?;
        Ok(Self::new(
            VehicleParams::default(),
            cal.params,
            BatteryParams::default(),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.fuel_cell.validate()?;
        self.battery.validate()
    }

    pub fn set_fuel_cell(&mut self, fuel_cell: FuelCellParams) {
        self.fc_peak = fuel_cell.max_power_point();
        self.fuel_cell = fuel_cell;
    }

    /// Maximum stack power, W.
    pub fn fc_max_power(&self) -> f64 {
        self.fc_peak.1
    }

    /// Current density delivering stack power `power` on the ascending branch.
    pub fn fc_current_density(&self, power: f64) -> Result<f64> {
        fuel_cell::power_to_current_below(power, &self.fuel_cell, self.fc_peak.0, self.fc_peak.1)
    }
}
