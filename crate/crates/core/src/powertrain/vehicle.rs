use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal vehicle body parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// m²
    pub frontal_area: f64,
    /// kg/m³
    pub air_density: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
    /// Motor plus transmission efficiency, (0, 1].
    pub driveline_eff: f64,
    /// m/s²
    pub gravity: f64,
    /// Road slope, rad.
    pub slope: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 2500.0,
            frontal_area: 1.8,
            air_density: 1.25,
            drag_coeff: 0.3,
            rolling_coeff: 0.01,
            driveline_eff: 0.9,
            gravity: 9.8,
            slope: 0.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("frontal_area", self.frontal_area),
            ("air_density", self.air_density),
            ("drag_coeff", self.drag_coeff),
            ("rolling_coeff", self.rolling_coeff),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("vehicle {name} must be > 0, got {v}")));
            }
        }
        if !(self.driveline_eff > 0.0 && self.driveline_eff <= 1.0) {
            return Err(Error::Param(format!(
                "vehicle driveline_eff must be in (0, 1], got {}",
                self.driveline_eff
            )));
        }
        if !self.slope.is_finite() {
            return Err(Error::Param("vehicle slope must be finite".into()));
        }
        Ok(())
    }

    /// Force the motor has to deliver at the wheels, N.
    pub fn tractive_force(&self, v: f64, dv_dt: f64, slope: f64) -> f64 {
        let weight = self.mass * self.gravity;
        0.5 * self.drag_coeff * self.frontal_area * self.air_density * v * v
            + weight * self.rolling_coeff * slope.cos()
            + weight * slope.sin()
            + self.mass * dv_dt
    }
}

/// Electrical power demanded by the motor at velocity `v` (m/s) and
/// acceleration `dv_dt` (m/s²). Braking power is negative and only the
/// driveline-efficient fraction of it is recovered.
pub fn traction_power(v: f64, dv_dt: f64, slope: f64, p: &VehicleParams) -> f64 {
    let wheel = p.tractive_force(v, dv_dt, slope) * v;
    if wheel >= 0.0 {
        wheel / p.driveline_eff
    } else {
        wheel * p.driveline_eff
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standstill_draws_nothing() {
        assert_eq!(traction_power(0.0, 0.0, 0.0, &VehicleParams::default()), 0.0);
    }

    #[test]
    fn cruise_and_acceleration() {
        let p = VehicleParams::default();
        assert!((p.tractive_force(10.0, 0.0, 0.0) - 278.75).abs() < 1e-9);
        assert!((traction_power(10.0, 0.0, 0.0, &p) - 3097.2222).abs() < 1e-3);
        assert!((p.tractive_force(10.0, 1.0, 0.0) - 2778.75).abs() < 1e-9);
        assert!((traction_power(10.0, 1.0, 0.0, &p) - 30875.0).abs() < 1e-6);
    }

    #[test]
    fn regeneration_is_attenuated() {
        let p = VehicleParams::default();
        let wheel = p.tractive_force(10.0, -2.0, 0.0) * 10.0;
        assert!(wheel < 0.0);
        let recovered = traction_power(10.0, -2.0, 0.0, &p);
        assert!((recovered - wheel * 0.9).abs() < 1e-9);
        assert!(recovered.abs() < wheel.abs());
    }

    #[test]
    fn uphill_costs_more() {
        let p = VehicleParams::default();
        assert!(traction_power(10.0, 0.0, 0.05, &p) > traction_power(10.0, 0.0, 0.0, &p));
    }

    #[test]
    fn rejects_bad_efficiency() {
        let p = VehicleParams {
            driveline_eff: 1.2,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
