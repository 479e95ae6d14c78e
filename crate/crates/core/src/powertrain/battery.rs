use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fuel_cell::ConverterEfficiency;
use super::table::Lookup;
use crate::error::{Error, Result};

/// Internal-resistance battery: SOC-dependent open-circuit voltage behind a series resistor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    /// A·s
    pub capacity: f64,
    /// SOC fraction → open-circuit voltage (V).
    pub voc: Lookup,
    /// SOC fraction → internal resistance (Ω).
    pub rbat: Lookup,
    pub dcdc_eff: ConverterEfficiency,
    pub nominal_voltage: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity: 6.6 * 3600.0,
            voc: Lookup::new(vec![0.0, 0.2, 0.8, 1.0], vec![230.0, 230.0, 260.0, 260.0])
                .expect("static table"),
            rbat: Lookup::new(vec![0.0, 1.0], vec![0.15, 0.15]).expect("static table"),
            dcdc_eff: ConverterEfficiency::default(),
            nominal_voltage: 244.8,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    soc: f64,
    voc_v: f64,
    rbat_ohm: f64,
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::Param("battery capacity must be > 0".into()));
        }
        if !self.voc.is_non_decreasing() {
            return Err(Error::Param("battery voc table must be non-decreasing in SOC".into()));
        }
        if self.voc.min_y() <= 0.0 {
            return Err(Error::Param("battery voc must be > 0".into()));
        }
        if self.rbat.min_y() <= 0.0 {
            return Err(Error::Param("battery resistances must be > 0".into()));
        }
        self.dcdc_eff.validate("battery converter")
    }

    /// Replaces the voltage and resistance tables with the CSV at `path`
    /// (`soc,voc_v,rbat_ohm`, SOC ascending, covering [0, 1]).
    pub fn load_tables(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: shown.clone(),
            msg: e.to_string(),
        })?;
        let mut soc = Vec::new();
        let mut voc = Vec::new();
        let mut rbat = Vec::new();
        for row in reader.deserialize::<TableRow>() {
            let row = row.map_err(|e| Error::Parse {
                path: shown.clone(),
                msg: e.to_string(),
            })?;
            soc.push(row.soc);
            voc.push(row.voc_v);
            rbat.push(row.rbat_ohm);
        }
        if soc.is_empty() {
            return Err(Error::Parse {
                path: shown,
                msg: "no table rows".into(),
            });
        }
        if soc[0] > 0.0 || soc[soc.len() - 1] < 1.0 {
            return Err(Error::Parse {
                path: shown,
                msg: "SOC column must cover [0, 1]".into(),
            });
        }
        let with_path = |e: Error| Error::Parse {
            path: shown.clone(),
            msg: e.to_string(),
        };
        let tables = (
            Lookup::new(soc.clone(), voc).map_err(with_path)?,
            Lookup::new(soc, rbat).map_err(with_path)?,
        );
        let candidate = BatteryParams {
            voc: tables.0,
            rbat: tables.1,
            ..self.clone()
        };
        candidate.validate().map_err(with_path)?;
        *self = candidate;
        Ok(())
    }

    /// Largest terminal power the battery can deliver at `soc`, V_oc²/(4R).
    pub fn max_discharge_power(&self, soc: f64) -> f64 {
        let voc = self.voc.eval(soc);
        voc * voc / (4.0 * self.rbat.eval(soc))
    }
}

/// Terminal current for terminal power `p_bat` (positive discharges).
pub fn battery_current(p_bat: f64, soc: f64, p: &BatteryParams) -> Result<f64> {
    let voc = p.voc.eval(soc);
    let r = p.rbat.eval(soc);
    let disc = voc * voc - 4.0 * r * p_bat;
    if disc < 0.0 {
        return Err(Error::InfeasiblePower {
            p_bat,
            max: voc * voc / (4.0 * r),
        });
    }
    // (V - sqrt(disc)) / 2R, rewritten to avoid cancellation for small P
    Ok(2.0 * p_bat / (voc + disc.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SocStep {
    pub soc: f64,
    /// True when the raw update left [0, 1] and was clamped.
    pub clamped: bool,
}

pub fn battery_step(soc: f64, current: f64, dt: f64, p: &BatteryParams) -> SocStep {
    let raw = soc - current * dt / p.capacity;
    let clamped = raw.clamp(0.0, 1.0);
    SocStep {
        soc: clamped,
        clamped: clamped != raw,
    }
}

/// Battery terminal power for a converter-side command.
pub fn battery_bus_power(cmd: f64, p: &BatteryParams) -> f64 {
    if cmd > 0.0 {
        cmd / p.dcdc_eff.at(cmd)
    } else if cmd < 0.0 {
        cmd * p.dcdc_eff.at(cmd)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn fixed(voc: f64, r: f64) -> BatteryParams {
        BatteryParams {
            voc: Lookup::constant(voc),
            rbat: Lookup::constant(r),
            ..Default::default()
        }
    }

    #[test]
    fn zero_power_zero_current() {
        assert_eq!(battery_current(0.0, 0.5, &BatteryParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_root() {
        let p = fixed(250.0, 0.1);
        let i = battery_current(1000.0, 0.5, &p).unwrap();
        assert!((i - 4.006_420_562).abs() < 1e-8, "{i}");
        assert!((i * (250.0 - i * 0.1) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_demand() {
        let p = fixed(250.0, 0.1);
        assert!((p.max_discharge_power(0.5) - 156_250.0).abs() < 1e-9);
        assert!(matches!(
            battery_current(160_000.0, 0.5, &p),
            Err(Error::InfeasiblePower { .. })
        ));
    }

    #[test]
    fn soc_integration() {
        let p = BatteryParams::default();
        assert_eq!(battery_step(0.37, 0.0, 1.0, &p).soc, 0.37);
        let drained = battery_step(1.0, 6.6, 3600.0, &p);
        assert!(drained.soc.abs() < 1e-12 && !drained.clamped);
        let charged = battery_step(0.5, -23.76, 100.0, &p);
        assert!((charged.soc - 0.6).abs() < 1e-12);
        let over = battery_step(0.99, -100.0, 10.0, &p);
        assert_eq!(over.soc, 1.0);
        assert!(over.clamped);
    }

    #[test]
    fn converter_losses() {
        let p = BatteryParams::default();
        assert_eq!(battery_bus_power(0.0, &p), 0.0);
        assert!((battery_bus_power(1000.0, &p) - 1_052.631_578_9).abs() < 1e-6);
        assert!((battery_bus_power(-1000.0, &p) + 950.0).abs() < 1e-9);
    }

    #[test]
    fn loads_csv_tables() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "soc,voc_v,rbat_ohm\n0,220,0.2\n0.5,240,0.15\n1,265,0.12").unwrap();
        let mut p = BatteryParams::default();
        p.load_tables(f.path()).unwrap();
        assert!((p.voc.eval(0.25) - 230.0).abs() < 1e-12);
        assert!((p.rbat.eval(1.0) - 0.12).abs() < 1e-12);
    }

    #[test]
    fn rejects_decreasing_voc_table() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "soc,voc_v,rbat_ohm\n0,250,0.2\n1,240,0.15").unwrap();
        let mut p = BatteryParams::default();
        assert!(p.load_tables(f.path()).is_err());
        assert_eq!(p, BatteryParams::default());
    }

    proptest! {
        #[test]
        fn current_satisfies_power_equation(soc in 0.0f64..1.0, frac in -3.0f64..0.999) {
            let p = BatteryParams::default();
            let p_bat = frac * p.max_discharge_power(soc);
            let i = battery_current(p_bat, soc, &p).unwrap();
            let voc = p.voc.eval(soc);
            let r = p.rbat.eval(soc);
            let back = i * (voc - i * r);
            prop_assert!((back - p_bat).abs() <= 1e-6 * p_bat.abs().max(1.0));
            prop_assert_eq!(i > 0.0, p_bat > 0.0);
        }

        #[test]
        fn charge_is_conserved(currents in prop::collection::vec(-50.0f64..50.0, 1..50)) {
            let p = BatteryParams { capacity: 1e9, ..Default::default() };
            let stepped = currents.iter().fold(0.5, |soc, &i| battery_step(soc, i, 1.0, &p).soc);
            let total: f64 = currents.iter().sum();
            let once = battery_step(0.5, total, 1.0, &p).soc;
            prop_assert!((stepped - once).abs() < 1e-12);
        }
    }
}
