//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key, so the snapshot it
//! produces reproduces the run on its own.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cycle::{load_cycle, DriveCycle, SpeedUnit, DEFAULT_POWER_LIMIT};
use crate::error::{Error, Result};
use crate::powertrain::{
    calibrate_polarization, BatteryParams, CalibrationOptions, CalibrationReport, ConverterEfficiency,
    FuelCellParams, PolarizationAnchor, PowertrainModel, VehicleParams,
};
use crate::trainer::TrainConfig;

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "FQL_EMS_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub vehicle: VehicleParams,
    pub fuel_cell: FuelCellParams,
    pub battery: BatteryParams,
    /// CSV replacing the battery's voltage and resistance tables.
    pub battery_table: Option<PathBuf>,
    /// Fit the stack constants to the calibration anchors before use.
    pub calibrate: bool,
    pub calibration: CalibrationOptions,
    pub train: TrainConfig,
    /// Bundled cycle name or CSV path.
    pub cycle: String,
    pub cycle_units: SpeedUnit,
    /// W
    pub power_limit: f64,
    /// Set once a seed came from the file, the environment, or a caller.
    pub seed_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            fuel_cell: FuelCellParams::default(),
            battery: BatteryParams::default(),
            battery_table: None,
            calibrate: true,
            calibration: CalibrationOptions::default(),
            train: TrainConfig::default(),
            cycle: "udds".into(),
            cycle_units: SpeedUnit::MetersPerSecond,
            power_limit: DEFAULT_POWER_LIMIT,
            seed_set: false,
        }
    }
}

/// Physical model and cycle ready for simulation.
pub struct Resolved {
    pub model: PowertrainModel,
    pub cycle: DriveCycle,
    pub calibration: Option<CalibrationReport>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Takes the seed from [`SEED_ENV`] if none was configured.
    pub fn apply_seed_fallback(&mut self) -> Result<()> {
        if self.seed_set {
            return Ok(());
        }
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.agent.seed = parse(SEED_ENV, v.trim())?;
            self.seed_set = true;
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.agent.seed = seed;
        self.seed_set = true;
    }

    fn anchor_mut(&mut self, index: &str, key: &str) -> Result<&mut PolarizationAnchor> {
        let i: usize = parse(key, index)?;
        let anchors = &mut self.calibration.anchors;
        if i > anchors.len() {
            return Err(Error::Config(format!("{key}: anchors must be numbered consecutively from 0")));
        }
        if i == anchors.len() {
            anchors.push(PolarizationAnchor {
                current: f64::NAN,
                power: None,
                efficiency: None,
                max_power: false,
            });
        }
        Ok(&mut anchors[i])
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "vehicle.mass" => self.vehicle.mass = parse(key, v)?,
            "vehicle.frontal_area" => self.vehicle.frontal_area = parse(key, v)?,
            "vehicle.air_density" => self.vehicle.air_density = parse(key, v)?,
            "vehicle.drag_coeff" => self.vehicle.drag_coeff = parse(key, v)?,
            "vehicle.rolling_coeff" => self.vehicle.rolling_coeff = parse(key, v)?,
            "vehicle.driveline_eff" => self.vehicle.driveline_eff = parse(key, v)?,
            "vehicle.gravity" => self.vehicle.gravity = parse(key, v)?,
            "vehicle.slope" => self.vehicle.slope = parse(key, v)?,

            "fc.n_cell" => self.fuel_cell.n_cell = parse(key, v)?,
            "fc.area_cm2" => self.fuel_cell.area_cm2 = parse(key, v)?,
            "fc.e0" => self.fuel_cell.e0 = parse(key, v)?,
            "fc.temperature" => self.fuel_cell.temperature = parse(key, v)?,
            "fc.transfer_coeff" => self.fuel_cell.transfer_coeff = parse(key, v)?,
            "fc.i_loss" => self.fuel_cell.i_loss = parse(key, v)?,
            "fc.i0" => self.fuel_cell.i0 = parse(key, v)?,
            "fc.i_lim" => self.fuel_cell.i_lim = parse(key, v)?,
            "fc.r_ohm" => self.fuel_cell.r_ohm = parse(key, v)?,
            "fc.nernst_offset" => self.fuel_cell.nernst_offset = parse(key, v)?,
            "fc.dcdc_eff" => self.fuel_cell.dcdc_eff = ConverterEfficiency::Constant(parse(key, v)?),
            "fc.aux_current" => self.fuel_cell.aux_current = parse(key, v)?,
            "fc.bus_voltage" => self.fuel_cell.bus_voltage_nominal = parse(key, v)?,
            "fc.p_max" => self.fuel_cell.p_fc_max = parse(key, v)?,
            "fc.calibrate" => self.calibrate = parse(key, v)?,

            "calibration.fit_i_lim" => self.calibration.fit_i_lim = parse(key, v)?,
            "calibration.fit_n_cell" => self.calibration.fit_n_cell = parse(key, v)?,
            "calibration.max_residual" => self.calibration.max_residual = parse(key, v)?,
            "calibration.anchors" => {
                let n: usize = parse(key, v)?;
                self.calibration.anchors.truncate(n);
            }

            "battery.capacity" => self.battery.capacity = parse(key, v)?,
            "battery.dcdc_eff" => self.battery.dcdc_eff = ConverterEfficiency::Constant(parse(key, v)?),
            "battery.nominal_voltage" => self.battery.nominal_voltage = parse(key, v)?,
            "battery.table" => self.battery_table = (v != "none").then(|| PathBuf::from(v)),

            "env.soc_ref" => self.train.env.soc_ref = parse(key, v)?,
            "env.soc_weight" => self.train.env.soc_weight = parse(key, v)?,
            "env.start_penalty" => self.train.env.start_penalty = parse(key, v)?,
            "env.start_threshold" => self.train.env.start_threshold = parse(key, v)?,
            "env.soc_min" => self.train.env.soc_min = parse(key, v)?,
            "env.soc_max" => self.train.env.soc_max = parse(key, v)?,
            "env.initial_soc" => self.train.env.initial_soc = parse(key, v)?,
            "env.hydrogen_mode" => self.train.env.hydrogen_mode = v.parse()?,
            "env.penalty_mode" => self.train.env.penalty_mode = v.parse()?,

            "agent.learning_rate" => self.train.agent.learning_rate = parse(key, v)?,
            "agent.discount" => self.train.agent.discount = parse(key, v)?,
            "agent.exploration" => self.train.agent.exploration = v.parse()?,
            "agent.seed" => self.set_seed(parse(key, v)?),

            "train.episodes" => self.train.episodes = parse(key, v)?,
            "train.epsilon_start" => self.train.epsilon_start = parse(key, v)?,
            "train.epsilon_end" => self.train.epsilon_end = parse(key, v)?,
            "train.q_init_min" => self.train.q_init_min = parse(key, v)?,
            "train.q_init_max" => self.train.q_init_max = parse(key, v)?,

            "cycle.name" => self.cycle = v.to_string(),
            "cycle.units" => self.cycle_units = v.parse()?,
            "cycle.power_limit" => self.power_limit = parse(key, v)?,

            other => {
                if let Some(rest) = other.strip_prefix("calibration.anchor.") {
                    let (index, field) = rest
                        .split_once('.')
                        .ok_or_else(|| Error::Config(format!("unknown key `{other}`")))?;
                    let anchor = self.anchor_mut(index, other)?;
                    match field {
                        "current" => anchor.current = parse(other, v)?,
                        "power" => anchor.power = (v != "none").then(|| parse(other, v)).transpose()?,
                        "efficiency" => anchor.efficiency = (v != "none").then(|| parse(other, v)).transpose()?,
                        "max_power" => anchor.max_power = parse(other, v)?,
                        _ => return Err(Error::Config(format!("unknown key `{other}`"))),
                    }
                } else {
                    return Err(Error::Config(format!("unknown key `{other}`")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        fn eff(e: &ConverterEfficiency) -> String {
            match e {
                ConverterEfficiency::Constant(v) => v.to_string(),
                ConverterEfficiency::Table(t) => t.eval(0.0).to_string(),
            }
        }
        let veh = &self.vehicle;
        let fc = &self.fuel_cell;
        let bat = &self.battery;
        let env = &self.train.env;
        let agent = &self.train.agent;
        let tr = &self.train;
        let mut out: Vec<(String, String)> = [
            ("vehicle.mass", veh.mass.to_string()),
            ("vehicle.frontal_area", veh.frontal_area.to_string()),
            ("vehicle.air_density", veh.air_density.to_string()),
            ("vehicle.drag_coeff", veh.drag_coeff.to_string()),
            ("vehicle.rolling_coeff", veh.rolling_coeff.to_string()),
            ("vehicle.driveline_eff", veh.driveline_eff.to_string()),
            ("vehicle.gravity", veh.gravity.to_string()),
            ("vehicle.slope", veh.slope.to_string()),
            ("fc.n_cell", fc.n_cell.to_string()),
            ("fc.area_cm2", fc.area_cm2.to_string()),
            ("fc.e0", fc.e0.to_string()),
            ("fc.temperature", fc.temperature.to_string()),
            ("fc.transfer_coeff", fc.transfer_coeff.to_string()),
            ("fc.i_loss", fc.i_loss.to_string()),
            ("fc.i0", fc.i0.to_string()),
            ("fc.i_lim", fc.i_lim.to_string()),
            ("fc.r_ohm", fc.r_ohm.to_string()),
            ("fc.nernst_offset", fc.nernst_offset.to_string()),
            ("fc.dcdc_eff", eff(&fc.dcdc_eff)),
            ("fc.aux_current", fc.aux_current.to_string()),
            ("fc.bus_voltage", fc.bus_voltage_nominal.to_string()),
            ("fc.p_max", fc.p_fc_max.to_string()),
            ("fc.calibrate", self.calibrate.to_string()),
            ("calibration.fit_i_lim", self.calibration.fit_i_lim.to_string()),
            ("calibration.fit_n_cell", self.calibration.fit_n_cell.to_string()),
            ("calibration.max_residual", self.calibration.max_residual.to_string()),
            ("calibration.anchors", self.calibration.anchors.len().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (i, a) in self.calibration.anchors.iter().enumerate() {
            out.push((format!("calibration.anchor.{i}.current"), a.current.to_string()));
            out.push((format!("calibration.anchor.{i}.power"), opt_f64(a.power)));
            out.push((format!("calibration.anchor.{i}.efficiency"), opt_f64(a.efficiency)));
            out.push((format!("calibration.anchor.{i}.max_power"), a.max_power.to_string()));
        }
        let rest = [
            ("battery.capacity", bat.capacity.to_string()),
            ("battery.dcdc_eff", eff(&bat.dcdc_eff)),
            ("battery.nominal_voltage", bat.nominal_voltage.to_string()),
            (
                "battery.table",
                self.battery_table
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into()),
            ),
            ("env.soc_ref", env.soc_ref.to_string()),
            ("env.soc_weight", env.soc_weight.to_string()),
            ("env.start_penalty", env.start_penalty.to_string()),
            ("env.start_threshold", env.start_threshold.to_string()),
            ("env.soc_min", env.soc_min.to_string()),
            ("env.soc_max", env.soc_max.to_string()),
            ("env.initial_soc", env.initial_soc.to_string()),
            ("env.hydrogen_mode", env.hydrogen_mode.to_string()),
            ("env.penalty_mode", env.penalty_mode.to_string()),
            ("agent.learning_rate", agent.learning_rate.to_string()),
            ("agent.discount", agent.discount.to_string()),
            ("agent.exploration", agent.exploration.to_string()),
            ("agent.seed", agent.seed.to_string()),
            ("train.episodes", tr.episodes.to_string()),
            ("train.epsilon_start", tr.epsilon_start.to_string()),
            ("train.epsilon_end", tr.epsilon_end.to_string()),
            ("train.q_init_min", tr.q_init_min.to_string()),
            ("train.q_init_max", tr.q_init_max.to_string()),
            ("cycle.name", self.cycle.clone()),
            ("cycle.units", self.cycle_units.to_string()),
            ("cycle.power_limit", self.power_limit.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.fuel_cell.validate()?;
        self.battery.validate()?;
        self.train.validate()?;
        if self.calibrate {
            if self.calibration.anchors.is_empty() {
                return Err(Error::Config("calibration needs at least one anchor".into()));
            }
            if let Some(i) = self.calibration.anchors.iter().position(|a| !(a.current > 0.0)) {
                return Err(Error::Config(format!("calibration anchor {i} needs a current > 0")));
            }
        }
        if !(self.power_limit > 0.0) {
            return Err(Error::Config("cycle.power_limit must be > 0".into()));
        }
        Ok(())
    }

    /// The stack parameters after optional calibration.
    pub fn fuel_cell_resolved(&self) -> Result<(FuelCellParams, Option<CalibrationReport>)> {
        if self.calibrate {
            let cal = calibrate_polarization(&self.fuel_cell, &self.calibration)?;
            Ok((cal.params, Some(cal.report)))
        } else {
            Ok((self.fuel_cell.clone(), None))
        }
    }

    pub fn model(&self) -> Result<(PowertrainModel, Option<CalibrationReport>)> {
        self.validate()?;
        let (fc, report) = self.fuel_cell_resolved()?;
        let mut battery = self.battery.clone();
        if let Some(path) = &self.battery_table {
            battery.load_tables(path)?;
        }
        Ok((PowertrainModel::new(self.vehicle.clone(), fc, battery), report))
    }

    pub fn load_cycle(&self, name_or_path: &str) -> Result<DriveCycle> {
        let mut cycle = match name_or_path.to_ascii_lowercase().as_str() {
            "udds" | "nedc" => DriveCycle::builtin(name_or_path, &self.vehicle)?,
            _ => load_cycle(name_or_path, self.cycle_units)?,
        };
        cycle.derive_power(&self.vehicle, self.power_limit);
        Ok(cycle)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let (model, calibration) = self.model()?;
        let cycle = self.load_cycle(&self.cycle)?;
        Ok(Resolved {
            model,
            cycle,
            calibration,
        })
    }
}
