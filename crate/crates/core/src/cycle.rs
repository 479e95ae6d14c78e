//! Drive cycles: uniformly sampled speed traces and the traction power they demand.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::powertrain::{traction_power, VehicleParams};

/// Allowed deviation of a sample interval from the first one, s.
pub const SAMPLING_TOLERANCE: f64 = 1e-6;

/// Default magnitude limit on the demanded power, W.
pub const DEFAULT_POWER_LIMIT: f64 = 50_000.0;

const UDDS_CSV: &str = include_str!("../data/udds.csv");
const NEDC_CSV: &str = include_str!("../data/nedc.csv");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpeedUnit {
    #[default]
    MetersPerSecond,
    KilometersPerHour,
}

impl SpeedUnit {
    fn to_mps(self, v: f64) -> f64 {
        match self {
            Self::MetersPerSecond => v,
            Self::KilometersPerHour => v / 3.6,
        }
    }
}

impl FromStr for SpeedUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mps" | "m/s" => Ok(Self::MetersPerSecond),
            "kmh" | "km/h" => Ok(Self::KilometersPerHour),
            other => Err(Error::Config(format!("unknown speed unit `{other}` (expected mps|kmh)"))),
        }
    }
}

impl fmt::Display for SpeedUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MetersPerSecond => "mps",
            Self::KilometersPerHour => "kmh",
        })
    }
}

/// Speed trace plus, once derived, acceleration and demanded power.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveCycle {
    pub name: String,
    pub start_time: f64,
    /// Sample interval, s.
    pub dt: f64,
    /// m/s
    pub velocity: Vec<f64>,
    /// m/s², backward difference with a zero first sample.
    pub accel: Vec<f64>,
    /// W, clamped to the power limit.
    pub power: Vec<f64>,
    /// Samples whose demand hit the power limit.
    pub saturated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleSummary {
    pub name: String,
    pub duration_s: f64,
    pub distance_km: f64,
    pub p_min_w: f64,
    pub p_max_w: f64,
}

impl DriveCycle {
    pub fn new(name: impl Into<String>, start_time: f64, dt: f64, velocity: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Param(format!("sample interval must be > 0, got {dt}")));
        }
        if velocity.len() < 2 {
            return Err(Error::Param("a drive cycle needs at least two samples".into()));
        }
        if let Some(v) = velocity.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Param(format!("velocity must be finite and >= 0, got {v}")));
        }
        Ok(Self {
            name: name.into(),
            start_time,
            dt,
            velocity,
            accel: Vec::new(),
            power: Vec::new(),
            saturated: 0,
        })
    }

    /// One of the bundled cycles, `udds` or `nedc`, with power derived.
    pub fn builtin(name: &str, vehicle: &VehicleParams) -> Result<Self> {
        let (text, unit) = match name.to_ascii_lowercase().as_str() {
            "udds" => (UDDS_CSV, SpeedUnit::MetersPerSecond),
            "nedc" => (NEDC_CSV, SpeedUnit::KilometersPerHour),
            other => return Err(Error::Config(format!("no bundled cycle named `{other}`"))),
        };
        let mut cycle = parse_cycle(text.as_bytes(), name, unit, &format!("<{name}>"))?;
        cycle.name = name.to_ascii_lowercase();
        cycle.derive_power(vehicle, DEFAULT_POWER_LIMIT);
        Ok(cycle)
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    /// Control steps per pass: every sample but the last starts one.
    pub fn steps(&self) -> usize {
        self.velocity.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// Distance covered over the control steps, m.
    pub fn distance(&self) -> f64 {
        self.velocity[..self.steps()].iter().sum::<f64>() * self.dt
    }

    pub fn has_power(&self) -> bool {
        self.power.len() == self.velocity.len()
    }

    /// Fills acceleration and demanded power for `vehicle`.
    pub fn derive_power(&mut self, vehicle: &VehicleParams, limit: f64) {
        let n = self.velocity.len();
        self.accel = (0..n)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    (self.velocity[k] - self.velocity[k - 1]) / self.dt
                }
            })
            .collect();
        self.saturated = 0;
        self.power = self
            .velocity
            .iter()
            .zip(&self.accel)
            .map(|(&v, &a)| {
                let p = traction_power(v, a, vehicle.slope, vehicle);
                if p.abs() > limit {
                    self.saturated += 1;
                }
                p.clamp(-limit, limit)
            })
            .collect();
    }

    pub fn summary(&self) -> CycleSummary {
        let (p_min_w, p_max_w) = self
            .power
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        CycleSummary {
            name: self.name.clone(),
            duration_s: self.duration(),
            distance_km: self.distance() / 1000.0,
            p_min_w: if self.power.is_empty() { 0.0 } else { p_min_w },
            p_max_w: if self.power.is_empty() { 0.0 } else { p_max_w },
        }
    }

    /// Writes `t_s,v` with speed in m/s.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_s", "v"])?;
        for (k, v) in self.velocity.iter().enumerate() {
            w.write_record([self.time(k).to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `t_s,v` CSV. Power is not derived.
pub fn load_cycle(path: impl AsRef<Path>, unit: SpeedUnit) -> Result<DriveCycle> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cycle".into());
    parse_cycle(file, &name, unit, &path.display().to_string())
}

fn parse_cycle<R: Read>(reader: R, name: &str, unit: SpeedUnit, shown: &str) -> Result<DriveCycle> {
    let parse_err = |msg: String| Error::Parse {
        path: shown.to_string(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_s", "v"] {
        return Err(parse_err(format!("expected header `t_s,v`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut times = Vec::new();
    let mut speeds = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| parse_err(format!("row {row}: missing column {}", i + 1)))?
                .parse::<f64>()
                .map_err(|e| parse_err(format!("row {row}: {e}")))
        };
        let (t, v) = (field(0)?, field(1)?);
        if !(t.is_finite() && v.is_finite()) {
            return Err(parse_err(format!("row {row}: non-finite value")));
        }
        if v < 0.0 {
            return Err(Error::NegativeVelocity {
                path: shown.to_string(),
                row,
                v,
            });
        }
        times.push(t);
        speeds.push(unit.to_mps(v));
    }
    if times.len() < 2 {
        return Err(parse_err("a drive cycle needs at least two samples".into()));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(parse_err("time column must be strictly increasing".into()));
    }
    for (k, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if (step - dt).abs() > SAMPLING_TOLERANCE {
            return Err(Error::NonUniformSampling {
                path: shown.to_string(),
                row: k + 3,
                found: step,
                expected: dt,
            });
        }
    }
    DriveCycle::new(name, times[0], dt, speeds)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_converts_units() {
        let f = csv_file("t_s,v\n0,0\n1,36\n2,72\n");
        let c = load_cycle(f.path(), SpeedUnit::KilometersPerHour).unwrap();
        assert_eq!(c.velocity, vec![0.0, 10.0, 20.0]);
        assert_eq!(c.dt, 1.0);
        assert_eq!(c.steps(), 2);
    }

    #[test]
    fn backward_difference_power() {
        let f = csv_file("t_s,v\n0,0\n1,0\n2,10\n3,10\n");
        let mut c = load_cycle(f.path(), SpeedUnit::MetersPerSecond).unwrap();
        let veh = VehicleParams::default();
        c.derive_power(&veh, DEFAULT_POWER_LIMIT);
        assert_eq!(c.accel, vec![0.0, 0.0, 10.0, 0.0]);
        assert_eq!(c.power[0], 0.0);
        assert!((c.power[3] - traction_power(10.0, 0.0, 0.0, &veh)).abs() < 1e-12);
        // 10 m/s² at 10 m/s far exceeds the limit
        assert_eq!(c.power[2], DEFAULT_POWER_LIMIT);
        assert_eq!(c.saturated, 1);
    }

    #[test]
    fn rejects_non_uniform_sampling() {
        let f = csv_file("t_s,v\n0,0\n1,1\n2.5,2\n");
        assert!(matches!(
            load_cycle(f.path(), SpeedUnit::MetersPerSecond),
            Err(Error::NonUniformSampling { row: 4, .. })
        ));
    }

    #[test]
    fn rejects_negative_speed() {
        let f = csv_file("t_s,v\n0,0\n1,-1\n");
        assert!(matches!(
            load_cycle(f.path(), SpeedUnit::MetersPerSecond),
            Err(Error::NegativeVelocity { row: 3, .. })
        ));
    }

    #[test]
    fn rejects_empty_and_header_only() {
        for body in ["", "t_s,v\n", "t_s,v\n0,1\n", "time,speed\n0,0\n1,1\n"] {
            let f = csv_file(body);
            assert!(
                matches!(load_cycle(f.path(), SpeedUnit::MetersPerSecond), Err(Error::Parse { .. })),
                "{body:?}"
            );
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_cycle("/nonexistent/cycle.csv", SpeedUnit::MetersPerSecond),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let veh = VehicleParams::default();
        let c = DriveCycle::builtin("nedc", &veh).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nedc.csv");
        c.write_csv(&path).unwrap();
        let back = load_cycle(&path, SpeedUnit::MetersPerSecond).unwrap();
        assert_eq!(back.velocity, c.velocity);
        assert_eq!(back.dt, c.dt);
    }

    #[test]
    fn bundled_cycles() {
        let veh = VehicleParams::default();
        let udds = DriveCycle::builtin("udds", &veh).unwrap();
        assert_eq!(udds.len(), 1370);
        assert_eq!(udds.dt, 1.0);
        let s = udds.summary();
        assert!((s.distance_km - 11.99).abs() < 0.01, "{s:?}");
        assert_eq!(s.duration_s, 1369.0);
        assert!(s.p_max_w <= DEFAULT_POWER_LIMIT && s.p_min_w < 0.0);

        let nedc = DriveCycle::builtin("NEDC", &veh).unwrap();
        assert_eq!(nedc.len(), 1181);
        assert!((nedc.summary().distance_km - 11.01).abs() < 0.02);
        let vmax = nedc.velocity.iter().cloned().fold(0.0, f64::max);
        assert!((vmax * 3.6 - 120.0).abs() < 1e-9);

        assert!(DriveCycle::builtin("wltp", &veh).is_err());
    }
}
