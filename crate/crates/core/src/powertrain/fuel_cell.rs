use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::Lookup;
use crate::error::{Error, Result};

/// Converter efficiency: a constant, or a lookup over output power (W).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConverterEfficiency {
    Constant(f64),
    Table(Lookup),
}

impl ConverterEfficiency {
    pub fn at(&self, power_w: f64) -> f64 {
        match self {
            ConverterEfficiency::Constant(e) => *e,
            ConverterEfficiency::Table(t) => t.eval(power_w.abs()),
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let (lo, hi) = match self {
            ConverterEfficiency::Constant(e) => (*e, *e),
            ConverterEfficiency::Table(t) => (t.min_y(), t.max_y()),
        };
        if !(lo > 0.0 && hi <= 1.0) {
            return Err(Error::Param(format!("{what} efficiency must lie in (0, 1]")));
        }
        Ok(())
    }
}

impl Default for ConverterEfficiency {
    fn default() -> Self {
        ConverterEfficiency::Constant(0.95)
    }
}

/// Which form of the Faraday hydrogen law to apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HydrogenMode {
    /// Whole stack: every cell consumes hydrogen for the stack current.
    #[default]
    Stack,
    /// Single-cell form without the cell count.
    SingleCell,
}

impl FromStr for HydrogenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stack" => Ok(HydrogenMode::Stack),
            "single_cell" => Ok(HydrogenMode::SingleCell),
            other => Err(Error::Config(format!(
                "unknown hydrogen mode `{other}` (expected stack|single_cell)"
            ))),
        }
    }
}

impl fmt::Display for HydrogenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HydrogenMode::Stack => "stack",
            HydrogenMode::SingleCell => "single_cell",
        })
    }
}

/// PEM stack electrochemistry and system constants.
///
/// Current densities are in A/cm², areas in cm², the ohmic resistance is
/// area-specific (Ω·cm²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelCellParams {
    pub n_cell: u32,
    pub area_cm2: f64,
    pub e0: f64,
    pub gas_const: f64,
    pub temperature: f64,
    pub n_electrons: f64,
    pub faraday: f64,
    pub transfer_coeff: f64,
    pub i_loss: f64,
    pub i0: f64,
    pub i_lim: f64,
    pub r_ohm: f64,
    /// Entropy and partial-pressure terms of the Nernst voltage, lumped.
    pub nernst_offset: f64,
    /// g/mol
    pub molar_mass_h2: f64,
    /// Thermoneutral voltage at the higher heating value.
    pub hhv_volt_equiv: f64,
    pub dcdc_eff: ConverterEfficiency,
    /// Auxiliary load, A.
    pub aux_current: f64,
    pub bus_voltage_nominal: f64,
    /// Upper bound of the system power command, W.
    pub p_fc_max: f64,
}

impl Default for FuelCellParams {
    fn default() -> Self {
        Self {
            n_cell: 370,
            area_cm2: 324.0,
            e0: 1.23,
            gas_const: 8.3145,
            temperature: 333.15,
            n_electrons: 2.0,
            faraday: 96485.0,
            transfer_coeff: 1.0,
            i_loss: 0.002,
            i0: 3e-6,
            i_lim: 1.6,
            // efficiency-anchor fit at i_lim = 1.6; `calibrate_polarization` refines it
            r_ohm: 0.0739,
            nernst_offset: -0.0888,
            molar_mass_h2: 2.016,
            hhv_volt_equiv: 1.48,
            dcdc_eff: ConverterEfficiency::default(),
            aux_current: 2.0,
            bus_voltage_nominal: 244.8,
            p_fc_max: 100_000.0,
        }
    }
}

impl FuelCellParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_cell == 0 {
            return Err(Error::Param("n_cell must be >= 1".into()));
        }
        if !(self.i0 > 0.0 && self.i0 < self.i_lim) {
            return Err(Error::Param(format!(
                "need 0 < i0 < i_lim, got i0={} i_lim={}",
                self.i0, self.i_lim
            )));
        }
        if self.i_loss < 0.0 {
            return Err(Error::Param("i_loss must be >= 0".into()));
        }
        for (name, v) in [
            ("area_cm2", self.area_cm2),
            ("gas_const", self.gas_const),
            ("temperature", self.temperature),
            ("n_electrons", self.n_electrons),
            ("faraday", self.faraday),
            ("transfer_coeff", self.transfer_coeff),
            ("molar_mass_h2", self.molar_mass_h2),
            ("hhv_volt_equiv", self.hhv_volt_equiv),
            ("bus_voltage_nominal", self.bus_voltage_nominal),
            ("p_fc_max", self.p_fc_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("fuel cell {name} must be > 0, got {v}")));
            }
        }
        if self.r_ohm < 0.0 || self.aux_current < 0.0 {
            return Err(Error::Param("r_ohm and aux_current must be >= 0".into()));
        }
        self.dcdc_eff.validate("fuel cell converter")
    }

    fn thermal_voltage(&self) -> f64 {
        self.gas_const * self.temperature / self.faraday
    }

    /// Cell voltage without the domain check; callers guarantee `i < i_lim`.
    pub(crate) fn cell_voltage_unchecked(&self, i_fc: f64) -> f64 {
        let vt = self.thermal_voltage();
        let activation = vt / self.transfer_coeff * ((i_fc + self.i_loss) / self.i0).ln();
        let concentration = vt / self.n_electrons * (self.i_lim / (self.i_lim - i_fc)).ln();
        self.e0 + self.nernst_offset - activation - concentration - i_fc * self.r_ohm
    }

    pub(crate) fn stack_power_unchecked(&self, i_fc: f64) -> f64 {
        self.n_cell as f64 * self.cell_voltage_unchecked(i_fc) * self.area_cm2 * i_fc
    }

    /// Current density and stack power at the top of the P(i) curve.
    pub fn max_power_point(&self) -> (f64, f64) {
        // P(i) is unimodal on [0, i_lim); golden-section search
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut a, mut b) = (0.0, self.i_lim * (1.0 - 1e-12));
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut fc, mut fd) = (self.stack_power_unchecked(c), self.stack_power_unchecked(d));
        while b - a > 1e-12 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = self.stack_power_unchecked(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = self.stack_power_unchecked(d);
            }
        }
        let i = 0.5 * (a + b);
        (i, self.stack_power_unchecked(i))
    }

    /// HHV efficiency of the stack at current density `i_fc`.
    pub fn hhv_efficiency(&self, i_fc: f64) -> Result<f64> {
        Ok(cell_voltage(i_fc, self)? / self.hhv_volt_equiv)
    }
}

/// Single-cell polarization voltage at current density `i_fc` (A/cm²).
pub fn cell_voltage(i_fc: f64, p: &FuelCellParams) -> Result<f64> {
    if !(i_fc >= 0.0 && i_fc < p.i_lim) {
        return Err(Error::Domain {
            i_fc,
            i_lim: p.i_lim,
        });
    }
    Ok(p.cell_voltage_unchecked(i_fc))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackOutput {
    pub voltage: f64,
    pub current: f64,
    pub power: f64,
}

pub fn stack_output(i_fc: f64, p: &FuelCellParams) -> Result<StackOutput> {
    let voltage = p.n_cell as f64 * cell_voltage(i_fc, p)?;
    let current = p.area_cm2 * i_fc;
    Ok(StackOutput {
        voltage,
        current,
        power: voltage * current,
    })
}

/// Bisection tolerance on stack power, W.
pub const POWER_TOLERANCE: f64 = 0.1;

/// Inverts the ascending branch of the stack power curve.
pub fn fc_power_to_current(power: f64, p: &FuelCellParams) -> Result<f64> {
    let (i_max, p_max) = p.max_power_point();
    power_to_current_below(power, p, i_max, p_max)
}

/// Same as [`fc_power_to_current`] with a precomputed maximum power point.
pub(crate) fn power_to_current_below(
    power: f64,
    p: &FuelCellParams,
    i_max: f64,
    p_max: f64,
) -> Result<f64> {
    if !(power >= 0.0 && power <= p_max) {
        return Err(Error::Range {
            requested: power,
            max: p_max,
        });
    }
    if power == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, i_max);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let err = p.stack_power_unchecked(mid) - power;
        if err.abs() < POWER_TOLERANCE {
            break;
        }
        if err < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Hydrogen mass flow (g/s) for stack current `current` (A).
pub fn hydrogen_rate(current: f64, p: &FuelCellParams, mode: HydrogenMode) -> f64 {
    let per_cell = p.molar_mass_h2 * current / (p.n_electrons * p.faraday);
    match mode {
        HydrogenMode::Stack => p.n_cell as f64 * per_cell,
        HydrogenMode::SingleCell => per_cell,
    }
}

/// Stack power needed to deliver `cmd` watts to the bus, auxiliaries included.
pub fn fc_gross_power(cmd: f64, p: &FuelCellParams) -> Result<f64> {
    if !(cmd >= 0.0 && cmd <= p.p_fc_max) {
        return Err(Error::Range {
            requested: cmd,
            max: p.p_fc_max,
        });
    }
    if cmd == 0.0 {
        return Ok(0.0);
    }
    Ok(cmd / p.dcdc_eff.at(cmd) + p.aux_current * p.bus_voltage_nominal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiting_current_is_a_domain_error() {
        let p = FuelCellParams::default();
        assert!(matches!(cell_voltage(p.i_lim, &p), Err(Error::Domain { .. })));
        assert!(cell_voltage(-0.1, &p).is_err());
        assert!(cell_voltage(p.i_lim * 0.999, &p).is_ok());
    }

    #[test]
    fn voltage_strictly_decreasing() {
        let p = FuelCellParams::default();
        let mut prev = cell_voltage(0.0, &p).unwrap();
        for k in 1..1000 {
            let v = cell_voltage(p.i_lim * k as f64 / 1000.0, &p).unwrap();
            assert!(v < prev, "k={k}");
            prev = v;
        }
    }

    #[test]
    fn zero_current_zero_power() {
        let out = stack_output(0.0, &FuelCellParams::default()).unwrap();
        assert_eq!(out.current, 0.0);
        assert_eq!(out.power, 0.0);
    }

    #[test]
    fn power_curve_has_single_interior_peak() {
        let p = FuelCellParams::default();
        let n = 1000;
        let powers: Vec<f64> = (0..n)
            .map(|k| p.stack_power_unchecked(p.i_lim * k as f64 / n as f64))
            .collect();
        let peak = powers
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(peak > 0 && peak < n - 1);
        assert!(powers[..=peak].windows(2).all(|w| w[1] > w[0]));
        assert!(powers[peak..].windows(2).all(|w| w[1] < w[0]));
        let (i_star, p_star) = p.max_power_point();
        assert!((i_star - p.i_lim * peak as f64 / n as f64).abs() <= p.i_lim / n as f64);
        assert!(p_star >= powers[peak]);
    }

    #[test]
    fn inverse_round_trip() {
        let p = FuelCellParams::default();
        assert_eq!(fc_power_to_current(0.0, &p).unwrap(), 0.0);
        for target in [1_000.0, 10_000.0, 50_000.0] {
            let i = fc_power_to_current(target, &p).unwrap();
            let out = stack_output(i, &p).unwrap();
            assert!((out.power - target).abs() < POWER_TOLERANCE, "{target}");
        }
    }

    #[test]
    fn inverse_takes_low_current_branch() {
        let p = FuelCellParams::default();
        let (i_max, _) = p.max_power_point();
        let i = fc_power_to_current(50_000.0, &p).unwrap();
        assert!(i < i_max);
    }

    #[test]
    fn above_max_power_is_a_range_error() {
        let p = FuelCellParams::default();
        let (_, p_max) = p.max_power_point();
        assert!(matches!(
            fc_power_to_current(p_max + 1.0, &p),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn faraday_hydrogen() {
        let p = FuelCellParams::default();
        assert_eq!(hydrogen_rate(0.0, &p, HydrogenMode::Stack), 0.0);
        let stack = hydrogen_rate(437.0, &p, HydrogenMode::Stack);
        assert!((stack - 1.689_211).abs() < 1e-5, "{stack}");
        let single = hydrogen_rate(437.0, &p, HydrogenMode::SingleCell);
        assert!((single - 4.565_435e-3).abs() < 1e-8, "{single}");
        // linear in current
        let a = hydrogen_rate(100.0, &p, HydrogenMode::Stack);
        let b = hydrogen_rate(300.0, &p, HydrogenMode::Stack);
        assert!((3.0 * a - b).abs() < 1e-12);
    }

    #[test]
    fn gross_power_includes_converter_and_auxiliaries() {
        let p = FuelCellParams::default();
        assert_eq!(fc_gross_power(0.0, &p).unwrap(), 0.0);
        assert!((fc_gross_power(10_000.0, &p).unwrap() - 11_015.915_789_5).abs() < 1e-6);
        assert!((fc_gross_power(100_000.0, &p).unwrap() - 105_752.757_894_7).abs() < 1e-6);
        assert!(fc_gross_power(100_001.0, &p).is_err());
        assert!(fc_gross_power(-1.0, &p).is_err());
    }

    #[test]
    fn tabulated_converter_efficiency() {
        let eff = ConverterEfficiency::Table(
            Lookup::new(vec![0.0, 50_000.0], vec![0.90, 0.96]).unwrap(),
        );
        assert!((eff.at(25_000.0) - 0.93).abs() < 1e-12);
        let parsed: ConverterEfficiency = serde_json::from_str("0.95").unwrap();
        assert_eq!(parsed, ConverterEfficiency::Constant(0.95));
    }
}
