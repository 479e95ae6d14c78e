//! Episodic simulator: one drive-cycle pass, one control decision per sample.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cycle::DriveCycle;
use crate::error::{Error, Result};
use crate::powertrain::{
    battery_bus_power, battery_current, battery_step, fc_gross_power, hydrogen_rate, power_balance, HydrogenMode,
    PowertrainModel,
};

/// Fraction of the battery's theoretical peak power the simulator will draw.
pub const BATTERY_POWER_MARGIN: f64 = 0.99;

/// Where the start-up penalty enters the per-step reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Charged on the step where the stack starts.
    #[default]
    PerEvent,
    /// Charged in full on the terminal step.
    TerminalLump,
}

impl FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_event" => Ok(Self::PerEvent),
            "terminal_lump" => Ok(Self::TerminalLump),
            other => Err(Error::Config(format!(
                "unknown penalty mode `{other}` (expected per_event|terminal_lump)"
            ))),
        }
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerEvent => "per_event",
            Self::TerminalLump => "terminal_lump",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub soc_ref: f64,
    /// Weight on the squared SOC deviation.
    pub soc_weight: f64,
    /// Cost of one stack start, in reward units.
    pub start_penalty: f64,
    /// Command above which the stack counts as running, W.
    pub start_threshold: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub initial_soc: f64,
    pub hydrogen_mode: HydrogenMode,
    pub penalty_mode: PenaltyMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            soc_ref: 0.5,
            soc_weight: 200.0,
            start_penalty: 0.2,
            start_threshold: 500.0,
            soc_min: 0.0,
            soc_max: 1.0,
            initial_soc: 0.5,
            hydrogen_mode: HydrogenMode::Stack,
            penalty_mode: PenaltyMode::PerEvent,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(Error::Config(format!(
                "SOC bounds must satisfy 0 <= min < max <= 1, got [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        self.check_soc(self.initial_soc)?;
        if !(0.0..=1.0).contains(&self.soc_ref) {
            return Err(Error::Config(format!("SOC reference must be in [0, 1], got {}", self.soc_ref)));
        }
        for (name, v) in [
            ("SOC weight", self.soc_weight),
            ("start penalty", self.start_penalty),
            ("start threshold", self.start_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn check_soc(&self, soc: f64) -> Result<()> {
        if !(self.soc_min <= soc && soc <= self.soc_max) {
            return Err(Error::Config(format!(
                "initial SOC {soc} outside [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        Ok(())
    }

    /// Fuel and SOC terms of the reward, before any start penalty.
    pub fn base_reward(&self, mdot: f64, soc_next: f64) -> f64 {
        let dev = soc_next - self.soc_ref;
        -mdot - self.soc_weight * dev * dev
    }
}

/// Mutable part of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub k: usize,
    pub soc: f64,
    pub fc_on: bool,
    pub n_start: usize,
    /// g
    pub hydrogen: f64,
    /// m
    pub distance: f64,
    pub base_reward_sum: f64,
    pub reward_sum: f64,
    pub battery_saturations: usize,
    pub fc_saturations: usize,
    pub soc_clamps: usize,
    pub terminal: bool,
    pub boundary_exit: bool,
}

impl EnvState {
    fn start(soc: f64, fc_on: bool) -> Self {
        Self {
            k: 0,
            soc,
            fc_on,
            n_start: 0,
            hydrogen: 0.0,
            distance: 0.0,
            base_reward_sum: 0.0,
            reward_sum: 0.0,
            battery_saturations: 0,
            fc_saturations: 0,
            soc_clamps: 0,
            terminal: false,
            boundary_exit: false,
        }
    }
}

/// What the agent sees: demanded power (W) and SOC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub p_veh: f64,
    pub soc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub k: usize,
    pub observation: Observation,
    pub reward: f64,
    pub base_reward: f64,
    pub terminal: bool,
    pub boundary_exit: bool,
    pub p_veh: f64,
    /// Applied converter-side stack command, W.
    pub p_fc: f64,
    /// Gross stack power, W.
    pub p_stack: f64,
    pub p_bat_cmd: f64,
    /// Battery terminal power, W.
    pub p_bat: f64,
    pub i_bat: f64,
    pub soc: f64,
    /// g/s
    pub mdot: f64,
    pub start_event: bool,
    pub battery_saturated: bool,
    pub fc_saturated: bool,
}

pub struct Env<'a> {
    cycle: &'a DriveCycle,
    model: &'a PowertrainModel,
    cfg: &'a EnvConfig,
    state: EnvState,
}

impl<'a> Env<'a> {
    pub fn new(cycle: &'a DriveCycle, model: &'a PowertrainModel, cfg: &'a EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if !cycle.has_power() {
            return Err(Error::Param(format!("cycle `{}` has no derived power", cycle.name)));
        }
        Ok(Self {
            cycle,
            model,
            cfg,
            state: EnvState::start(cfg.initial_soc, false),
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn cycle(&self) -> &DriveCycle {
        self.cycle
    }

    pub fn config(&self) -> &EnvConfig {
        self.cfg
    }

    /// Fresh episode from the configured initial SOC, stack off.
    pub fn reset(&mut self) -> Observation {
        self.state = EnvState::start(self.cfg.initial_soc, false);
        self.observation()
    }

    /// Fresh counters, continuing from `soc` and the given stack state.
    pub fn reset_from(&mut self, soc: f64, fc_on: bool) -> Result<Observation> {
        self.cfg.check_soc(soc)?;
        self.state = EnvState::start(soc, fc_on);
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        let k = self.state.k.min(self.cycle.steps());
        Observation {
            p_veh: self.cycle.power[k],
            soc: self.state.soc,
        }
    }

    /// Applies stack command `p_fc_cmd` (W) for one sample interval.
    pub fn step(&mut self, p_fc_cmd: f64) -> Result<StepResult> {
        if self.state.terminal {
            return Err(Error::Terminated);
        }
        let cfg = self.cfg;
        let model = self.model;
        let fc = &model.fuel_cell;
        let bat = &model.battery;
        let dt = self.cycle.dt;
        let k = self.state.k;
        let soc = self.state.soc;
        let p_veh = self.cycle.power[k];

        let p_fc = p_fc_cmd.clamp(0.0, fc.p_fc_max);
        let mut p_stack = fc_gross_power(p_fc, fc)?;
        let fc_saturated = p_stack > model.fc_max_power();
        if fc_saturated {
            p_stack = model.fc_max_power();
        }
        let i_stack = model.fc_current_density(p_stack)? * fc.area_cm2;
        let mdot = hydrogen_rate(i_stack, fc, cfg.hydrogen_mode);

        let p_bat_cmd = power_balance(p_veh, p_fc);
        let mut p_bat = battery_bus_power(p_bat_cmd, bat);
        let p_bat_max = BATTERY_POWER_MARGIN * bat.max_discharge_power(soc);
        let battery_saturated = p_bat > p_bat_max;
        if battery_saturated {
            p_bat = p_bat_max;
        }
        let i_bat = battery_current(p_bat, soc, bat)?;
        let next = battery_step(soc, i_bat, dt, bat);

        let running = p_fc >= cfg.start_threshold;
        let start_event = running && !self.state.fc_on;

        let boundary_exit = next.soc <= cfg.soc_min || next.soc >= cfg.soc_max;
        let terminal = boundary_exit || k + 1 >= self.cycle.steps();

        let base_reward = cfg.base_reward(mdot, next.soc);
        let st = &mut self.state;
        st.n_start += usize::from(start_event);
        let mut reward = base_reward;
        match cfg.penalty_mode {
            PenaltyMode::PerEvent if start_event => reward -= cfg.start_penalty,
            PenaltyMode::TerminalLump if terminal => reward -= cfg.start_penalty * st.n_start as f64,
            _ => {}
        }

        st.k = k + 1;
        st.soc = next.soc;
        st.fc_on = running;
        st.hydrogen += mdot * dt;
        st.distance += self.cycle.velocity[k] * dt;
        st.base_reward_sum += base_reward * dt;
        st.reward_sum += reward * dt;
        st.battery_saturations += usize::from(battery_saturated);
        st.fc_saturations += usize::from(fc_saturated);
        st.soc_clamps += usize::from(next.clamped);
        st.terminal = terminal;
        st.boundary_exit = boundary_exit;

        Ok(StepResult {
            k,
            observation: self.observation(),
            reward,
            base_reward,
            terminal,
            boundary_exit,
            p_veh,
            p_fc,
            p_stack,
            p_bat_cmd,
            p_bat,
            i_bat,
            soc: next.soc,
            mdot,
            start_event,
            battery_saturated,
            fc_saturated,
        })
    }

    /// Penalised return of the episode so far.
    pub fn episode_return(&self) -> f64 {
        self.state.base_reward_sum - self.cfg.start_penalty * self.state.n_start as f64
    }
}

/// Penalised return of a recorded episode.
pub fn episode_return(steps: &[StepResult], dt: f64, start_penalty: f64) -> f64 {
    let base: f64 = steps.iter().map(|s| s.base_reward * dt).sum();
    let starts = steps.iter().filter(|s| s.start_event).count();
    base - start_penalty * starts as f64
}

/// Writes a per-step trajectory CSV.
pub fn write_trajectory(path: impl AsRef<Path>, cycle: &DriveCycle, steps: &[StepResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k", "t_s", "v_mps", "p_veh_w", "p_fc_w", "p_bat_w", "i_bat_a", "soc", "mdot_gps", "reward", "start_event",
    ])?;
    for s in steps {
        w.write_record([
            s.k.to_string(),
            cycle.time(s.k).to_string(),
            cycle.velocity[s.k].to_string(),
            s.p_veh.to_string(),
            s.p_fc.to_string(),
            s.p_bat.to_string(),
            s.i_bat.to_string(),
            s.soc.to_string(),
            s.mdot.to_string(),
            s.reward.to_string(),
            u8::from(s.start_event).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use proptest::prelude::*;

    use super::*;
    use crate::powertrain::VehicleParams;

    fn flat_cycle(power: Vec<f64>) -> DriveCycle {
        let n = power.len();
        let mut c = DriveCycle::new("test", 0.0, 1.0, vec![0.0; n]).unwrap();
        c.accel = vec![0.0; n];
        c.power = power;
        c
    }

    fn model() -> PowertrainModel {
        static MODEL: OnceLock<PowertrainModel> = OnceLock::new();
        MODEL.get_or_init(|| PowertrainModel::calibrated_default().unwrap()).clone()
    }

    #[test]
    fn idle_step_has_no_fuel_and_no_soc_change() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = flat_cycle(vec![0.0; 5]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let r = env.step(0.0).unwrap();
        assert_eq!(r.mdot, 0.0);
        assert_eq!(r.soc, 0.5);
        assert_eq!(r.reward, 0.0);
        assert!(!r.start_event && !r.terminal);
    }

    #[test]
    fn start_events_follow_threshold_crossings() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = flat_cycle(vec![0.0; 8]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let cmds = [0.0, 1000.0, 1000.0, 400.0, 0.0, 2000.0, 600.0];
        let starts: Vec<bool> = cmds.iter().map(|&u| env.step(u).unwrap().start_event).collect();
        assert_eq!(starts, vec![false, true, false, false, false, true, false]);
        assert_eq!(env.state().n_start, 2);
        assert!(env.state().terminal);
    }

    #[test]
    fn per_event_penalty_applies_on_start_step() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = flat_cycle(vec![0.0; 3]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let r = env.step(1000.0).unwrap();
        assert!((r.reward - (r.base_reward - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn penalty_modes_agree_on_return() {
        let m = model();
        let c = flat_cycle(vec![5_000.0, 20_000.0, 0.0, -3_000.0, 8_000.0, 0.0]);
        let cmds = [0.0, 10_000.0, 0.0, 2_000.0, 20_000.0];
        let mut totals = Vec::new();
        for mode in [PenaltyMode::PerEvent, PenaltyMode::TerminalLump] {
            let cfg = EnvConfig {
                penalty_mode: mode,
                ..Default::default()
            };
            let mut env = Env::new(&c, &m, &cfg).unwrap();
            env.reset();
            let steps: Vec<_> = cmds.iter().map(|&u| env.step(u).unwrap()).collect();
            let j = episode_return(&steps, c.dt, cfg.start_penalty);
            assert!((j - env.episode_return()).abs() < 1e-12);
            assert!((env.state().reward_sum - j).abs() < 1e-12, "{mode}");
            totals.push(j);
        }
        assert_eq!(totals[0], totals[1]);
    }

    #[test]
    fn terminal_after_last_step_and_then_refuses() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = flat_cycle(vec![0.0; 3]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        assert!(!env.step(0.0).unwrap().terminal);
        assert!(env.step(0.0).unwrap().terminal);
        assert!(matches!(env.step(0.0), Err(Error::Terminated)));
    }

    #[test]
    fn soc_bound_ends_episode() {
        let m = model();
        let cfg = EnvConfig {
            soc_min: 0.49995,
            initial_soc: 0.5,
            ..Default::default()
        };
        let c = flat_cycle(vec![40_000.0; 100]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let mut last = None;
        for _ in 0..100 {
            let r = env.step(0.0).unwrap();
            let done = r.terminal;
            last = Some(r);
            if done {
                break;
            }
        }
        let last = last.unwrap();
        assert!(last.boundary_exit && last.terminal);
        assert!(env.state().k < 99);
    }

    #[test]
    fn oversized_command_saturates_stack() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = flat_cycle(vec![0.0; 3]);
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let r = env.step(1e9).unwrap();
        assert_eq!(r.p_fc, m.fuel_cell.p_fc_max);
        assert!(r.fc_saturated);
        assert_eq!(r.p_stack, m.fc_max_power());
    }

    #[test]
    fn bad_initial_soc_is_config_error() {
        let m = model();
        let cfg = EnvConfig {
            initial_soc: 1.5,
            ..Default::default()
        };
        let c = flat_cycle(vec![0.0; 3]);
        assert!(matches!(Env::new(&c, &m, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn trajectory_csv_header() {
        let m = model();
        let cfg = EnvConfig::default();
        let c = DriveCycle::builtin("udds", &VehicleParams::default()).unwrap();
        let mut env = Env::new(&c, &m, &cfg).unwrap();
        env.reset();
        let steps: Vec<_> = (0..10).map(|_| env.step(5_000.0).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory(&path, &c, &steps).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,t_s,v_mps,p_veh_w,p_fc_w,p_bat_w,i_bat_a,soc,mdot_gps,reward,start_event"
        );
        assert_eq!(lines.count(), 10);
    }

    proptest! {
        #[test]
        fn step_invariants(cmds in prop::collection::vec(0.0f64..100_000.0, 1..40), seed_p in -50_000.0f64..50_000.0) {
            let m = model();
            let cfg = EnvConfig::default();
            let power: Vec<f64> = (0..=cmds.len()).map(|k| seed_p * ((k as f64) * 0.7).sin()).collect();
            let c = flat_cycle(power);
            let mut env = Env::new(&c, &m, &cfg).unwrap();
            env.reset();
            for &u in &cmds {
                let before = env.state().soc;
                let r = env.step(u).unwrap();
                prop_assert!((r.p_veh - (r.p_fc + r.p_bat_cmd)).abs() < 1e-9);
                prop_assert!(r.mdot >= 0.0);
                prop_assert_eq!(r.mdot == 0.0, r.p_fc == 0.0);
                prop_assert!((0.0..=1.0).contains(&r.soc));
                if !r.battery_saturated && !r.terminal {
                    let expected = before - r.i_bat * c.dt / m.battery.capacity;
                    prop_assert!((r.soc - expected).abs() < 1e-12);
                }
                prop_assert!(r.reward <= 0.0);
                if r.terminal { break; }
            }
        }
    }
}
