//! Training and greedy evaluation loops.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cycle::DriveCycle;
use crate::env::{Env, EnvConfig, StepResult};
use crate::error::{Error, Result};
use crate::fis::{ActionSet, RuleGrid};
use crate::fql::{greedy_actions, select_actions, td_update, Agent, AgentConfig, QArray};
use crate::powertrain::PowertrainModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Range of the uniform initial q-values. The default sits near the
    /// discounted return of a charge-sustaining policy (about -0.15 per step
    /// over a 1/(1 - discount) horizon); a range near zero leaves rarely
    /// visited rules looking far better than visited ones.
    pub q_init_min: f64,
    pub q_init_max: f64,
    pub agent: AgentConfig,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.001,
            q_init_min: -150.1,
            q_init_max: -150.0,
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::Config("exploration rates must be in [0, 1]".into()));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::Config("final exploration rate exceeds the initial one".into()));
        }
        if !(self.q_init_min <= self.q_init_max) || !self.q_init_min.is_finite() || !self.q_init_max.is_finite() {
            return Err(Error::Config("q initialisation range is invalid".into()));
        }
        self.agent.validate()?;
        self.env.validate()
    }
}

/// Geometric decay from `start` at episode 0 to `end` at the last episode.
pub fn epsilon_schedule(episode: usize, episodes: usize, start: f64, end: f64) -> f64 {
    if episodes <= 1 || start == 0.0 {
        return start;
    }
    let frac = episode as f64 / (episodes - 1) as f64;
    start * (end / start).powf(frac)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub epsilon: f64,
    /// Penalised return divided by the number of steps.
    pub avg_reward: f64,
    /// `None` when the episode covered no distance.
    pub h2_g_per_100km: Option<f64>,
    pub final_soc: f64,
    pub n_start: usize,
    pub steps: usize,
    pub episode_return: f64,
    pub hydrogen_g: f64,
    pub distance_km: f64,
    pub completed: bool,
    pub battery_saturations: usize,
    pub fc_saturations: usize,
}

impl EpisodeMetrics {
    fn from_env(env: &Env<'_>, episode: usize, epsilon: f64) -> Self {
        let st = env.state();
        let distance_km = st.distance / 1000.0;
        let ret = env.episode_return();
        Self {
            episode,
            epsilon,
            avg_reward: if st.k > 0 { ret / st.k as f64 } else { 0.0 },
            h2_g_per_100km: (distance_km > 0.0).then(|| 100.0 * st.hydrogen / distance_km),
            final_soc: st.soc,
            n_start: st.n_start,
            steps: st.k,
            episode_return: ret,
            hydrogen_g: st.hydrogen,
            distance_km,
            completed: !st.boundary_exit,
            battery_saturations: st.battery_saturations,
            fc_saturations: st.fc_saturations,
        }
    }
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Fresh agent with q-values drawn from `rng`.
pub fn initial_agent(cfg: &TrainConfig, model: &PowertrainModel, rng: &mut ChaCha8Rng) -> Result<Agent> {
    let grid = RuleGrid::default();
    let actions = ActionSet::default();
    let q = QArray::random(grid.rules(), actions.len(), cfg.q_init_min, cfg.q_init_max, rng);
    Agent::new(grid, actions, q, cfg.agent.clone(), model.fuel_cell.p_fc_max)
}

/// Trains a fresh agent on `cycle`. `on_episode` sees each episode's metrics as they complete.
pub fn train(
    cycle: &DriveCycle,
    model: &PowertrainModel,
    cfg: &TrainConfig,
    mut on_episode: impl FnMut(&EpisodeMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.agent.seed);
    let mut agent = initial_agent(cfg, model, &mut rng)?;
    let mut env = Env::new(cycle, model, &cfg.env)?;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let epsilon = epsilon_schedule(ep, cfg.episodes, cfg.epsilon_start, cfg.epsilon_end);
        learn_episode(&mut agent, &mut env, epsilon, &mut rng)?;
        let m = EpisodeMetrics::from_env(&env, ep, epsilon);
        on_episode(&m);
        episodes.push(m);
    }
    agent.metadata.insert("cycle".into(), cycle.name.clone().into());
    agent.metadata.insert("episodes".into(), cfg.episodes.into());
    agent.metadata.insert("start_penalty".into(), cfg.env.start_penalty.into());
    Ok(TrainOutcome { agent, episodes })
}

/// One ε-greedy episode with a TD update after every step.
pub fn learn_episode(agent: &mut Agent, env: &mut Env<'_>, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let obs = env.reset();
    let mut phi = agent.grid.fuzzify(obs.p_veh, obs.soc);
    let mut phi_next = vec![0.0; phi.len()];
    loop {
        let actions = select_actions(&agent.q, epsilon, agent.config.exploration, rng);
        let sel = agent.selection(&phi, actions)?;
        let r = env.step(sel.power)?;
        agent
            .grid
            .fuzzify_into(r.observation.p_veh, r.observation.soc, &mut phi_next);
        td_update(&mut agent.q, &phi, &sel.actions, r.reward, &phi_next, r.terminal, &agent.config)?;
        std::mem::swap(&mut phi, &mut phi_next);
        if r.terminal {
            return Ok(());
        }
    }
}

/// One greedy pass from the environment's current state. Consumes no randomness.
fn greedy_episode(agent: &Agent, env: &mut Env<'_>, mut record: Option<&mut Vec<StepResult>>) -> Result<()> {
    let actions = greedy_actions(&agent.q);
    let mut obs = env.observation();
    loop {
        let phi = agent.grid.fuzzify(obs.p_veh, obs.soc);
        let sel = agent.selection(&phi, actions.clone())?;
        let r = env.step(sel.power)?;
        obs = r.observation;
        let done = r.terminal;
        if let Some(log) = record.as_deref_mut() {
            log.push(r);
        }
        if done {
            return Ok(());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub repetition: usize,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub n_start: usize,
    pub h2_g_per_100km: Option<f64>,
    pub avg_reward: f64,
    pub episode_return: f64,
    pub steps: usize,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cycle: String,
    pub initial_soc: f64,
    pub soc_ref: f64,
    pub requested_repetitions: usize,
    pub repetitions: Vec<RepetitionMetrics>,
    /// Largest |final SOC − reference| over completed repetitions.
    pub max_soc_deviation: f64,
    pub completed: bool,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Greedy evaluation over `repetitions` consecutive passes of `cycle`.
///
/// SOC and the stack on/off state carry over between passes; the counters
/// reset. A pass that hits an SOC bound ends the evaluation.
pub fn evaluate(
    agent: &Agent,
    cycle: &DriveCycle,
    model: &PowertrainModel,
    env_cfg: &EnvConfig,
    initial_soc: f64,
    repetitions: usize,
) -> Result<EvalReport> {
    evaluate_inner(agent, cycle, model, env_cfg, initial_soc, repetitions, None)
}

/// As [`evaluate`], also returning the per-step log of the first pass.
pub fn evaluate_recorded(
    agent: &Agent,
    cycle: &DriveCycle,
    model: &PowertrainModel,
    env_cfg: &EnvConfig,
    initial_soc: f64,
    repetitions: usize,
) -> Result<(EvalReport, Vec<StepResult>)> {
    let mut log = Vec::with_capacity(cycle.steps());
    let report = evaluate_inner(agent, cycle, model, env_cfg, initial_soc, repetitions, Some(&mut log))?;
    Ok((report, log))
}

fn evaluate_inner(
    agent: &Agent,
    cycle: &DriveCycle,
    model: &PowertrainModel,
    env_cfg: &EnvConfig,
    initial_soc: f64,
    repetitions: usize,
    mut record: Option<&mut Vec<StepResult>>,
) -> Result<EvalReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    let cfg = EnvConfig {
        initial_soc,
        ..env_cfg.clone()
    };
    let mut env = Env::new(cycle, model, &cfg)?;
    let (mut soc, mut fc_on) = (initial_soc, false);
    let mut reps = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        env.reset_from(soc, fc_on)?;
        let log = if rep == 0 { record.as_deref_mut() } else { None };
        greedy_episode(agent, &mut env, log)?;
        let m = EpisodeMetrics::from_env(&env, rep, 0.0);
        reps.push(RepetitionMetrics {
            repetition: rep,
            initial_soc: soc,
            final_soc: m.final_soc,
            n_start: m.n_start,
            h2_g_per_100km: m.h2_g_per_100km,
            avg_reward: m.avg_reward,
            episode_return: m.episode_return,
            steps: m.steps,
            completed: m.completed,
        });
        soc = env.state().soc;
        fc_on = env.state().fc_on;
        if !m.completed {
            break;
        }
    }
    let completed = reps.len() == repetitions && reps.iter().all(|r| r.completed);
    let max_soc_deviation = reps
        .iter()
        .filter(|r| r.completed)
        .map(|r| (r.final_soc - cfg.soc_ref).abs())
        .fold(0.0, f64::max);
    Ok(EvalReport {
        cycle: cycle.name.clone(),
        initial_soc,
        soc_ref: cfg.soc_ref,
        requested_repetitions: repetitions,
        repetitions: reps,
        max_soc_deviation,
        completed,
    })
}

/// Writes the per-episode training curve.
pub fn write_training_curve(path: impl AsRef<Path>, episodes: &[EpisodeMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "epsilon", "avg_reward", "h2_g_per_100km", "final_soc", "n_start", "steps"])?;
    for m in episodes {
        w.write_record([
            m.episode.to_string(),
            m.epsilon.to_string(),
            m.avg_reward.to_string(),
            m.h2_g_per_100km.map(|v| v.to_string()).unwrap_or_default(),
            m.final_soc.to_string(),
            m.n_start.to_string(),
            m.steps.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean greedy-evaluation outcome of agents trained with one start penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub start_penalty: f64,
    pub seeds: Vec<u64>,
    pub mean_n_start: f64,
    pub mean_h2_g_per_100km: f64,
    pub mean_final_soc: f64,
    pub n_start: Vec<usize>,
    pub h2_g_per_100km: Vec<f64>,
    pub final_soc: Vec<f64>,
}

/// Trains one agent per (penalty, seed) pair and evaluates each greedily for one pass.
///
/// Agents sharing a seed share their exploration stream, so penalties are compared pairwise.
pub fn compare_start_penalty(
    cycle: &DriveCycle,
    model: &PowertrainModel,
    base: &TrainConfig,
    penalties: &[f64],
    seeds: &[u64],
) -> Result<Vec<CompareRow>> {
    let jobs: Vec<(usize, u64)> = (0..penalties.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = parallel_map(&jobs, |&(p, seed)| {
        let mut cfg = base.clone();
        cfg.env.start_penalty = penalties[p];
        cfg.agent.seed = seed;
        let out = train(cycle, model, &cfg, |_| {})?;
        evaluate(&out.agent, cycle, model, &cfg.env, cfg.env.initial_soc, 1)
    })?;
    let mut rows = Vec::with_capacity(penalties.len());
    for (p, &penalty) in penalties.iter().enumerate() {
        let reps: Vec<&RepetitionMetrics> = jobs
            .iter()
            .zip(&results)
            .filter(|((jp, _), _)| *jp == p)
            .map(|(_, r)| &r.repetitions[0])
            .collect();
        let n = reps.len() as f64;
        let h2: Vec<f64> = reps.iter().map(|r| r.h2_g_per_100km.unwrap_or(f64::NAN)).collect();
        rows.push(CompareRow {
            start_penalty: penalty,
            seeds: seeds.to_vec(),
            mean_n_start: reps.iter().map(|r| r.n_start as f64).sum::<f64>() / n,
            mean_h2_g_per_100km: h2.iter().sum::<f64>() / n,
            mean_final_soc: reps.iter().map(|r| r.final_soc).sum::<f64>() / n,
            n_start: reps.iter().map(|r| r.n_start).collect(),
            h2_g_per_100km: h2,
            final_soc: reps.iter().map(|r| r.final_soc).collect(),
        });
    }
    Ok(rows)
}

/// Runs `f` over `items` on all available cores, preserving order.
pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::powertrain::VehicleParams;

    fn model() -> &'static PowertrainModel {
        static MODEL: OnceLock<PowertrainModel> = OnceLock::new();
        MODEL.get_or_init(|| PowertrainModel::calibrated_default().unwrap())
    }

    fn short_cycle() -> DriveCycle {
        let full = DriveCycle::builtin("udds", &VehicleParams::default()).unwrap();
        let mut c = DriveCycle::new("udds_head", 0.0, 1.0, full.velocity[..200].to_vec()).unwrap();
        c.derive_power(&VehicleParams::default(), crate::cycle::DEFAULT_POWER_LIMIT);
        c
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(epsilon_schedule(0, 1000, 1.0, 0.001), 1.0);
        assert!((epsilon_schedule(1, 1000, 1.0, 0.001) - 0.993_109_181_374_979_6).abs() < 1e-12);
        assert!((epsilon_schedule(999, 1000, 1.0, 0.001) - 0.001).abs() < 1e-15);
        assert_eq!(epsilon_schedule(0, 1, 0.7, 0.001), 0.7);
        assert_eq!(epsilon_schedule(5, 10, 0.0, 0.0), 0.0);
        let mut prev = 2.0;
        for k in 0..1000 {
            let e = epsilon_schedule(k, 1000, 1.0, 0.001);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_values() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 3,
            agent: AgentConfig {
                learning_rate: 0.0,
                seed: 9,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(&c, model(), &cfg, |_| {}).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = initial_agent(&cfg, model(), &mut rng).unwrap();
        assert_eq!(out.agent.q, init.q);
        assert_eq!(out.episodes.len(), 3);
    }

    #[test]
    fn training_is_reproducible() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 5,
            ..Default::default()
        };
        let a = train(&c, model(), &cfg, |_| {}).unwrap();
        let b = train(&c, model(), &cfg, |_| {}).unwrap();
        let bits = |q: &QArray| q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.agent.q), bits(&b.agent.q));
        assert_eq!(a.episodes, b.episodes);

        let other = TrainConfig {
            agent: AgentConfig {
                seed: 43,
                ..Default::default()
            },
            ..cfg
        };
        let c2 = train(&c, model(), &other, |_| {}).unwrap();
        assert_ne!(bits(&a.agent.q), bits(&c2.agent.q));
    }

    #[test]
    fn single_episode_uses_initial_epsilon() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 1,
            ..Default::default()
        };
        let out = train(&c, model(), &cfg, |_| {}).unwrap();
        assert_eq!(out.episodes[0].epsilon, 1.0);
        assert_eq!(out.episodes[0].steps, 199);
    }

    #[test]
    fn evaluation_carries_soc_between_passes() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 2,
            ..Default::default()
        };
        let out = train(&c, model(), &cfg, |_| {}).unwrap();
        let report = evaluate(&out.agent, &c, model(), &cfg.env, 0.6, 3).unwrap();
        assert_eq!(report.repetitions[0].initial_soc, 0.6);
        for w in report.repetitions.windows(2) {
            assert_eq!(w[1].initial_soc, w[0].final_soc);
        }
        let again = evaluate(&out.agent, &c, model(), &cfg.env, 0.6, 3).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn recorded_trajectory_matches_report() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 1,
            ..Default::default()
        };
        let out = train(&c, model(), &cfg, |_| {}).unwrap();
        let (report, log) = evaluate_recorded(&out.agent, &c, model(), &cfg.env, 0.5, 2).unwrap();
        assert_eq!(log.len(), report.repetitions[0].steps);
        assert_eq!(log.last().unwrap().soc, report.repetitions[0].final_soc);
        let j = crate::env::episode_return(&log, c.dt, cfg.env.start_penalty);
        assert!((j - report.repetitions[0].episode_return).abs() < 1e-9);
    }

    #[test]
    fn training_curve_csv() {
        let c = short_cycle();
        let cfg = TrainConfig {
            episodes: 4,
            ..Default::default()
        };
        let out = train(&c, model(), &cfg, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_training_curve(&path, &out.episodes).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("episode,epsilon,avg_reward,h2_g_per_100km,final_soc,n_start,steps\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn parallel_map_preserves_order_and_errors() {
        let xs: Vec<u64> = (0..50).collect();
        assert_eq!(parallel_map(&xs, |x| Ok(x * 2)).unwrap(), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&xs, |&x| if x == 7 { Err(Error::Terminated) } else { Ok(x) }).is_err());
    }
}
