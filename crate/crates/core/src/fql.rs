//! Fuzzy Q-learning: one row of fuzzy-action values per rule.
//!
//! The value of a composite selection is the firing-strength weighted
//! average of the selected entries; updates spread the TD error over the
//! rules in proportion to how strongly each one fired.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fis::{ActionSet, RuleGrid};

/// Per-rule, per-fuzzy-action values, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QArray {
    rules: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QArray {
    pub fn zeros(rules: usize, actions: usize) -> Self {
        Self {
            rules,
            actions,
            values: vec![0.0; rules * actions],
        }
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn random<R: Rng + ?Sized>(rules: usize, actions: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let values = (0..rules * actions)
            .map(|_| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        Self {
            rules,
            actions,
            values,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let rules = rows.len();
        let actions = rows.first().map_or(0, Vec::len);
        if rules == 0 || actions == 0 {
            return Err(Error::Param("q-array must be non-empty".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != actions) {
            return Err(Error::ShapeMismatch {
                expected_m: rules,
                expected_n: actions,
                found_m: rules,
                found_n: bad.len(),
            });
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("q-array entries must be finite".into()));
        }
        Ok(Self {
            rules,
            actions,
            values,
        })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.actions).map(<[f64]>::to_vec).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rules, self.actions)
    }

    pub fn row(&self, rule: usize) -> &[f64] {
        &self.values[rule * self.actions..(rule + 1) * self.actions]
    }

    pub fn get(&self, rule: usize, action: usize) -> f64 {
        self.values[rule * self.actions + action]
    }

    pub fn set(&mut self, rule: usize, action: usize, v: f64) {
        self.values[rule * self.actions + action] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Index of the largest entry of `rule`; ties go to the lowest index.
    pub fn argmax(&self, rule: usize) -> usize {
        let row = self.row(rule);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn row_max(&self, rule: usize) -> f64 {
        self.row(rule)[self.argmax(rule)]
    }
}

/// How a uniform draw `u` is compared against ε.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationRule {
    /// Random action when `u < ε`.
    #[default]
    Standard,
    /// Greedy action when `ε >= u`, random otherwise.
    Inverted,
}

impl FromStr for ExplorationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "inverted" => Ok(Self::Inverted),
            other => Err(Error::Config(format!(
                "unknown exploration rule `{other}` (expected standard|inverted)"
            ))),
        }
    }
}

impl fmt::Display for ExplorationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Inverted => "inverted",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub exploration: ExplorationRule,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            discount: 0.999,
            exploration: ExplorationRule::Standard,
            seed: 42,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is accepted so a frozen run can be expressed as a training run
        if !(self.learning_rate >= 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config(format!(
                "learning rate must be in [0, 1), got {}",
                self.learning_rate
            )));
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount must be in [0, 1), got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

fn strength_sum(phi: &[f64]) -> Result<f64> {
    let total: f64 = phi.iter().sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::Degenerate(total))
    }
}

/// Best fuzzy action of every rule.
pub fn greedy_actions(q: &QArray) -> Vec<usize> {
    (0..q.rules).map(|i| q.argmax(i)).collect()
}

/// ε-greedy choice per rule.
///
/// Draws one uniform per rule, in rule order, plus one more for each rule
/// that explores.
pub fn select_actions<R: Rng + ?Sized>(
    q: &QArray,
    epsilon: f64,
    rule: ExplorationRule,
    rng: &mut R,
) -> Vec<usize> {
    let n = q.actions;
    (0..q.rules)
        .map(|i| {
            let u: f64 = rng.random();
            let explore = match rule {
                ExplorationRule::Standard => u < epsilon,
                ExplorationRule::Inverted => !(epsilon >= u),
            };
            if explore {
                ((rng.random::<f64>() * n as f64) as usize).min(n - 1)
            } else {
                q.argmax(i)
            }
        })
        .collect()
}

/// Crisp command from per-rule fuzzy actions, clamped to `[0, p_max]`.
pub fn compose_action(actions: &[usize], phi: &[f64], set: &ActionSet, p_max: f64) -> Result<f64> {
    let total = strength_sum(phi)?;
    let levels = set.levels();
    let weighted: f64 = actions
        .iter()
        .zip(phi)
        .filter(|(_, &w)| w != 0.0)
        .map(|(&a, &w)| levels[a] * w)
        .sum();
    Ok((weighted / total).clamp(0.0, p_max))
}

/// Value of the executed selection.
pub fn q_of_selection(phi: &[f64], actions: &[usize], q: &QArray) -> Result<f64> {
    let total = strength_sum(phi)?;
    let weighted: f64 = actions
        .iter()
        .zip(phi)
        .enumerate()
        .filter(|(_, (_, &w))| w != 0.0)
        .map(|(i, (&a, &w))| q.get(i, a) * w)
        .sum();
    Ok(weighted / total)
}

/// Greedy state value: weighted average of every rule's row maximum.
pub fn state_value(phi: &[f64], q: &QArray) -> Result<f64> {
    let total = strength_sum(phi)?;
    let weighted: f64 = phi
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(i, &w)| q.row_max(i) * w)
        .sum();
    Ok(weighted / total)
}

/// One TD(0) step on the entries selected in `actions`. Returns the TD error.
pub fn td_update(
    q: &mut QArray,
    phi: &[f64],
    actions: &[usize],
    reward: f64,
    phi_next: &[f64],
    terminal: bool,
    cfg: &AgentConfig,
) -> Result<f64> {
    let total = strength_sum(phi)?;
    let current = q_of_selection(phi, actions, q)?;
    let target = if terminal {
        reward
    } else {
        reward + cfg.discount * state_value(phi_next, q)?
    };
    let delta = target - current;
    for (i, (&a, &w)) in actions.iter().zip(phi).enumerate() {
        if w > 0.0 {
            let v = q.get(i, a) + cfg.learning_rate * delta * (w / total);
            q.set(i, a, v);
        }
    }
    Ok(delta)
}

/// Outcome of choosing an action for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSelection {
    pub actions: Vec<usize>,
    /// Composed crisp command, W.
    pub power: f64,
    pub q_value: f64,
}

/// Rule base, action levels and learned values.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub grid: RuleGrid,
    pub action_set: ActionSet,
    pub q: QArray,
    pub config: AgentConfig,
    /// Command ceiling, W.
    pub p_fc_max: f64,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    m: usize,
    n: usize,
    alpha: f64,
    gamma: f64,
    seed: u64,
    #[serde(default)]
    exploration: ExplorationRule,
    p_fc_max: f64,
    q: Vec<Vec<f64>>,
    partitions: RuleGrid,
    action_set: ActionSet,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

impl Agent {
    pub fn new(grid: RuleGrid, action_set: ActionSet, q: QArray, config: AgentConfig, p_fc_max: f64) -> Result<Self> {
        let expected = (grid.rules(), action_set.len());
        if q.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected_m: expected.0,
                expected_n: expected.1,
                found_m: q.rules,
                found_n: q.actions,
            });
        }
        config.validate()?;
        Ok(Self {
            grid,
            action_set,
            q,
            config,
            p_fc_max,
            metadata: BTreeMap::new(),
        })
    }

    /// Greedy command for a crisp state.
    pub fn act_greedy(&self, p_veh: f64, soc: f64) -> Result<ActionSelection> {
        let phi = self.grid.fuzzify(p_veh, soc);
        let actions = greedy_actions(&self.q);
        self.selection(&phi, actions)
    }

    pub fn selection(&self, phi: &[f64], actions: Vec<usize>) -> Result<ActionSelection> {
        let power = compose_action(&actions, phi, &self.action_set, self.p_fc_max)?;
        let q_value = q_of_selection(phi, &actions, &self.q)?;
        Ok(ActionSelection {
            actions,
            power,
            q_value,
        })
    }

    pub fn ensure_shape(&self, rules: usize, actions: usize) -> Result<()> {
        let (m, n) = self.q.shape();
        if (m, n) != (rules, actions) {
            return Err(Error::ShapeMismatch {
                expected_m: rules,
                expected_n: actions,
                found_m: m,
                found_n: n,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let (m, n) = self.q.shape();
        let file = AgentFile {
            m,
            n,
            alpha: self.config.learning_rate,
            gamma: self.config.discount,
            seed: self.config.seed,
            exploration: self.config.exploration,
            p_fc_max: self.p_fc_max,
            q: self.q.rows(),
            partitions: self.grid.clone(),
            action_set: self.action_set.clone(),
            metadata: self.metadata.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: AgentFile = serde_json::from_str(s)?;
        let q = QArray::from_rows(file.q)?;
        if q.shape() != (file.m, file.n) {
            return Err(Error::ShapeMismatch {
                expected_m: file.m,
                expected_n: file.n,
                found_m: q.rules,
                found_n: q.actions,
            });
        }
        let config = AgentConfig {
            learning_rate: file.alpha,
            discount: file.gamma,
            exploration: file.exploration,
            seed: file.seed,
        };
        let mut agent = Agent::new(file.partitions, file.action_set, q, config, file.p_fc_max)?;
        agent.metadata = file.metadata;
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
