//! Fuzzifier and weighted-average defuzzifier.
//!
//! Every dimension is covered by triangular sets anchored on their
//! neighbours' typical values, with the outermost sets saturating. Memberships
//! in a dimension therefore always sum to one, and so do the product rule
//! strengths over the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzySet {
    pub label: String,
    pub typical: f64,
}

/// Ordered triangular sets over one state dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct FuzzyPartition {
    dimension: String,
    sets: Vec<FuzzySet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    dimension: String,
    labels: Vec<String>,
    typicals: Vec<f64>,
}

impl TryFrom<RawPartition> for FuzzyPartition {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        if raw.labels.len() != raw.typicals.len() {
            return Err(Error::Param(format!(
                "partition `{}`: {} labels for {} typical values",
                raw.dimension,
                raw.labels.len(),
                raw.typicals.len()
            )));
        }
        let sets = raw
            .labels
            .into_iter()
            .zip(raw.typicals)
            .map(|(label, typical)| FuzzySet { label, typical })
            .collect();
        FuzzyPartition::new(raw.dimension, sets)
    }
}

impl From<FuzzyPartition> for RawPartition {
    fn from(p: FuzzyPartition) -> Self {
        RawPartition {
            dimension: p.dimension,
            labels: p.sets.iter().map(|s| s.label.clone()).collect(),
            typicals: p.sets.iter().map(|s| s.typical).collect(),
        }
    }
}

/// Nonzero memberships of one crisp value: at most two neighbouring sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation {
    pub lower: usize,
    pub lower_degree: f64,
    /// Absent when the value sits on a typical value or in a shoulder.
    pub upper: Option<(usize, f64)>,
}

impl FuzzyPartition {
    pub fn new(dimension: impl Into<String>, sets: Vec<FuzzySet>) -> Result<Self> {
        let dimension = dimension.into();
        if sets.is_empty() {
            return Err(Error::Param(format!("partition `{dimension}` has no sets")));
        }
        if sets.iter().any(|s| !s.typical.is_finite()) {
            return Err(Error::Param(format!("partition `{dimension}`: non-finite typical value")));
        }
        if sets.windows(2).any(|w| w[1].typical <= w[0].typical) {
            return Err(Error::Param(format!(
                "partition `{dimension}`: typical values must be strictly increasing"
            )));
        }
        for (k, s) in sets.iter().enumerate() {
            if sets[..k].iter().any(|o| o.label == s.label) {
                return Err(Error::Param(format!(
                    "partition `{dimension}`: duplicate label `{}`",
                    s.label
                )));
            }
        }
        Ok(Self { dimension, sets })
    }

    pub fn from_pairs(dimension: &str, pairs: &[(&str, f64)]) -> Result<Self> {
        let sets = pairs
            .iter()
            .map(|&(label, typical)| FuzzySet {
                label: label.to_owned(),
                typical,
            })
            .collect();
        Self::new(dimension, sets)
    }

    pub fn dimension(&self) -> &str {
        &self.dimension
    }

    pub fn sets(&self) -> &[FuzzySet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.sets[0].typical, self.sets[self.sets.len() - 1].typical)
    }

    pub fn activate(&self, x: f64) -> Activation {
        let (lo, hi) = self.range();
        let x = x.clamp(lo, hi);
        // first set whose typical value exceeds x
        let upper = self.sets.partition_point(|s| s.typical <= x);
        if upper == 0 || upper == self.sets.len() {
            let k = upper.saturating_sub(1);
            return Activation {
                lower: k,
                lower_degree: 1.0,
                upper: None,
            };
        }
        let lower = upper - 1;
        let (a, b) = (self.sets[lower].typical, self.sets[upper].typical);
        let w = (x - a) / (b - a);
        if w == 0.0 {
            return Activation {
                lower,
                lower_degree: 1.0,
                upper: None,
            };
        }
        Activation {
            lower,
            lower_degree: 1.0 - w,
            upper: Some((upper, w)),
        }
    }

    /// Degree of membership of `x` in set `k`.
    pub fn membership(&self, x: f64, k: usize) -> f64 {
        let act = self.activate(x);
        if act.lower == k {
            act.lower_degree
        } else {
            match act.upper {
                Some((u, d)) if u == k => d,
                _ => 0.0,
            }
        }
    }
}

/// Fuzzy output levels (W) the agent chooses between per rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet(Vec<f64>);

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        ActionSet::new(levels)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(a: ActionSet) -> Self {
        a.0
    }
}

impl ActionSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("action set needs finite levels".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Param("action levels must be strictly increasing".into()));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self(
            [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
                .iter()
                .map(|kw| kw * 1000.0)
                .collect(),
        )
    }
}

/// Two-input rule base: one rule per (demand set, SOC set) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleGrid {
    /// Demanded power, W.
    pub p_veh: FuzzyPartition,
    /// State of charge, fraction.
    pub soc: FuzzyPartition,
}

impl Default for RuleGrid {
    fn default() -> Self {
        let kw = |v: f64| v * 1000.0;
        Self {
            p_veh: FuzzyPartition::from_pairs(
                "p_veh",
                &[
                    ("NH", kw(-50.0)),
                    ("NM", kw(-20.0)),
                    ("NL", kw(-10.0)),
                    ("ZO", 0.0),
                    ("PL", kw(10.0)),
                    ("PM", kw(20.0)),
                    ("PH", kw(50.0)),
                ],
            )
            .expect("static partition"),
            soc: FuzzyPartition::from_pairs(
                "soc",
                &[("VL", 0.2), ("L", 0.4), ("M", 0.5), ("H", 0.6), ("VH", 0.8)],
            )
            .expect("static partition"),
        }
    }
}

impl RuleGrid {
    pub fn rules(&self) -> usize {
        self.p_veh.len() * self.soc.len()
    }

    pub fn rule_index(&self, i_pveh: usize, i_soc: usize) -> usize {
        i_pveh * self.soc.len() + i_soc
    }

    pub fn rule_sets(&self, rule: usize) -> (usize, usize) {
        (rule / self.soc.len(), rule % self.soc.len())
    }

    pub fn rule_label(&self, rule: usize) -> String {
        let (a, b) = self.rule_sets(rule);
        format!("{}/{}", self.p_veh.sets()[a].label, self.soc.sets()[b].label)
    }

    /// Rule firing strengths for the crisp state (algebraic-product AND).
    pub fn fuzzify(&self, p_veh: f64, soc: f64) -> Vec<f64> {
        let mut phi = vec![0.0; self.rules()];
        self.fuzzify_into(p_veh, soc, &mut phi);
        phi
    }

    pub fn fuzzify_into(&self, p_veh: f64, soc: f64, phi: &mut [f64]) {
        debug_assert_eq!(phi.len(), self.rules());
        phi.fill(0.0);
        let pa = self.p_veh.activate(p_veh);
        let sa = self.soc.activate(soc);
        let expand = |a: Activation| {
            std::iter::once((a.lower, a.lower_degree)).chain(a.upper)
        };
        for (ip, dp) in expand(pa) {
            for (is, ds) in expand(sa) {
                phi[self.rule_index(ip, is)] = dp * ds;
            }
        }
    }
}

/// Weighted-average defuzzification of per-rule `values`.
pub fn defuzzify(values: &[f64], phi: &[f64]) -> Result<f64> {
    debug_assert_eq!(values.len(), phi.len());
    let total: f64 = phi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(total));
    }
    let weighted: f64 = values.iter().zip(phi).map(|(y, w)| y * w).sum();
    Ok(weighted / total)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = RuleGrid::default();
        assert_eq!(g.rules(), 35);
        assert_eq!(ActionSet::default().len(), 8);
        assert_eq!(g.rule_label(g.rule_index(4, 2)), "PL/M");
    }

    #[test]
    fn peak_is_one_hot() {
        let g = RuleGrid::default();
        for (k, s) in g.p_veh.sets().iter().enumerate() {
            for j in 0..g.p_veh.len() {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert_eq!(g.p_veh.membership(s.typical, j), expect);
            }
        }
    }

    #[test]
    fn midpoint_splits_evenly() {
        let g = RuleGrid::default();
        assert!((g.p_veh.membership(15_000.0, 4) - 0.5).abs() < 1e-15);
        assert!((g.p_veh.membership(15_000.0, 5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shoulders_saturate() {
        let g = RuleGrid::default();
        assert_eq!(g.p_veh.membership(-100_000.0, 0), 1.0);
        assert_eq!(g.p_veh.membership(1e9, 6), 1.0);
        assert_eq!(g.soc.membership(0.0, 0), 1.0);
    }

    #[test]
    fn fuzzify_examples() {
        let g = RuleGrid::default();
        let phi = g.fuzzify(10_000.0, 0.5);
        let k = g.rule_index(4, 2);
        assert_eq!(phi[k], 1.0);
        assert_eq!(phi.iter().filter(|&&v| v != 0.0).count(), 1);

        let phi = g.fuzzify(15_000.0, 0.5);
        assert!((phi[g.rule_index(4, 2)] - 0.5).abs() < 1e-15);
        assert!((phi[g.rule_index(5, 2)] - 0.5).abs() < 1e-15);
        assert_eq!(phi.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn partition_of_unity_over_random_states() {
        let g = RuleGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = rng.random_range(-60_000.0..60_000.0);
            let s = rng.random_range(0.0..1.0);
            let phi = g.fuzzify(p, s);
            let sum: f64 = phi.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(phi.iter().filter(|&&v| v != 0.0).count() <= 4);
        }
    }

    #[test]
    fn defuzzify_examples() {
        let mut phi = vec![0.0; 4];
        phi[2] = 1.0;
        assert_eq!(defuzzify(&[1.0, 2.0, 3.0, 4.0], &phi).unwrap(), 3.0);
        assert_eq!(defuzzify(&[2.0, 5.0], &[0.5, 0.5]).unwrap(), 3.5);
        assert!(matches!(defuzzify(&[1.0], &[0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn partition_json_shape() {
        let g = RuleGrid::default();
        let json = serde_json::to_value(&g.soc).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"dimension": "soc", "labels": ["VL","L","M","H","VH"],
                               "typicals": [0.2, 0.4, 0.5, 0.6, 0.8]})
        );
        let bad = serde_json::json!({"dimension": "x", "labels": ["a","a"], "typicals": [0.0, 1.0]});
        assert!(serde_json::from_value::<FuzzyPartition>(bad).is_err());
        let unsorted = serde_json::json!({"dimension": "x", "labels": ["a","b"], "typicals": [1.0, 0.0]});
        assert!(serde_json::from_value::<FuzzyPartition>(unsorted).is_err());
    }

    proptest! {
        #[test]
        fn memberships_are_continuous(p in -55_000.0f64..55_000.0, s in 0.1f64..0.9, d in -1.0f64..1.0) {
            let g = RuleGrid::default();
            let a = g.fuzzify(p, s);
            let b = g.fuzzify(p + d, s + d * 1e-5);
            // steepest slopes: 1/10 kW on demand, 1/0.1 on SOC
            let bound = d.abs() / 10_000.0 + d.abs() * 1e-5 / 0.1 + 1e-12;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 2.0 * bound);
            }
        }

        #[test]
        fn defuzzify_is_convex_and_scale_free(
            values in prop::collection::vec(-10.0f64..10.0, 5),
            weights in prop::collection::vec(0.0f64..1.0, 5),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let y = defuzzify(&values, &weights).unwrap();
            let used = values.iter().zip(&weights).filter(|(_, w)| **w > 0.0).map(|(v, _)| *v);
            let (lo, hi) = used.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
            let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let ys = defuzzify(&values, &scaled).unwrap();
            prop_assert!((y - ys).abs() < 1e-9);
        }
    }
}
