use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear 1-D lookup with flat extrapolation beyond the end points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLookup", into = "RawLookup")]
pub struct Lookup {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLookup {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<RawLookup> for Lookup {
    type Error = Error;

    fn try_from(raw: RawLookup) -> Result<Self> {
        Lookup::new(raw.x, raw.y)
    }
}

impl From<Lookup> for RawLookup {
    fn from(l: Lookup) -> Self {
        RawLookup { x: l.xs, y: l.ys }
    }
}

impl Lookup {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Param(format!(
                "lookup needs matching non-empty axes, got {} x and {} y",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Param("lookup values must be finite".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Param("lookup x axis must be strictly increasing".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn constant(y: f64) -> Self {
        Self {
            xs: vec![0.0],
            ys: vec![y],
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // first index with xs[hi] > x; guaranteed in 1..n here
        let hi = self.xs.partition_point(|&xi| xi <= x);
        let lo = hi - 1;
        let t = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + t * (self.ys[hi] - self.ys[lo])
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn min_y(&self) -> f64 {
        self.ys.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_y(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_saturates() {
        let l = Lookup::new(vec![0.2, 0.8], vec![230.0, 260.0]).unwrap();
        assert_eq!(l.eval(0.0), 230.0);
        assert_eq!(l.eval(1.0), 260.0);
        assert!((l.eval(0.5) - 245.0).abs() < 1e-12);
        assert_eq!(l.eval(0.2), 230.0);
    }

    #[test]
    fn rejects_unsorted_axis() {
        assert!(Lookup::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Lookup::new(vec![], vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let l = Lookup::new(vec![0.0, 1.0], vec![0.9, 0.95]).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(s, r#"{"x":[0.0,1.0],"y":[0.9,0.95]}"#);
        let back: Lookup = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        assert!(serde_json::from_str::<Lookup>(r#"{"x":[1.0,0.0],"y":[0,0]}"#).is_err());
    }
}
