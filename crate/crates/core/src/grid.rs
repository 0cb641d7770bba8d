use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization `t_k = k * dt`, `k = 0..=steps`, of `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Input(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::Input("step count must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of grid node `k`; the last node is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_increasing_and_end_at_horizon() {
        let g = TimeGrid::new(1.3, 7).unwrap();
        let ts: Vec<f64> = g.times().collect();
        assert_eq!(ts.len(), 8);
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 1.3);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }
}
