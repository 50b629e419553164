//! Min-max feature scaling onto the unit hypercube.

use serde::{Deserialize, Serialize};

/// Default widening applied to constant features.
pub const DEFAULT_SCALER_EPS: f64 = 1e-6;

/// Per-feature affine map fitted on the training split.
///
/// `apply` maps `[min, max]` onto `[0, 1]` and clamps everything outside.
/// A feature that is constant on the training split is widened to
/// `[v - eps, v + eps]`, so its training value maps to `0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub eps: f64,
}

impl ScalerParams {
    /// Fits on `rows`. Returns the scaler and the indices of features that
    /// had to be widened because they were constant.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], eps: f64) -> (Self, Vec<usize>) {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for (j, &v) in row.as_ref().iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let mut widened = Vec::new();
        for j in 0..dim {
            if max[j] <= min[j] {
                let v = min[j];
                min[j] = v - eps;
                max[j] = v + eps;
                widened.push(j);
            }
        }
        (ScalerParams { min, max, eps }, widened)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        ((v - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0)
    }

    pub fn unscale_value(&self, j: usize, u: f64) -> f64 {
        self.min[j] + u * (self.max[j] - self.min[j])
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| self.scale_value(j, v))
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &u)| self.unscale_value(j, u))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_range_and_clamps() {
        let rows = vec![vec![2.0], vec![4.0]];
        let (s, widened) = ScalerParams::fit(&rows, DEFAULT_SCALER_EPS);
        assert!(widened.is_empty());
        assert_eq!(s.scale_value(0, 3.0), 0.5);
        assert_eq!(s.scale_value(0, 5.0), 1.0);
        assert_eq!(s.scale_value(0, 1.0), 0.0);
    }

    #[test]
    fn constant_feature_is_widened() {
        let rows = vec![vec![7.0, 1.0], vec![7.0, 3.0]];
        let (s, widened) = ScalerParams::fit(&rows, DEFAULT_SCALER_EPS);
        assert_eq!(widened, vec![0]);
        assert!((s.scale_value(0, 7.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unscale_inverts_scale_in_range() {
        let rows = vec![vec![-3.0, 10.0], vec![5.0, 11.5]];
        let (s, _) = ScalerParams::fit(&rows, DEFAULT_SCALER_EPS);
        for v in [-3.0, -1.25, 0.0, 4.9, 5.0] {
            let back = s.unscale_value(0, s.scale_value(0, v));
            assert!((back - v).abs() < 1e-12);
        }
    }
}
