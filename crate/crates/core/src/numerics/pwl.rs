//! Continuous piecewise-linear functions on a finite knot set.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Continuous piecewise-linear function; outside the knot range it extends
/// with the end slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<PiecewiseLinear> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(usage("piecewise-linear function needs at least two knots"));
        }
        if let Some(i) = xs.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(usage(format!(
                "knots must be strictly increasing (x[{}] = {}, x[{}] = {})",
                i,
                xs[i],
                i + 1,
                xs[i + 1]
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(usage("knots must be finite"));
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    pub fn from_points(points: &[(f64, f64)]) -> Result<PiecewiseLinear> {
        PiecewiseLinear::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// Slope of cell `i`, between knots `i` and `i + 1`.
    pub fn slope(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    /// Index of the cell containing `x` (end cells extend outward).
    pub fn cell(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.cell(x);
        self.ys[i] + self.slope(i) * (x - self.xs[i])
    }

    /// Right derivative; at the last knot, the last slope.
    pub fn right_derivative(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = self.xs.partition_point(|&k| k <= x);
        if i == 0 {
            self.slope(0)
        } else {
            self.slope((i - 1).min(n - 2))
        }
    }

    /// Left derivative; at the first knot, the first slope.
    pub fn left_derivative(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&k| k < x);
        if i == 0 {
            self.slope(0)
        } else {
            self.slope((i - 1).min(self.xs.len() - 2))
        }
    }

    /// Convexity: cell slopes nondecreasing up to a relative tolerance.
    pub fn is_convex(&self, rel_tol: f64) -> bool {
        (1..self.xs.len() - 1).all(|i| {
            let (a, b) = (self.slope(i - 1), self.slope(i));
            b >= a - rel_tol * a.abs().max(b.abs()).max(1.0)
        })
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_and_slopes() {
        let f = PiecewiseLinear::from_points(&[(0.0, 1.0), (1.0, 2.0), (3.0, 6.0)]).unwrap();
        assert_eq!(f.eval(0.5), 1.5);
        assert_eq!(f.eval(2.0), 4.0);
        assert_eq!(f.eval(4.0), 8.0);
        assert_eq!(f.right_derivative(1.0), 2.0);
        assert_eq!(f.left_derivative(1.0), 1.0);
        assert!(f.is_convex(0.0));
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(PiecewiseLinear::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(PiecewiseLinear::new(vec![1.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn detects_nonconvexity() {
        let f = PiecewiseLinear::from_points(&[(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)]).unwrap();
        assert!(!f.is_convex(0.0));
    }
}
