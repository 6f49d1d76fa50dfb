//! The three report-producing procedures: compact support by weight bumping,
//! support avoidance, and the approximation of non-compactly supported data.

mod approx;
mod avoid;
mod decay;

pub use approx::{approximation_procedure, ApproxParams, ApproxReport, ApproxStage};
pub use avoid::{leibniz_defect, support_avoidance, AvoidanceParams, AvoidanceReport};
pub use decay::{compact_support_experiment, DecayReport, DecayRow, TAIL_FLOOR};

use crate::grid::{FormField, Grid};
use crate::weights::Point;

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³` on `[0, 1]`, clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Radial cutoff: `1` on `|z − c| ≤ inner`, `0` on `|z − c| ≥ outer`, quintic
/// smoothstep in between. The largest slope is `15/(8·(outer − inner))`.
#[derive(Debug, Clone, Copy)]
pub struct RadialCutoff {
    pub center: Point,
    pub inner: f64,
    pub outer: f64,
}

impl RadialCutoff {
    pub fn value(&self, z: &Point) -> f64 {
        let r = z.sub(&self.center).norm_sqr().sqrt();
        1.0 - smoothstep((r - self.inner) / (self.outer - self.inner))
    }

    pub fn on_grid(&self, grid: Grid) -> FormField {
        FormField::from_fn(grid, 0, |_, p| self.value(p).into())
            .expect("degree 0 always exists")
    }

    /// Values as a real array, one per grid point.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.value(&grid.point(i))).collect()
    }
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn smoothstep_shape() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
        // maximal slope 15/8 at the midpoint
        let d = (smoothstep(0.5 + 1e-6) - smoothstep(0.5 - 1e-6)) / 2e-6;
        assert!((d - 15.0 / 8.0).abs() < 1e-6);
    }

    #[test]
    fn radial_cutoff_levels() {
        let chi = RadialCutoff {
            center: Point::origin(1),
            inner: 1.0,
            outer: 2.0,
        };
        let at = |r: f64| chi.value(&Point::new(&[Complex64::new(r, 0.0)]));
        assert_eq!(at(0.5), 1.0);
        assert_eq!(at(1.0), 1.0);
        assert_eq!(at(2.0), 0.0);
        assert_eq!(at(3.0), 0.0);
        assert!((at(1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn slope_of_a_line() {
        let x = [0.0, 2.0, 4.0, 6.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 1.25 * v).collect();
        assert!((fit_slope(&x, &y) + 1.25).abs() < 1e-14);
    }
}
