//! Truncated cell-centred grids over `C^n`, `(0,q)`-form fields, weighted
//! measures and region masks.
//!
//! Coordinates are ordered `(x_1, y_1, x_2, y_2)` with the last axis fastest.
//! Every reduction goes through [`stable_sum`], a sequential compensated sum,
//! so results do not depend on the thread count.

mod dbar;
mod diagnostics;
mod export;
mod sparse;

pub use dbar::{axis_stencil, DbarOperator};
pub use diagnostics::{
    discrete_monomial, discrete_monomials, exact_form_data, exact_form_data_with_margin, moment_orthogonality,
    moment_violation, multi_indices, tail_mass, DEFAULT_SUPPORT_MARGIN,
};
pub use export::{read_raw, write_csv, write_raw, RawHeader, RawPrecision};
pub use sparse::CsrMatrix;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::weights::{BumpedWeight, Point, WeightSpec};

/// Neumaier-compensated sum in iteration order.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn stable_sum_complex(values: impl IntoIterator<Item = Complex64>) -> Complex64 {
    let values: Vec<Complex64> = values.into_iter().collect();
    Complex64::new(
        stable_sum(values.iter().map(|v| v.re)),
        stable_sum(values.iter().map(|v| v.im)),
    )
}

/// Plain Hermitian dot product `Σ a_i · conj(b_i)`.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    stable_sum_complex(a.iter().zip(b).map(|(x, y)| x * y.conj()))
}

pub fn norm2(a: &[Complex64]) -> f64 {
    stable_sum(a.iter().map(|x| x.norm_sqr())).sqrt()
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    half_width: f64,
    points_per_axis: usize,
}

impl Grid {
    pub fn new(n: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if !(1..=2).contains(&n) {
            return Err(Error::Config(format!("complex dimension {n} not in {{1, 2}}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!("box half-width R = {half_width} must be > 0")));
        }
        if points_per_axis < 8 || points_per_axis % 2 != 0 {
            return Err(Error::Config(format!(
                "points per axis N = {points_per_axis} must be even and >= 8"
            )));
        }
        Ok(Self {
            n,
            half_width,
            points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Number of real axes, `2n`.
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// Lebesgue measure of one cell, `h^{2n}`.
    pub fn cell_measure(&self) -> f64 {
        self.spacing().powi(self.axes() as i32)
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.axes() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.axes() - 1 - axis) as u32)
    }

    /// Per-axis indices of a flat point index.
    pub fn multi_index(&self, idx: usize) -> [usize; 4] {
        let mut out = [0; 4];
        let mut rest = idx;
        for axis in (0..self.axes()).rev() {
            out[axis] = rest % self.points_per_axis;
            rest /= self.points_per_axis;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .take(self.axes())
            .enumerate()
            .map(|(axis, &i)| i * self.stride(axis))
            .sum()
    }

    /// Cell-centre coordinate of index `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    pub fn point(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let coords: Vec<Complex64> = (0..self.n)
            .map(|j| Complex64::new(self.coordinate(m[2 * j]), self.coordinate(m[2 * j + 1])))
            .collect();
        Point::new(&coords)
    }

    /// Distance, in cells, from a point to the nearest box face (0 on the boundary layer).
    pub fn boundary_distance(&self, idx: usize) -> usize {
        let m = self.multi_index(idx);
        (0..self.axes())
            .map(|a| m[a].min(self.points_per_axis - 1 - m[a]))
            .min()
            .unwrap_or(0)
    }

    pub fn components(&self, degree: usize) -> usize {
        binomial(self.n, degree)
    }
}

/// Component arrays of a `(0,q)`-form, component-major.
///
/// Component order: `q = 1` → `[dz̄_1, dz̄_2]`, `q = 2` → `[dz̄_1 ∧ dz̄_2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormField {
    grid: Grid,
    degree: usize,
    data: Vec<Complex64>,
}

impl FormField {
    pub fn zeros(grid: Grid, degree: usize) -> Result<Self> {
        if degree > grid.dim() {
            return Err(Error::Shape(format!(
                "form degree {degree} exceeds dimension {}",
                grid.dim()
            )));
        }
        Ok(Self {
            grid,
            degree,
            data: vec![Complex64::new(0.0, 0.0); grid.components(degree) * grid.len()],
        })
    }

    pub fn from_fn(
        grid: Grid,
        degree: usize,
        mut f: impl FnMut(usize, &Point) -> Complex64,
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, degree)?;
        let len = grid.len();
        for c in 0..out.components() {
            for idx in 0..len {
                out.data[c * len + idx] = f(c, &grid.point(idx));
            }
        }
        Ok(out)
    }

    pub fn from_data(grid: Grid, degree: usize, data: Vec<Complex64>) -> Result<Self> {
        let expected = grid.components(degree) * grid.len();
        if degree > grid.dim() || data.len() != expected {
            return Err(Error::Shape(format!(
                "degree {degree} field on this grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NumericalConsistency("form field has non-finite entries".into()));
        }
        Ok(Self { grid, degree, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> usize {
        self.grid.components(self.degree)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn at(&self, c: usize, idx: usize) -> Complex64 {
        self.data[c * self.grid.len() + idx]
    }

    /// Pointwise modulus `(Σ_c |f_c|²)^{1/2}`.
    pub fn pointwise_abs(&self, idx: usize) -> f64 {
        (0..self.components())
            .map(|c| self.at(c, idx).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.pointwise_abs(i))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_on(&self, mask: &RegionMask) -> f64 {
        mask.indices().map(|i| self.pointwise_abs(i)).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Points where any component is non-zero.
    pub fn support(&self) -> RegionMask {
        RegionMask::from_indices(&self.grid, |i| self.pointwise_abs(i) > 0.0)
    }

    pub fn same_shape(&self, other: &FormField) -> bool {
        self.grid == other.grid && self.degree == other.degree
    }

    fn check_shape(&self, other: &FormField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "degree {} field combined with degree {} field on a different grid or degree",
                self.degree, other.degree
            )))
        }
    }

    pub fn add(&self, other: &FormField) -> Result<FormField> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn sub(&self, other: &FormField) -> Result<FormField> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn scale(&self, alpha: Complex64) -> FormField {
        Self {
            data: self.data.iter().map(|a| a * alpha).collect(),
            ..*self
        }
    }

    /// Multiplies every component by a real scalar field.
    pub fn multiply_pointwise(&self, factor: &[f64]) -> FormField {
        let len = self.grid.len();
        assert_eq!(factor.len(), len);
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, a)| a * factor[k % len])
            .collect();
        Self { data, ..*self }
    }

    /// Zeroes every point outside the mask.
    pub fn restrict(&self, mask: &RegionMask) -> FormField {
        let len = self.grid.len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, a)| if mask.contains(k % len) { *a } else { Complex64::new(0.0, 0.0) })
            .collect();
        Self { data, ..*self }
    }

    /// Bilinear pairing `Σ_c Σ_z f_c · g_c · h^{2n}` (no conjugation).
    pub fn bilinear_pairing(&self, other: &FormField) -> Result<Complex64> {
        self.check_shape(other)?;
        let cell = self.grid.cell_measure();
        Ok(stable_sum_complex(self.data.iter().zip(&other.data).map(|(a, b)| a * b)) * cell)
    }

    /// Unweighted `L²` norm, `h^{2n}` quadrature.
    pub fn l2_norm(&self) -> f64 {
        (stable_sum(self.data.iter().map(|a| a.norm_sqr())) * self.grid.cell_measure()).sqrt()
    }
}

/// Pointwise measure `w(z)·h^{2n}`, stored as `ln w` so that huge or tiny
/// weights such as `e^{ψ_k}` stay representable.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure {
    grid: Grid,
    log_weight: Vec<f64>,
}

impl WeightedMeasure {
    pub fn from_log(grid: Grid, log_weight: Vec<f64>) -> Result<Self> {
        if log_weight.len() != grid.len() {
            return Err(Error::Shape("log-weight length differs from grid size".into()));
        }
        if log_weight.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Config("weight must be finite and non-negative".into()));
        }
        Ok(Self { grid, log_weight })
    }

    pub fn uniform(grid: Grid) -> Self {
        Self {
            grid,
            log_weight: vec![0.0; grid.len()],
        }
    }

    /// `w = exp(f(z))`.
    pub fn from_log_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let log_weight = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::from_log(grid, log_weight)
    }

    /// `e^{φ}`
    pub fn exp_weight(grid: Grid, phi: &WeightSpec) -> Result<Self> {
        Self::from_log_fn(grid, |p| phi.value(p))
    }

    /// `c_φ·e^{φ}`; zero where `c_φ = 0`.
    pub fn c_exp_weight(grid: Grid, phi: &WeightSpec) -> Result<Self> {
        let log_weight = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                Ok(log_or_neg_inf(phi.smallest_eigenvalue(&p)?) + phi.value(&p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_log(grid, log_weight)
    }

    /// `e^{ψ_k}`
    pub fn bumped_exp_weight(grid: Grid, psi: &BumpedWeight) -> Result<Self> {
        Self::from_log_fn(grid, |p| psi.value(p))
    }

    /// `c_φ·e^{ψ_k}`, with `c_φ` standing in for `c_{ψ_k}`.
    pub fn bumped_c_exp_weight(grid: Grid, psi: &BumpedWeight) -> Result<Self> {
        let log_weight = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                Ok(log_or_neg_inf(psi.base.smallest_eigenvalue(&p)?) + psi.value(&p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_log(grid, log_weight)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weight
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.log_weight[idx].exp()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.log_weight.iter().all(|v| v.is_finite())
    }

    /// Replaces `w` by `max(w, floor)`.
    pub fn with_floor(&self, floor: f64) -> Self {
        let lf = floor.ln();
        Self {
            grid: self.grid,
            log_weight: self.log_weight.iter().map(|&v| v.max(lf)).collect(),
        }
    }

    /// `|a|²·w` evaluated in the log domain.
    pub(crate) fn weighted_sqr(&self, a: Complex64, idx: usize) -> f64 {
        let m = a.norm();
        if m == 0.0 {
            0.0
        } else {
            (2.0 * m.ln() + self.log_weight[idx]).exp()
        }
    }

    fn check_grid(&self, f: &FormField) -> Result<()> {
        if f.grid() != &self.grid {
            Err(Error::Shape("field and measure live on different grids".into()))
        } else {
            Ok(())
        }
    }

    /// Weighted Hermitian inner product `Σ f·conj(g)·w·h^{2n}`.
    pub fn inner(&self, f: &FormField, g: &FormField) -> Result<Complex64> {
        self.check_grid(f)?;
        f.check_shape(g)?;
        let len = self.grid.len();
        let cell = self.grid.cell_measure();
        let terms = f.data.iter().zip(&g.data).enumerate().map(|(k, (a, b))| {
            let p = a * b.conj();
            if p.re == 0.0 && p.im == 0.0 {
                p
            } else {
                let m = p.norm();
                p / m * (m.ln() + self.log_weight[k % len]).exp()
            }
        });
        Ok(stable_sum_complex(terms) * cell)
    }
}

fn log_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `(Σ |f|²·w·h^{2n})^{1/2}`
pub fn weighted_norm(f: &FormField, w: &WeightedMeasure) -> Result<f64> {
    Ok(weighted_norm_sqr(f, w)?.sqrt())
}

pub fn weighted_norm_sqr(f: &FormField, w: &WeightedMeasure) -> Result<f64> {
    w.check_grid(f)?;
    let len = w.grid.len();
    let sum = stable_sum(
        f.data
            .iter()
            .enumerate()
            .map(|(k, a)| w.weighted_sqr(*a, k % len)),
    );
    Ok(sum * w.grid.cell_measure())
}

/// Boolean predicate over grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: Grid,
    inside: Vec<bool>,
}

impl RegionMask {
    pub fn from_indices(grid: &Grid, f: impl Fn(usize) -> bool) -> Self {
        Self {
            grid: *grid,
            inside: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn from_points(grid: &Grid, f: impl Fn(&Point) -> bool) -> Self {
        Self::from_indices(grid, |i| f(&grid.point(i)))
    }

    pub fn everything(grid: &Grid) -> Self {
        Self::from_indices(grid, |_| true)
    }

    /// Points with `|z - c| < radius`.
    pub fn ball(grid: &Grid, center: &Point, radius: f64) -> Self {
        Self::from_points(grid, |p| p.sub(center).norm_sqr() < radius * radius)
    }

    /// Points at least `margin` cells from every box face.
    pub fn interior(grid: &Grid, margin: usize) -> Self {
        Self::from_indices(grid, |i| grid.boundary_distance(i) >= margin)
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid,
            inside: self.inside.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersect(&self, other: &RegionMask) -> Self {
        Self {
            grid: self.grid,
            inside: self.inside.iter().zip(&other.inside).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Whether every point of `self` is in `other`.
    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.inside.iter().zip(&other.inside).all(|(a, b)| !a || *b)
    }

    /// Grows the mask by `cells` in the max-norm over index space.
    pub fn dilate(&self, cells: usize) -> Self {
        let g = self.grid;
        let n = g.points_per_axis() as isize;
        let mut out = self.inside.clone();
        for _ in 0..cells {
            let prev = out.clone();
            for idx in 0..g.len() {
                if prev[idx] {
                    continue;
                }
                let m = g.multi_index(idx);
                'axes: for axis in 0..g.axes() {
                    for step in [-1isize, 1] {
                        let j = m[axis] as isize + step;
                        if j >= 0 && j < n {
                            let nb = (idx as isize + step * g.stride(axis) as isize) as usize;
                            if prev[nb] {
                                out[idx] = true;
                                break 'axes;
                            }
                        }
                    }
                }
            }
        }
        Self {
            grid: g,
            inside: out,
        }
    }
}
