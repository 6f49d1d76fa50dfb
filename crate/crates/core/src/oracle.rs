//! Independent references: the solid Cauchy transform in one variable, a dense
//! minimal-norm solve on tiny grids, and finite-difference derivative checks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{stable_sum, FormField, Grid, WeightedMeasure, DEFAULT_SUPPORT_MARGIN};
use crate::weights::{Point, WeightSpec};

/// `(1/π)∬_{cell} dm(ζ)/(z − ζ)` for the cell whose centre sits at offset
/// `(a, b)·h` from `z`.
///
/// Exact on the 3×3 block around the singularity, midpoint rule elsewhere.
fn cauchy_cell_integral(a: i64, b: i64, h: f64) -> Complex64 {
    if a.abs() <= 1 && b.abs() <= 1 {
        // z − ζ ranges over the rectangle centred at (−a, −b)·h
        let (cx, cy) = (-(a as f64) * h, -(b as f64) * h);
        let (x0, x1) = (cx - 0.5 * h, cx + 0.5 * h);
        let (y0, y1) = (cy - 0.5 * h, cy + 0.5 * h);
        let corners = |f: fn(f64, f64) -> f64| f(x1, y1) - f(x0, y1) - f(x1, y0) + f(x0, y0);
        Complex64::new(corners(primitive_re), -corners(primitive_im)) / PI
    } else {
        let w = Complex64::new(-(a as f64) * h, -(b as f64) * h);
        w.inv() * (h * h / PI)
    }
}

/// Mixed primitive of `x/(x² + y²)`, up to terms that cancel in the corner sum.
fn primitive_re(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let log_term = if r2 > 0.0 { 0.5 * y * r2.ln() } else { 0.0 };
    let atan_term = if x != 0.0 { x * (y / x).atan() } else { 0.0 };
    log_term + atan_term
}

/// Mixed primitive of `y/(x² + y²)`.
fn primitive_im(x: f64, y: f64) -> f64 {
    primitive_re(y, x)
}

/// Particular solution `u = (1/π)∬ ω(ζ)/(z − ζ) dm(ζ)` of `∂u/∂z̄ = ω` in one variable.
pub fn cauchy_transform(omega: &FormField) -> Result<FormField> {
    let g = *omega.grid();
    if g.dim() != 1 || omega.degree() != 1 {
        return Err(Error::Shape("Cauchy transform needs a (0,1)-form in one variable".into()));
    }
    if let Some(idx) =
        (0..g.len()).find(|&i| omega.pointwise_abs(i) > 0.0 && g.boundary_distance(i) < DEFAULT_SUPPORT_MARGIN)
    {
        return Err(Error::Precondition(format!(
            "data is non-zero {} cells from the boundary (margin {DEFAULT_SUPPORT_MARGIN} required)",
            g.boundary_distance(idx)
        )));
    }
    let n = g.points_per_axis() as i64;
    let h = g.spacing();
    let span = 2 * n - 1;
    let table: Vec<Complex64> = (0..span * span)
        .map(|k| cauchy_cell_integral(k / span - (n - 1), k % span - (n - 1), h))
        .collect();
    let sources: Vec<(i64, i64, Complex64)> = (0..g.len())
        .filter(|&i| omega.pointwise_abs(i) > 0.0)
        .map(|i| {
            let m = g.multi_index(i);
            (m[0] as i64, m[1] as i64, omega.at(0, i))
        })
        .collect();
    let data: Vec<Complex64> = (0..g.len())
        .into_par_iter()
        .map(|p| {
            let m = g.multi_index(p);
            let (px, py) = (m[0] as i64, m[1] as i64);
            let terms = sources.iter().map(|&(qx, qy, w)| {
                // offset of the source cell centre from the target
                let (a, b) = (qx - px, qy - py);
                w * table[((a + n - 1) * span + (b + n - 1)) as usize]
            });
            let terms: Vec<Complex64> = terms.collect();
            Complex64::new(
                stable_sum(terms.iter().map(|t| t.re)),
                stable_sum(terms.iter().map(|t| t.im)),
            )
        })
        .collect();
    FormField::from_data(g, 0, data)
}

/// Explicit dense constraint matrix on a tiny grid, built from the stencil
/// formulas independently of the sparse table.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub grid: Grid,
    pub source_degree: usize,
    /// Interior constraint rows by original row number.
    pub rows: Vec<usize>,
    pub matrix: DMatrix<Complex64>,
    /// Full operator including the one-sided boundary rows.
    pub full: DMatrix<Complex64>,
}

/// Maximum unknowns accepted by the dense oracle.
pub const DENSE_LIMIT: usize = 1024;

fn derivative_weight(i: usize, j: usize, n: usize, h: f64) -> f64 {
    let (i, j) = (i as i64, j as i64);
    let last = n as i64 - 1;
    let c = if i == 0 {
        match j {
            0 => -3.0,
            1 => 4.0,
            2 => -1.0,
            _ => 0.0,
        }
    } else if i == last {
        match last - j {
            0 => 3.0,
            1 => -4.0,
            2 => 1.0,
            _ => 0.0,
        }
    } else if j == i + 1 {
        1.0
    } else if j == i - 1 {
        -1.0
    } else {
        0.0
    };
    c / (2.0 * h)
}

impl DenseSystem {
    pub fn new(grid: Grid, source_degree: usize) -> Result<Self> {
        let n = grid.dim();
        if source_degree >= n {
            return Err(Error::Shape(format!("no dbar from degree {source_degree} on C^{n}")));
        }
        let len = grid.len();
        let cols = grid.components(source_degree) * len;
        if cols > DENSE_LIMIT {
            return Err(Error::Precondition(format!(
                "dense oracle limited to {DENSE_LIMIT} unknowns, got {cols}"
            )));
        }
        let rows_total = grid.components(source_degree + 1) * len;
        let (np, h) = (grid.points_per_axis(), grid.spacing());
        // ∂/∂z̄_j between two points: nonzero only if they differ along axes 2j or 2j+1
        let dzbar = |j: usize, p: usize, q: usize| -> Complex64 {
            let (mp, mq) = (grid.multi_index(p), grid.multi_index(q));
            let differs: Vec<usize> = (0..grid.axes()).filter(|&a| mp[a] != mq[a]).collect();
            let along = |axis: usize| derivative_weight(mp[axis], mq[axis], np, h);
            match differs.as_slice() {
                [] => Complex64::new(0.5 * along(2 * j), 0.5 * along(2 * j + 1)),
                [a] if *a == 2 * j => Complex64::new(0.5 * along(2 * j), 0.0),
                [a] if *a == 2 * j + 1 => Complex64::new(0.0, 0.5 * along(2 * j + 1)),
                _ => Complex64::new(0.0, 0.0),
            }
        };
        let mut full = DMatrix::from_element(rows_total, cols, Complex64::new(0.0, 0.0));
        for p in 0..len {
            for q in 0..len {
                if source_degree == 0 {
                    for j in 0..n {
                        full[(j * len + p, q)] = dzbar(j, p, q);
                    }
                } else {
                    full[(p, len + q)] = dzbar(0, p, q);
                    full[(p, q)] = -dzbar(1, p, q);
                }
            }
        }
        let rows: Vec<usize> = (0..rows_total).filter(|r| grid.boundary_distance(r % len) >= 1).collect();
        let matrix = DMatrix::from_fn(rows.len(), cols, |i, j| full[(rows[i], j)]);
        Ok(Self {
            grid,
            source_degree,
            rows,
            matrix,
            full,
        })
    }

    /// `D·W_u^{-1/2}` padded with zero rows to a square matrix, so that its SVD
    /// carries a full set of right singular vectors.
    fn scaled_square(&self, w_u: &WeightedMeasure) -> DMatrix<Complex64> {
        let len = self.grid.len();
        let cols = self.matrix.ncols();
        let size = cols.max(self.matrix.nrows());
        let lw = w_u.log_weights();
        DMatrix::from_fn(size, cols, |i, j| {
            if i < self.matrix.nrows() {
                self.matrix[(i, j)] * (-0.5 * lw[j % len]).exp()
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// Dense reference for the minimal weighted-norm problem.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub u: FormField,
    /// Relative residual `‖D u − ω‖ / ‖ω‖` on the constraint rows.
    pub residual: f64,
    /// Basis of the kernel of the constraint operator.
    pub kernel: Vec<FormField>,
    pub rank: usize,
}

pub fn dense_min_norm(
    omega: &FormField,
    w_u: &WeightedMeasure,
    w_d: &WeightedMeasure,
    least_squares: bool,
) -> Result<DenseSolution> {
    let g = *omega.grid();
    if w_u.grid() != &g || w_d.grid() != &g {
        return Err(Error::Shape("weights and data live on different grids".into()));
    }
    if !w_u.is_strictly_positive() {
        return Err(Error::Config("solution weight must be strictly positive".into()));
    }
    let q = omega.degree();
    if q == 0 {
        return Err(Error::Shape("data must have degree >= 1".into()));
    }
    let sys = DenseSystem::new(g, q - 1)?;
    let m = sys.scaled_square(w_u);
    let svd = m.clone().svd(true, true);
    let sv_max = svd.singular_values.max();
    let tol = sv_max * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < sys.rows.len() && !least_squares {
        return Err(Error::Oracle(format!(
            "constraint operator has rank {rank} < {} rows",
            sys.rows.len()
        )));
    }
    let rhs = DVector::from_fn(m.nrows(), |i, _| {
        if i < sys.rows.len() {
            omega.data()[sys.rows[i]]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let x = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::Oracle(format!("pseudo-inverse failed: {e}")))?;
    let len = g.len();
    let lw = w_u.log_weights();
    let u_data: Vec<Complex64> = x.iter().enumerate().map(|(j, v)| v * (-0.5 * lw[j % len]).exp()).collect();
    let u = FormField::from_data(g, q - 1, u_data)?;

    let du = &sys.matrix * DVector::from_column_slice(u.data());
    let rhs_rows = DVector::from_fn(sys.rows.len(), |i, _| omega.data()[sys.rows[i]]);
    let residual = if rhs_rows.norm() == 0.0 {
        (&du).norm()
    } else {
        (&du - &rhs_rows).norm() / rhs_rows.norm()
    };

    // kernel of the unscaled operator: right singular vectors with zero singular value
    let d_square = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i < sys.matrix.nrows() {
            sys.matrix[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let dsvd = d_square.svd(false, true);
    let v_t = dsvd.v_t.ok_or_else(|| Error::Oracle("SVD returned no right vectors".into()))?;
    let dtol = dsvd.singular_values.max() * (m.nrows() as f64) * f64::EPSILON * 16.0;
    let kernel = dsvd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= dtol)
        .map(|(k, _)| {
            let data: Vec<Complex64> = v_t.row(k).iter().map(|c| c.conj()).collect();
            FormField::from_data(g, q - 1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseSolution {
        u,
        residual,
        kernel,
        rank,
    })
}

/// Largest relative error of central differences against the closed-form
/// `∂φ/∂z̄_j` and complex Hessian `∂²φ/∂z_i∂z̄_j`.
///
/// The gradient is differenced from values; the Hessian from the closed-form
/// gradient, which avoids the `ε/step²` cancellation of second differences.
pub fn fd_derivative_check(w: &WeightSpec, points: &[Point], step: f64) -> Result<f64> {
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::Precondition(format!("step {step} outside [1e-6, 1e-2]")));
    }
    let n = w.dim();
    let shift = |z: &Point, axis: usize, by: f64| -> Point {
        let j = axis / 2;
        let delta = if axis % 2 == 0 { Complex64::new(by, 0.0) } else { Complex64::new(0.0, by) };
        z.with_coord(j, z.coords()[j] + delta)
    };
    let rel = |fd: Complex64, exact: Complex64| (fd - exact).norm() / exact.norm().max(1.0);
    let mut worst: f64 = 0.0;
    for z in points {
        let grad = w.gradient(z);
        let hess = w.hessian(z);
        for j in 0..n {
            let d = |axis: usize| (w.value(&shift(z, axis, step)) - w.value(&shift(z, axis, -step))) / (2.0 * step);
            let fd = Complex64::new(0.5 * d(2 * j), 0.5 * d(2 * j + 1));
            worst = worst.max(rel(fd, grad[j]));
        }
        for i in 0..n {
            // ∂/∂z_i = ½(∂/∂x_i − i∂/∂y_i) applied to ∂φ/∂z̄_j
            let dg = |axis: usize| -> Vec<Complex64> {
                let (plus, minus) = (w.gradient(&shift(z, axis, step)), w.gradient(&shift(z, axis, -step)));
                plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * step)).collect()
            };
            let (gx, gy) = (dg(2 * i), dg(2 * i + 1));
            for j in 0..n {
                let fd = (gx[j] - Complex64::new(0.0, 1.0) * gy[j]) * 0.5;
                worst = worst.max(rel(fd, hess.get(i, j)));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DbarOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn singular_cell_integrals() {
        let h = 0.2;
        // the centre cell is symmetric under z -> -z
        assert!(cauchy_cell_integral(0, 0, h).norm() < 1e-15);
        // neighbours against a fine midpoint rule
        for (a, b) in [(1, 0), (0, -1), (1, 1), (-1, 1)] {
            let m = 400;
            let sub = h / m as f64;
            let mut acc = c(0.0, 0.0);
            for s in 0..m {
                for t in 0..m {
                    let x = -(a as f64) * h - 0.5 * h + (s as f64 + 0.5) * sub;
                    let y = -(b as f64) * h - 0.5 * h + (t as f64 + 0.5) * sub;
                    acc += c(x, y).inv() * sub * sub;
                }
            }
            let exact = cauchy_cell_integral(a, b, h);
            assert!((acc / PI - exact).norm() < 1e-5 * exact.norm(), "{a} {b}: {acc} {exact}");
        }
    }

    #[test]
    fn zero_data_transforms_to_zero() {
        let g = Grid::new(1, 3.0, 32).unwrap();
        assert!(cauchy_transform(&FormField::zeros(g, 1).unwrap()).unwrap().is_zero());
    }

    #[test]
    fn boundary_support_is_rejected() {
        let g = Grid::new(1, 3.0, 32).unwrap();
        let omega = FormField::from_fn(g, 1, |_, _| c(1.0, 0.0)).unwrap();
        assert!(matches!(cauchy_transform(&omega), Err(Error::Precondition(_))));
    }

    #[test]
    fn far_field_of_unit_mass() {
        let g = Grid::new(1, 5.0, 128).unwrap();
        let bump = |p: &Point| {
            let r2 = p.norm_sqr();
            if r2 < 0.25 {
                (1.0 - r2 / 0.25).powi(3)
            } else {
                0.0
            }
        };
        let mass = stable_sum((0..g.len()).map(|i| bump(&g.point(i)))) * g.cell_measure();
        let omega = FormField::from_fn(g, 1, |_, p| c(bump(p) / mass, 0.0)).unwrap();
        let u = cauchy_transform(&omega).unwrap();
        let mut checked = 0;
        for i in 0..g.len() {
            let z = g.point(i).coords()[0];
            if (z.norm() - 4.0).abs() < 0.5 * g.spacing() {
                let expected = (z * PI).inv();
                assert!((u.at(0, i) - expected).norm() <= 1e-2 * expected.norm());
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn translation_covariance() {
        let g = Grid::new(1, 4.0, 64).unwrap();
        let shape = |p: &Point, cx: f64| {
            let z = p.coords()[0] - c(cx, 0.0);
            let r2 = z.norm_sqr();
            if r2 < 1.0 {
                c((1.0 - r2).powi(3), z.im)
            } else {
                c(0.0, 0.0)
            }
        };
        let shift_cells = 4;
        let dx = shift_cells as f64 * g.spacing();
        let a = cauchy_transform(&FormField::from_fn(g, 1, |_, p| shape(p, 0.0)).unwrap()).unwrap();
        let b = cauchy_transform(&FormField::from_fn(g, 1, |_, p| shape(p, dx)).unwrap()).unwrap();
        let n = g.points_per_axis();
        let mut worst: f64 = 0.0;
        for ix in 0..n - shift_cells {
            for iy in 0..n {
                let va = a.at(0, g.flat_index(&[ix, iy]));
                let vb = b.at(0, g.flat_index(&[ix + shift_cells, iy]));
                worst = worst.max((va - vb).norm());
            }
        }
        assert!(worst <= 1e-14 * a.max_abs(), "{worst}");
    }

    #[test]
    fn dense_matches_sparse_entrywise() {
        for (n, pts) in [(1, 12), (2, 4 + 4)] {
            let g = Grid::new(n, 1.5, pts).unwrap();
            for q in 0..n {
                let cols = g.components(q) * g.len();
                if cols > DENSE_LIMIT {
                    continue;
                }
                let dense = DenseSystem::new(g, q).unwrap();
                let sparse = DbarOperator::new(g, q).unwrap().matrix().to_dense();
                let diff = (&dense.full - &sparse).iter().map(|v| v.norm()).fold(0.0, f64::max);
                assert!(diff <= 1e-15, "n={n} q={q}: {diff}");
            }
        }
    }

    #[test]
    fn dense_oracle_self_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(1, 2.0, 12).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let v = FormField::from_fn(g, 0, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .unwrap()
            .restrict(&crate::grid::RegionMask::interior(&g, 2));
        let omega = op.apply(&v).unwrap();
        let phi = WeightSpec::gaussian(1.0, 1).unwrap();
        let w_u = WeightedMeasure::c_exp_weight(g, &phi).unwrap();
        let w_d = WeightedMeasure::exp_weight(g, &phi).unwrap();
        let s = dense_min_norm(&omega, &w_u, &w_d, false).unwrap();
        assert!(s.residual <= 1e-12, "{}", s.residual);
        assert_eq!(s.kernel.len(), g.len() - 100);

        // global rescaling of the objective leaves the argmin unchanged
        let doubled = WeightedMeasure::from_log(g, w_u.log_weights().iter().map(|l| l + 2f64.ln()).collect()).unwrap();
        let t = dense_min_norm(&omega, &doubled, &w_d, false).unwrap();
        let diff = t.u.sub(&s.u).unwrap().l2_norm();
        assert!(diff <= 1e-10 * s.u.l2_norm());

        let zero = dense_min_norm(&FormField::zeros(g, 1).unwrap(), &w_u, &w_d, false).unwrap();
        assert!(zero.u.max_abs() == 0.0);
    }

    #[test]
    fn fd_checks_on_catalog() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts1: Vec<Point> = (0..100).map(|_| Point::new(&[c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))])).collect();
        let pts2: Vec<Point> = (0..100)
            .map(|_| {
                Point::new(&[
                    c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                    c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                ])
            })
            .collect();
        let gauss = WeightSpec::gaussian(1.0, 1).unwrap();
        assert!(fd_derivative_check(&gauss, &pts1, 1e-4).unwrap() <= 1e-8);
        let aniso = WeightSpec::from_catalog("anisotropic-gaussian", &[1.0, 3.0], 2).unwrap();
        assert!(fd_derivative_check(&aniso, &pts2, 1e-4).unwrap() <= 1e-8);
        let quartic = WeightSpec::from_catalog("radial-quartic", &[0.0, 1.0], 1).unwrap();
        // the cubic gradient leaves a 2·step² truncation term at the origin
        assert!(fd_derivative_check(&quartic, &[Point::origin(1)], 1e-5).unwrap() <= 1e-8);
        let quartic2 = WeightSpec::from_catalog("radial-quartic", &[0.5, 1.0], 2).unwrap();
        assert!(fd_derivative_check(&quartic2, &pts2, 1e-4).unwrap() <= 1e-5);
        assert!(fd_derivative_check(&gauss, &pts1, 1.0).is_err());
    }
}
