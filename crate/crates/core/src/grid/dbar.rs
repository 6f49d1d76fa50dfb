use num_complex::Complex64;

use super::{CsrMatrix, FormField, Grid, WeightedMeasure};
use crate::error::{Error, Result};

/// Second-order first-derivative stencil along one axis at index `i`:
/// centred inside, one-sided `(∓3, ±4, ∓1)/2h` on the two boundary layers.
pub fn axis_stencil(i: usize, n: usize, h: f64) -> Vec<(usize, f64)> {
    let inv = 1.0 / (2.0 * h);
    if i == 0 {
        vec![(0, -3.0 * inv), (1, 4.0 * inv), (2, -inv)]
    } else if i == n - 1 {
        vec![(n - 3, inv), (n - 2, -4.0 * inv), (n - 1, 3.0 * inv)]
    } else {
        vec![(i - 1, -inv), (i + 1, inv)]
    }
}

/// Discrete `∂̄` from `(0,q-1)`-forms to `(0,q)`-forms as a sparse table.
#[derive(Debug, Clone)]
pub struct DbarOperator {
    grid: Grid,
    source_degree: usize,
    matrix: CsrMatrix,
}

impl DbarOperator {
    pub fn new(grid: Grid, source_degree: usize) -> Result<Self> {
        let n = grid.dim();
        if source_degree >= n {
            return Err(Error::Shape(format!(
                "no dbar from degree {source_degree} on C^{n}"
            )));
        }
        let len = grid.len();
        let mut triplets = Vec::new();
        match source_degree {
            0 => {
                for j in 0..n {
                    for p in 0..len {
                        for (col, v) in dzbar_stencil(&grid, j, p) {
                            triplets.push((j * len + p, col, v));
                        }
                    }
                }
            }
            _ => {
                // (∂̄ω)_{1̄2̄} = ∂_{z̄1} ω_{2̄} − ∂_{z̄2} ω_{1̄}
                for p in 0..len {
                    for (col, v) in dzbar_stencil(&grid, 0, p) {
                        triplets.push((p, len + col, v));
                    }
                    for (col, v) in dzbar_stencil(&grid, 1, p) {
                        triplets.push((p, col, -v));
                    }
                }
            }
        }
        let rows = grid.components(source_degree + 1) * len;
        let cols = grid.components(source_degree) * len;
        Ok(Self {
            grid,
            source_degree,
            matrix: CsrMatrix::from_triplets(rows, cols, triplets),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn source_degree(&self) -> usize {
        self.source_degree
    }

    pub fn target_degree(&self) -> usize {
        self.source_degree + 1
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn check_source(&self, f: &FormField) -> Result<()> {
        if f.grid() != &self.grid || f.degree() != self.source_degree {
            return Err(Error::Shape(format!(
                "dbar from degree {} applied to a degree {} field",
                self.source_degree,
                f.degree()
            )));
        }
        Ok(())
    }

    fn check_target(&self, g: &FormField) -> Result<()> {
        if g.grid() != &self.grid || g.degree() != self.target_degree() {
            return Err(Error::Shape(format!(
                "expected a degree {} field, got degree {}",
                self.target_degree(),
                g.degree()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, f: &FormField) -> Result<FormField> {
        self.check_source(f)?;
        FormField::from_data(self.grid, self.target_degree(), self.matrix.matvec(f.data()))
    }

    /// Bilinear transpose `D^T`, so that `⟨D f, g⟩ = ⟨f, D^T g⟩` without conjugation.
    pub fn transpose_apply(&self, g: &FormField) -> Result<FormField> {
        self.check_target(g)?;
        let t = self.matrix.transpose();
        FormField::from_data(self.grid, self.source_degree, t.matvec(g.data()))
    }

    /// Adjoint between weighted spaces: `D* = W_s^{-1} D^H W_t`.
    pub fn adjoint_apply(
        &self,
        g: &FormField,
        source: &WeightedMeasure,
        target: &WeightedMeasure,
    ) -> Result<FormField> {
        self.check_target(g)?;
        let len = self.grid.len();
        let lt = target.log_weights();
        let ls = source.log_weights();
        let scaled: Vec<Complex64> = g
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| v * lt[k % len].exp())
            .collect();
        let back = self.matrix.conj_transpose().matvec(&scaled);
        let data = back
            .iter()
            .enumerate()
            .map(|(k, v)| v * (-ls[k % len]).exp())
            .collect();
        FormField::from_data(self.grid, self.source_degree, data)
    }

    /// Points where every stencil of every target component is centred.
    pub fn is_interior(&self, idx: usize) -> bool {
        self.grid.boundary_distance(idx) >= 1
    }

    /// Rows at interior points only, with their original row numbers.
    ///
    /// The one-sided boundary rows couple the four parity sublattices of the
    /// centred stencil only weakly, which leaves a cluster of tiny singular
    /// values; constraint systems use these rows instead.
    pub fn interior_rows(&self) -> (CsrMatrix, Vec<usize>) {
        let len = self.grid.len();
        self.matrix.select_rows(|r| self.is_interior(r % len))
    }
}

/// Entries `(column point, coefficient)` of `∂/∂z̄_j = ½(∂/∂x_j + i∂/∂y_j)` at point `p`.
fn dzbar_stencil(grid: &Grid, j: usize, p: usize) -> Vec<(usize, Complex64)> {
    let m = grid.multi_index(p);
    let h = grid.spacing();
    let n = grid.points_per_axis();
    let mut out = Vec::with_capacity(6);
    for (axis, factor) in [(2 * j, Complex64::new(0.5, 0.0)), (2 * j + 1, Complex64::new(0.0, 0.5))] {
        let stride = grid.stride(axis);
        let base = p - m[axis] * stride;
        for (t, c) in axis_stencil(m[axis], n, h) {
            out.push((base + t * stride, factor * c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RegionMask;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn interior_max(f: &FormField, exact: impl Fn(usize) -> Complex64, margin: usize) -> f64 {
        let g = f.grid();
        (0..g.len())
            .filter(|&i| g.boundary_distance(i) >= margin)
            .map(|i| (f.at(0, i) - exact(i)).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zbar_and_z() {
        let g = Grid::new(1, 3.0, 16).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let zbar = FormField::from_fn(g, 0, |_, p| p.coords()[0].conj()).unwrap();
        let z = FormField::from_fn(g, 0, |_, p| p.coords()[0]).unwrap();
        assert!(interior_max(&op.apply(&zbar).unwrap(), |_| c(1.0, 0.0), 1) < 1e-13);
        // second-order one-sided stencils are exact on linear data, boundary included
        assert!(interior_max(&op.apply(&z).unwrap(), |_| c(0.0, 0.0), 0) < 1e-13);
    }

    fn gaussian_error(n_pts: usize) -> f64 {
        let g = Grid::new(1, 5.0, n_pts).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let u = FormField::from_fn(g, 0, |_, p| c((-p.norm_sqr()).exp(), 0.0)).unwrap();
        let du = op.apply(&u).unwrap();
        interior_max(&du, |i| {
            let p = g.point(i);
            -p.coords()[0] * (-p.norm_sqr()).exp()
        }, 1)
    }

    #[test]
    fn gaussian_derivative_second_order() {
        let e128 = gaussian_error(128);
        let e256 = gaussian_error(256);
        assert!(e128 <= 0.01, "{e128}");
        assert!(e128 / e256 >= 3.5, "{e128} {e256}");
    }

    #[test]
    fn wrong_degree_is_shape_error() {
        let g = Grid::new(2, 2.0, 8).unwrap();
        let op = DbarOperator::new(g, 1).unwrap();
        let f = FormField::zeros(g, 0).unwrap();
        assert!(matches!(op.apply(&f), Err(Error::Shape(_))));
        assert!(DbarOperator::new(Grid::new(1, 2.0, 8).unwrap(), 1).is_err());
    }

    #[test]
    fn dbar_squared_vanishes() {
        let g = Grid::new(2, 2.0, 8).unwrap();
        let d0 = DbarOperator::new(g, 0).unwrap();
        let d1 = DbarOperator::new(g, 1).unwrap();
        let comp = d1.matrix().matmul(d0.matrix());
        let worst = comp.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-14, "{worst}");
    }

    #[test]
    fn weighted_adjoint_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2] {
            let g = Grid::new(n, 2.0, 8).unwrap();
            let interior = RegionMask::interior(&g, 2);
            let w = WeightedMeasure::from_log_fn(g, |p| 0.7 * p.norm_sqr()).unwrap();
            for q in 0..n {
                let op = DbarOperator::new(g, q).unwrap();
                let mut rand_field = |deg: usize| {
                    FormField::from_fn(g, deg, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .unwrap()
                        .restrict(&interior)
                };
                let f = rand_field(q);
                let h = rand_field(q + 1);
                let lhs = w.inner(&op.apply(&f).unwrap(), &h).unwrap();
                let rhs = w.inner(&f, &op.adjoint_apply(&h, &w, &w).unwrap()).unwrap();
                assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0), "{lhs} {rhs}");
            }
        }
    }

    #[test]
    fn bilinear_transpose_pairs() {
        let g = Grid::new(1, 2.0, 8).unwrap();
        let op = DbarOperator::new(g, 0).unwrap();
        let f = FormField::from_fn(g, 0, |_, p| p.coords()[0] * p.coords()[0].conj()).unwrap();
        let h = FormField::from_fn(g, 1, |_, p| c(p.norm_sqr().sin(), 1.0)).unwrap();
        let lhs = op.apply(&f).unwrap().bilinear_pairing(&h).unwrap();
        let rhs = f.bilinear_pairing(&op.transpose_apply(&h).unwrap()).unwrap();
        let scale = op.apply(&f).unwrap().l2_norm() * h.l2_norm();
        assert!((lhs - rhs).norm() < 1e-12 * scale, "{lhs} {rhs}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dbar_is_linear(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(2, 2.0, 8).unwrap();
            let op = DbarOperator::new(g, 0).unwrap();
            let mut draw = || FormField::from_fn(g, 0, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
            let (f, h) = (draw(), draw());
            let alpha = c(re, im);
            let lhs = op.apply(&f.scale(alpha).add(&h).unwrap()).unwrap();
            let rhs = op.apply(&f).unwrap().scale(alpha).add(&op.apply(&h).unwrap()).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().l2_norm() <= 1e-12 * rhs.l2_norm().max(1.0));
        }

        #[test]
        fn adjoint_matches_under_random_weights(seed in any::<u64>(), a in 0.0f64..2.0, b in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(1, 2.0, 12).unwrap();
            let interior = RegionMask::interior(&g, 2);
            let w = WeightedMeasure::from_log_fn(g, |p| a * p.norm_sqr() + b * p.coords()[0].re).unwrap();
            let op = DbarOperator::new(g, 0).unwrap();
            let mut draw = |deg: usize| {
                FormField::from_fn(g, deg, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .unwrap()
                    .restrict(&interior)
            };
            let (f, h) = (draw(0), draw(1));
            let lhs = w.inner(&op.apply(&f).unwrap(), &h).unwrap();
            let rhs = w.inner(&f, &op.adjoint_apply(&h, &w, &w).unwrap()).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }
    }
}
